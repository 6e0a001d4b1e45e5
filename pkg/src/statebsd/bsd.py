"""Binary speculation diagrams.

A diagram is a rooted DAG of *decision* nodes (test one input bit, go to
``lo``/``hi``) and *speculation* leaves that stand in for whatever
sub-function remains with a constant guess. Training starts from a single
leaf and repeatedly splits one leaf on one input variable (Shannon
expansion), giving each child the majority output of the examples that
reach it. On a fixed example multiset a split can never lower accuracy,
and splitting on every variable along every path reproduces any
consistent example set exactly.

Inputs are integers whose bit ``i`` is variable ``x_i``. Node references
are indices into the ``nodes`` arena; the root is always node 0.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .errors import (
    BudgetExhausted,
    EmptyExamples,
    MalformedArtifact,
    NotALeaf,
    VarAlreadyUsed,
    WidthMismatch,
)


@dataclass(frozen=True)
class Decision:
    var: int
    lo: int
    hi: int


@dataclass(frozen=True)
class Speculation:
    guess: int
    abstain: bool = False
    # (examples reaching the leaf, examples agreeing with the guess)
    support: tuple[int, int] = field(default=(0, 0), compare=False)

    @property
    def pure(self) -> bool:
        n, hit = self.support
        return n > 0 and hit == n


Node = Union[Decision, Speculation]


def as_int(x, width: int | None = None) -> int:
    """Accept an int or a bit sequence ``(x0, x1, ...)``."""
    if isinstance(x, (int, np.integer)):
        v = int(x)
        if v < 0 or (width is not None and v >> width):
            raise WidthMismatch(f"input {v} does not fit in {width} bits")
        return v
    bits = list(x)
    if width is not None and len(bits) != width:
        raise WidthMismatch(f"got {len(bits)} bits, diagram takes {width}")
    return sum((int(b) & 1) << i for i, b in enumerate(bits))


@dataclass(frozen=True, eq=False)
class ExampleSet:
    """Multiset of (input, output bit) rows over ``width`` variables."""

    inputs: np.ndarray
    outputs: np.ndarray
    width: int

    def __post_init__(self):
        xs = np.asarray(self.inputs, dtype=np.int64).reshape(-1)
        ys = np.asarray(self.outputs, dtype=np.int8).reshape(-1)
        if xs.shape != ys.shape:
            raise WidthMismatch("inputs and outputs differ in length")
        if xs.size and (xs.min() < 0 or xs.max() >> self.width):
            raise WidthMismatch(f"inputs do not fit in {self.width} bits")
        if ys.size and not np.isin(ys, (0, 1)).all():
            raise ValueError("outputs must be 0 or 1")
        object.__setattr__(self, "inputs", xs)
        object.__setattr__(self, "outputs", ys)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[object, int]], width: int) -> "ExampleSet":
        rows = list(rows)
        xs = [as_int(x, width) for x, _ in rows]
        return cls(np.array(xs, dtype=np.int64), np.array([y for _, y in rows], dtype=np.int8), width)

    @classmethod
    def exhaustive(cls, fn: Callable[[int], int], width: int) -> "ExampleSet":
        xs = np.arange(1 << width, dtype=np.int64)
        return cls(xs, np.array([fn(int(x)) & 1 for x in xs], dtype=np.int8), width)

    @classmethod
    def from_truth_table(cls, table: Sequence[int], width: int) -> "ExampleSet":
        if len(table) != 1 << width:
            raise WidthMismatch("truth table length must be 2**width")
        return cls(np.arange(1 << width, dtype=np.int64), np.asarray(table, dtype=np.int8), width)

    def __len__(self):
        return int(self.inputs.size)

    def consistent(self) -> bool:
        """No input appears with both outputs."""
        if not len(self):
            return True
        keyed = self.inputs * 2 + self.outputs
        return np.unique(keyed).size == np.unique(self.inputs).size


@dataclass(frozen=True, eq=False)
class Bsd:
    nodes: tuple[Node, ...]
    input_width: int
    root: int = 0
    expansion_log: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    def __eq__(self, other):
        if not isinstance(other, Bsd):
            return NotImplemented
        return (self.nodes, self.input_width, self.root) == (other.nodes, other.input_width, other.root)

    __hash__ = None

    @property
    def decision_count(self) -> int:
        return sum(isinstance(n, Decision) for n in self.nodes)

    def leaves(self) -> list[int]:
        return [k for k, n in enumerate(self.nodes) if isinstance(n, Speculation)]

    def path_vars(self, ref: int) -> frozenset[int]:
        """Variables decided on any root-to-``ref`` path."""
        seen: dict[int, frozenset[int]] = {}
        out: set[int] = set()
        stack = [(self.root, frozenset())]
        while stack:
            k, vs = stack.pop()
            if k == ref:
                out |= vs
                continue
            node = self.nodes[k]
            if isinstance(node, Decision):
                nv = vs | {node.var}
                if seen.get(k) == nv:
                    continue
                seen[k] = nv
                stack.append((node.lo, nv))
                stack.append((node.hi, nv))
        return frozenset(out)

    def with_leaf(self, ref: int, leaf: Speculation) -> "Bsd":
        nodes = list(self.nodes)
        nodes[ref] = leaf
        return replace(self, nodes=tuple(nodes))

    def _arrays(self):
        cache = self.__dict__.get("_compiled")
        if cache is None:
            n = len(self.nodes)
            var = np.zeros(n, dtype=np.int64)
            lo = np.arange(n, dtype=np.int64)
            hi = np.arange(n, dtype=np.int64)
            leaf = np.ones(n, dtype=bool)
            for k, node in enumerate(self.nodes):
                if isinstance(node, Decision):
                    var[k], lo[k], hi[k], leaf[k] = node.var, node.lo, node.hi, False
            cache = (var, lo, hi, leaf)
            object.__setattr__(self, "_compiled", cache)
        return cache

    def route(self, xs) -> np.ndarray:
        """Vectorised walk: the leaf reached by each input in ``xs``."""
        xs = np.asarray(xs, dtype=np.int64)
        var, lo, hi, leaf = self._arrays()
        at = np.full(xs.shape, self.root, dtype=np.int64)
        active = ~leaf[at]
        while active.any():
            idx = np.nonzero(active)[0]
            cur = at[idx]
            bit = (xs[idx] >> var[cur]) & 1
            at[idx] = np.where(bit == 1, hi[cur], lo[cur])
            active[idx] = ~leaf[at[idx]]
        return at

    def guesses(self) -> np.ndarray:
        return np.array([n.guess if isinstance(n, Speculation) else 0 for n in self.nodes], dtype=np.int8)

    def abstains(self) -> np.ndarray:
        return np.array([n.abstain if isinstance(n, Speculation) else False for n in self.nodes], dtype=bool)


def _check_examples(examples: ExampleSet, width: int | None = None):
    if not len(examples):
        raise EmptyExamples("example set is empty")
    if width is not None and examples.width != width:
        raise WidthMismatch(f"examples have width {examples.width}, diagram has {width}")


def _majority(ys: np.ndarray, default: int) -> tuple[int, tuple[int, int]]:
    n = int(ys.size)
    if n == 0:
        return default, (0, 0)
    ones = int(ys.sum())
    g = 1 if ones > n - ones else 0
    return g, (n, ones if g else n - ones)


def new_root(examples: ExampleSet) -> Bsd:
    _check_examples(examples)
    g, sup = _majority(examples.outputs, 0)
    return Bsd((Speculation(g, False, sup),), examples.width)


def evaluate(b: Bsd, x) -> tuple[int, int]:
    v = as_int(x, b.input_width)
    if v >> b.input_width:
        raise WidthMismatch(f"input {v} wider than {b.input_width} bits")
    k = b.root
    node = b.nodes[k]
    while isinstance(node, Decision):
        k = node.hi if (v >> node.var) & 1 else node.lo
        node = b.nodes[k]
    return node.guess, k


def predict_many(b: Bsd, xs) -> np.ndarray:
    return b.guesses()[b.route(xs)]


def accuracy(b: Bsd, eval_set: ExampleSet) -> Fraction:
    _check_examples(eval_set, b.input_width)
    hits = int((predict_many(b, eval_set.inputs) == eval_set.outputs).sum())
    return Fraction(hits, len(eval_set))


def expand(b: Bsd, leaf: int, var: int, examples: ExampleSet) -> Bsd:
    """Replace speculation ``leaf`` by a decision on ``var`` with two fresh leaves."""
    if examples.width != b.input_width:
        raise WidthMismatch("example width differs from diagram width")
    if not 0 <= leaf < len(b.nodes) or not isinstance(b.nodes[leaf], Speculation):
        raise NotALeaf(f"node {leaf} is not a speculation leaf")
    if not 0 <= var < b.input_width:
        raise WidthMismatch(f"variable {var} outside width {b.input_width}")
    if var in b.path_vars(leaf):
        raise VarAlreadyUsed(f"x{var} already decided above node {leaf}")
    parent = b.nodes[leaf]
    at = b.route(examples.inputs)
    mask = at == leaf
    xs, ys = examples.inputs[mask], examples.outputs[mask]
    hi_mask = ((xs >> var) & 1) == 1
    lo_g, lo_s = _majority(ys[~hi_mask], parent.guess)
    hi_g, hi_s = _majority(ys[hi_mask], parent.guess)
    n = len(b.nodes)
    nodes = list(b.nodes)
    nodes[leaf] = Decision(var, n, n + 1)
    nodes.append(Speculation(lo_g, False, lo_s))
    nodes.append(Speculation(hi_g, False, hi_s))
    return Bsd(tuple(nodes), b.input_width, b.root, b.expansion_log + ((leaf, var),))


def _split_gains(xs: np.ndarray, ys: np.ndarray, guess: int, free: Sequence[int]) -> np.ndarray:
    """Exact match-count gain of splitting one leaf on each variable in ``free``."""
    n = ys.size
    ones = int(ys.sum())
    current = ones if guess else n - ones
    vars_ = np.asarray(free, dtype=np.int64)
    bits = (xs[:, None] >> vars_[None, :]) & 1
    n_hi = bits.sum(axis=0)
    one_hi = (bits * ys[:, None].astype(np.int64)).sum(axis=0)
    n_lo, one_lo = n - n_hi, ones - one_hi
    after = np.maximum(one_hi, n_hi - one_hi) + np.maximum(one_lo, n_lo - one_lo)
    return after - current


def choose_expansion(b: Bsd, examples: ExampleSet) -> tuple[int, int] | None:
    """Greedy pick: the (impure leaf, unused var) pair with the largest accuracy gain.

    Ties go to the lowest leaf id, then the lowest variable.
    """
    if not len(examples):
        return None
    at = b.route(examples.inputs)
    best = None
    for leaf in b.leaves():
        mask = at == leaf
        ys = examples.outputs[mask]
        if ys.size == 0 or ys.min() == ys.max():
            continue
        free = [v for v in range(b.input_width) if v not in b.path_vars(leaf)]
        if not free:
            continue
        gains = _split_gains(examples.inputs[mask], ys, b.nodes[leaf].guess, free)
        j = int(np.argmax(gains))
        cand = (int(gains[j]), leaf, free[j])
        if best is None or cand[0] > best[0]:
            best = cand
    return None if best is None else (best[1], best[2])


def train(examples: ExampleSet, target_accuracy: Fraction | float = 1, max_nodes: int = 10_000) -> Bsd:
    """Grow a diagram by greedy expansion until it reaches ``target_accuracy``.

    ``max_nodes`` bounds the number of decision nodes. Stops early (without
    error) once no leaf can be usefully split; raises ``BudgetExhausted``
    carrying the best diagram when the budget runs out first.

    Equivalent to looping ``choose_expansion``/``expand`` but keeps each
    leaf's row set and best split cached, so every step costs only the
    two new leaves.
    """
    _check_examples(examples)
    target = Fraction(target_accuracy).limit_denominator(10**9) if isinstance(target_accuracy, float) else Fraction(target_accuracy)
    if not 0 < target <= 1:
        raise ValueError("target_accuracy must be in (0, 1]")
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    xs, ys = examples.inputs, examples.outputs
    width = examples.width
    total = len(examples)
    g, sup = _majority(ys, 0)
    nodes: list[Node] = [Speculation(g, False, sup)]
    rows = {0: np.arange(total)}
    used = {0: frozenset()}
    hits = sup[1]
    log: list[tuple[int, int]] = []
    heap: list[tuple[int, int, int]] = []

    def consider(leaf: int):
        r = rows[leaf]
        ly = ys[r]
        if ly.size == 0 or ly.min() == ly.max():
            return
        free = [v for v in range(width) if v not in used[leaf]]
        if not free:
            return
        gains = _split_gains(xs[r], ly, nodes[leaf].guess, free)
        j = int(np.argmax(gains))
        heapq.heappush(heap, (-int(gains[j]), leaf, free[j]))

    def snapshot() -> Bsd:
        return Bsd(tuple(nodes), width, 0, tuple(log))

    consider(0)
    decisions = 0
    while Fraction(hits, total) < target and heap:
        if decisions >= max_nodes:
            raise BudgetExhausted(
                f"accuracy {float(Fraction(hits, total)):.4f} after {decisions} decisions", snapshot()
            )
        neg_gain, leaf, var = heapq.heappop(heap)
        r = rows.pop(leaf)
        hi_mask = ((xs[r] >> var) & 1) == 1
        parent = nodes[leaf]
        n = len(nodes)
        nodes[leaf] = Decision(var, n, n + 1)
        for child, part in ((n, r[~hi_mask]), (n + 1, r[hi_mask])):
            cg, cs = _majority(ys[part], parent.guess)
            nodes.append(Speculation(cg, False, cs))
            rows[child] = part
            used[child] = used[leaf] | {var}
        hits += -neg_gain
        decisions += 1
        log.append((leaf, var))
        consider(n)
        consider(n + 1)
    return snapshot()


# -- netlist export ---------------------------------------------------------


@dataclass(frozen=True)
class Netlist:
    """Mux-tree netlist: gate ``k`` drives net ``k``.

    Gates are ``("const", value)`` or ``("mux", select_input, lo_net, hi_net)``.
    """

    inputs: int
    gates: tuple[tuple, ...]
    output: int

    @property
    def mux_count(self) -> int:
        return sum(g[0] == "mux" for g in self.gates)

    def simulate(self, x) -> int:
        v = as_int(x, self.inputs)
        vals: list[int] = []
        for g in self.gates:
            if g[0] == "const":
                vals.append(g[1])
            else:
                vals.append(vals[g[3]] if (v >> g[1]) & 1 else vals[g[2]])
        return vals[self.output]

    def simulate_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        vals: list[np.ndarray] = []
        for g in self.gates:
            if g[0] == "const":
                vals.append(np.full(xs.shape, g[1], dtype=np.int8))
            else:
                vals.append(np.where(((xs >> g[1]) & 1) == 1, vals[g[3]], vals[g[2]]))
        return vals[self.output]

    def to_blif(self, model: str = "bsd") -> str:
        lines = [f".model {model}", ".inputs " + " ".join(f"x{i}" for i in range(self.inputs)), ".outputs y"]
        for k, g in enumerate(self.gates):
            if g[0] == "const":
                lines.append(f".names n{k}")
                if g[1]:
                    lines.append("1")
            else:
                lines.append(f".names x{g[1]} n{g[2]} n{g[3]} n{k}")
                lines += ["01- 1", "1-1 1"]
        lines += [f".names n{self.output} y", "1 1", ".end"]
        return "\n".join(lines) + "\n"


def to_netlist(b: Bsd) -> Netlist:
    gates: list[tuple] = []
    net: dict[int, int] = {}
    stack = [(b.root, False)]
    while stack:
        k, ready = stack.pop()
        if k in net:
            continue
        node = b.nodes[k]
        if isinstance(node, Speculation):
            net[k] = len(gates)
            gates.append(("const", node.guess))
        elif ready:
            net[k] = len(gates)
            gates.append(("mux", node.var, net[node.lo], net[node.hi]))
        else:
            stack.append((k, True))
            stack.append((node.hi, False))
            stack.append((node.lo, False))
    return Netlist(b.input_width, tuple(gates), net[b.root])


# -- artifact I/O -------------------------------------------------------------


def to_json(b: Bsd) -> dict:
    nodes = []
    for n in b.nodes:
        if isinstance(n, Decision):
            nodes.append({"t": "d", "v": n.var, "lo": n.lo, "hi": n.hi})
        else:
            nodes.append({"t": "s", "g": n.guess, "a": n.abstain})
    return {"width": b.input_width, "root": b.root, "nodes": nodes}


def from_json(d: dict) -> Bsd:
    try:
        width, root, raw = d["width"], d["root"], d["nodes"]
    except (KeyError, TypeError) as exc:
        raise MalformedArtifact(f"missing key: {exc}") from None
    if not isinstance(width, int) or width < 0:
        raise MalformedArtifact(f"bad width {width!r}")
    if root != 0 or not isinstance(raw, list) or not raw:
        raise MalformedArtifact("root must be 0 and nodes non-empty")
    n = len(raw)
    nodes: list[Node] = []
    for k, item in enumerate(raw):
        tag = item.get("t") if isinstance(item, dict) else None
        if tag == "d":
            var, lo, hi = item.get("v"), item.get("lo"), item.get("hi")
            if not all(isinstance(z, int) and not isinstance(z, bool) for z in (var, lo, hi)):
                raise MalformedArtifact(f"node {k}: non-integer field")
            if not 0 <= var < width:
                raise MalformedArtifact(f"node {k}: variable {var} outside width {width}")
            if not (0 <= lo < n and 0 <= hi < n):
                raise MalformedArtifact(f"node {k}: child reference out of range")
            nodes.append(Decision(var, lo, hi))
        elif tag == "s":
            g, a = item.get("g"), item.get("a")
            if g not in (0, 1) or isinstance(g, bool) or not isinstance(a, bool):
                raise MalformedArtifact(f"node {k}: bad speculation fields")
            nodes.append(Speculation(g, a))
        else:
            raise MalformedArtifact(f"node {k}: unknown tag {tag!r}")
    # iterative DFS with colours: cycles and unreachable nodes are both rejected
    colour = [0] * n
    stack = [(0, False)]
    while stack:
        k, done = stack.pop()
        if done:
            colour[k] = 2
            continue
        if colour[k] == 1:
            raise MalformedArtifact(f"cycle through node {k}")
        if colour[k] == 2:
            continue
        colour[k] = 1
        stack.append((k, True))
        node = nodes[k]
        if isinstance(node, Decision):
            for c in (node.lo, node.hi):
                if colour[c] == 1:
                    raise MalformedArtifact(f"cycle through node {c}")
                if colour[c] == 0:
                    stack.append((c, False))
    if 0 in colour:
        raise MalformedArtifact(f"node {colour.index(0)} unreachable from root")
    return Bsd(tuple(nodes), width)


def dumps(b: Bsd) -> str:
    return json.dumps(to_json(b), separators=(",", ":"))


def loads(text: str) -> Bsd:
    try:
        return from_json(json.loads(text))
    except json.JSONDecodeError as exc:
        raise MalformedArtifact(str(exc)) from exc
