"""State speculators: BSD-based predictors that are allowed to abstain.

A speculator reads the 16 encoding bits of a producing instruction and
either abstains or names the dependent datum. Two layouts exist:

* ``factored`` (used by the simulator): the output is an index into the
  source list of the selected state set. A *care* diagram decides whether
  to predict at all; one diagram per index bit names the source. The
  value is then read from the state buffer.
* ``direct``: one diagram per data bit, for small standalone functions.

Leaves that are impure or saw no training rows abstain, so a trained
speculator never guesses outside what it learned. Soundness is then
established by checking every input against an oracle; counterexamples
are folded back into the training table until the check passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import bsd
from .bsd import Bsd, ExampleSet, Speculation
from .elements import TARGETS, UNIVERSE_INDEX, sound_matrix, source_value, sources_for
from .errors import (
    BudgetExhausted,
    DomainTooLarge,
    LayoutMismatch,
    MalformedArtifact,
    MissingOracleEntry,
)
from .selector import TARGET_KIND, DependencyEvent, SelectedStateSet, extract_dependencies

FACTORED = "factored"
DIRECT = "direct"
MAX_EXHAUSTIVE_WIDTH = 24
ARTIFACT_FORMAT = "statebsd.speculator/1"


def index_bits(n_sources: int) -> int:
    return max(1, (n_sources - 1).bit_length())


# -- training tables ----------------------------------------------------------


@dataclass
class OracleTable:
    """Observed behaviour of each producer encoding.

    In factored mode a row keeps the set of source indices that matched the
    needed value every time the encoding was seen. In direct mode it keeps
    the value, or None once two observations disagree.
    """

    target: str
    sources: tuple[str, ...]
    mode: str = FACTORED
    width: int = 16
    rows: dict[int, object] = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def observe(self, x: int, matching: Iterable[int]) -> None:
        m = frozenset(matching)
        prev = self.rows.get(x)
        self.rows[x] = m if prev is None else prev & m

    def observe_value(self, x: int, value: int | None) -> None:
        if x in self.rows and self.rows[x] != value:
            self.rows[x] = None
        else:
            self.rows[x] = value

    def correct(self, x: int, truth) -> None:
        """Overwrite a row with oracle truth (index set or value)."""
        self.rows[x] = frozenset(truth) if self.mode == FACTORED and truth is not None else truth

    def predictable(self, x: int) -> bool:
        r = self.rows[x]
        return bool(r) if self.mode == FACTORED else r is not None

    def label(self, x: int) -> int:
        """Training label: lowest matching source index, or the value."""
        r = self.rows[x]
        if self.mode == FACTORED:
            return min(r) if r else -1
        return -1 if r is None else int(r)


def table_from_events(
    events: Iterable[DependencyEvent], target: str, sources: Sequence[str]
) -> OracleTable:
    table = OracleTable(target, tuple(sources))
    kind = TARGET_KIND[target]
    for ev in events:
        if ev.kind != kind:
            continue
        vals = ev.elements()
        match = [
            k for k, s in enumerate(sources) if source_value(s, ev.producer_inst, vals) == ev.needed_value
        ]
        table.observe(ev.producer_inst, match)
    return table


def build_examples(
    traces: Iterable[Sequence], selected: SelectedStateSet, target: str, window: int = 4
) -> OracleTable:
    """Training table for ``target`` from raw traces and a selected state set."""
    events: list[DependencyEvent] = []
    for tr in traces:
        events.extend(extract_dependencies(tr, window=window))
    return table_from_events(events, target, sources_for(selected.members))


# -- oracles ------------------------------------------------------------------


class SemanticOracle:
    """Ground truth from the ISA: which sources always equal the datum."""

    def __init__(self, target: str):
        if target not in TARGETS:
            raise ValueError(f"unknown target {target!r}")
        self.target = target
        self.matrix = sound_matrix(target)

    def sound(self, xs, sources: Sequence[str]) -> np.ndarray:
        cols = [UNIVERSE_INDEX[s] for s in sources]
        return self.matrix[np.asarray(xs, dtype=np.int64)][:, cols]

    def violations(self, spec: "Speculator", xs, abstain, payload) -> np.ndarray:
        n = len(spec.sources)
        ok = self.sound(xs, spec.sources)[np.arange(len(xs)), np.minimum(payload, n - 1)]
        return ~abstain & ~ok

    def truth(self, x: int, sources: Sequence[str]) -> frozenset[int]:
        return frozenset(np.nonzero(self.sound([x], sources)[0])[0].tolist())

    def predictable(self, x: int, sources: Sequence[str], entries: Mapping | None = None) -> bool:
        truth = self.truth(x, sources)
        if entries is None:
            return bool(truth)
        return any(source_value(sources[k], x, entries) is not None for k in truth)


class FunctionOracle:
    """Ground truth from a callable or mapping; None marks an unpredictable input."""

    def __init__(self, fn: Callable[[int], int | None] | Mapping[int, int | None], width: int):
        self.fn = fn
        self.width = width

    def value(self, x: int) -> int | None:
        if isinstance(self.fn, Mapping):
            if x not in self.fn:
                raise MissingOracleEntry(f"no oracle entry for input {x}")
            return self.fn[x]
        return self.fn(x)

    def violations(self, spec: "Speculator", xs, abstain, payload) -> np.ndarray:
        vals = np.array([-1 if (v := self.value(int(x))) is None else v for x in xs], dtype=np.int64)
        return ~abstain & (payload != vals)

    def truth(self, x: int, sources=()) -> int | None:
        return self.value(x)

    def predictable(self, x: int, sources=(), entries=None) -> bool:
        return self.value(x) is not None


# -- the speculator -----------------------------------------------------------


def _abstain_root(width: int) -> Bsd:
    return Bsd((Speculation(0, True),), width)


def _seal(b: Bsd) -> Bsd:
    """Mark every impure or empty leaf as abstaining."""
    nodes = list(b.nodes)
    for k in b.leaves():
        leaf = nodes[k]
        if not leaf.pure:
            nodes[k] = Speculation(leaf.guess, True, leaf.support)
    return replace(b, nodes=tuple(nodes))


@dataclass(frozen=True)
class SpeculatorOutput:
    abstain: bool
    data: int | None = None
    source: str | None = None


@dataclass(eq=False)
class Speculator:
    target: str
    mode: str
    sources: tuple[str, ...]
    care: Bsd
    bits: tuple[Bsd, ...]
    input_width: int = 16
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (FACTORED, DIRECT):
            raise ValueError(f"unknown mode {self.mode!r}")
        for b in (self.care, *self.bits):
            if b.input_width != self.input_width:
                raise LayoutMismatch("diagram width differs from speculator width")
        if self.mode == FACTORED and self.bits and len(self.bits) != index_bits(len(self.sources)):
            raise LayoutMismatch(f"{len(self.bits)} index diagrams for {len(self.sources)} sources")

    def __eq__(self, other):
        if not isinstance(other, Speculator):
            return NotImplemented
        return (self.target, self.mode, self.sources, self.input_width, self.care, self.bits) == (
            other.target, other.mode, other.sources, other.input_width, other.care, other.bits)

    @classmethod
    def abstain_everywhere(cls, target: str, sources: Sequence[str] = ("IMM",), mode: str = FACTORED, width: int = 16):
        return cls(target, mode, tuple(sources), _abstain_root(width), (), width)

    def decide_many(self, xs) -> tuple[np.ndarray, np.ndarray]:
        """(abstain, payload) per input; payload is a source index or a value."""
        xs = np.asarray(xs, dtype=np.int64)
        at = self.care.route(xs)
        abstain = (self.care.guesses()[at] == 0) | self.care.abstains()[at]
        payload = np.zeros(xs.shape, dtype=np.int64)
        for k, b in enumerate(self.bits):
            at = b.route(xs)
            abstain |= b.abstains()[at]
            payload |= b.guesses()[at].astype(np.int64) << k
        if not self.bits:
            abstain[:] = True
        if self.mode == FACTORED:
            abstain |= payload >= len(self.sources)
        return abstain, payload

    def _lut(self):
        lut = self.__dict__.get("_table")
        if lut is None:
            a, p = self.decide_many(np.arange(1 << self.input_width, dtype=np.int64))
            lut = (a.tolist(), p.tolist())
            self.__dict__["_table"] = lut
        return lut

    def decide(self, x: int) -> tuple[bool, int]:
        if self.input_width <= 16:
            a, p = self._lut()
            return a[x], p[x]
        a, p = self.decide_many([x])
        return bool(a[0]), int(p[0])

    @property
    def node_count(self) -> int:
        return self.care.decision_count + sum(b.decision_count for b in self.bits)

    def coverage_of_domain(self) -> float:
        """Fraction of all inputs on which the speculator does not abstain."""
        a, _ = self._lut() if self.input_width <= 16 else self.decide_many(np.arange(1 << self.input_width))
        a = np.asarray(a)
        return float((~a).mean())


def predict(spec: Speculator, x: int, entries: Mapping[str, int | None] | None = None) -> SpeculatorOutput:
    """Prediction for producer ``x`` given the state buffer ``entries``."""
    abstain, payload = spec.decide(x)
    if abstain:
        return SpeculatorOutput(True)
    if spec.mode == DIRECT:
        return SpeculatorOutput(False, payload)
    name = spec.sources[payload]
    value = source_value(name, x, entries or {})
    if value is None:
        return SpeculatorOutput(True)
    return SpeculatorOutput(False, value, name)


def _fit(examples: ExampleSet, target: Fraction, max_nodes: int) -> tuple[Bsd, bool]:
    try:
        return _seal(bsd.train(examples, target, max_nodes)), False
    except BudgetExhausted as exc:
        return _seal(exc.best), True


def train_speculator(table: OracleTable, max_nodes: int = 100_000, epsilon: float = 0.0) -> Speculator:
    """Fit care and payload diagrams to ``table``; impure leaves abstain."""
    w = table.width
    target = Fraction(1) - Fraction(epsilon).limit_denominator(10**6)
    if not len(table):
        return Speculator.abstain_everywhere(table.target, table.sources, table.mode, w)
    xs = np.array(sorted(table.rows), dtype=np.int64)
    labels = np.array([table.label(int(x)) for x in xs], dtype=np.int64)
    care_y = (labels >= 0).astype(np.int8)
    n_bits = index_bits(len(table.sources)) if table.mode == FACTORED else w
    care, hit = _fit(ExampleSet(xs, care_y, w), target, max_nodes)
    bits = []
    sel = labels >= 0
    for k in range(n_bits):
        if not sel.any():
            bits.append(_abstain_root(w))
            continue
        b, h = _fit(ExampleSet(xs[sel], (labels[sel] >> k) & 1, w), target, max_nodes)
        hit |= h
        bits.append(b)
    info = {"rows": len(table), "predictable_rows": int(sel.sum()), "budget_exhausted": hit}
    return Speculator(table.target, table.mode, table.sources, care, tuple(bits), w, info)


# -- verification ---------------------------------------------------------------


@dataclass(frozen=True)
class Sampled:
    n: int = 1_000_000
    seed: int = 0


@dataclass
class VerificationResult:
    verified: bool
    counterexamples: tuple[int, ...]
    checked: int
    mode: str

    def to_json(self) -> dict:
        return {
            "verified": self.verified,
            "counterexamples": list(self.counterexamples),
            "checked": self.checked,
            "mode": self.mode,
        }


def verify_speculator(
    spec: Speculator, oracle, domain="exhaustive", cex_cap: int | None = None
) -> VerificationResult:
    """Check that every non-abstaining output agrees with ``oracle``.

    ``domain`` is ``"exhaustive"`` (all 2**width inputs; at most 24 bits)
    or a ``Sampled`` spec of uniformly drawn inputs.
    """
    w = spec.input_width
    if domain == "exhaustive":
        if w > MAX_EXHAUSTIVE_WIDTH:
            raise DomainTooLarge(f"{w}-bit domain is too large for exhaustive checking")
        chunks = (np.arange(lo, min(lo + (1 << 20), 1 << w), dtype=np.int64) for lo in range(0, 1 << w, 1 << 20))
        checked, mode = 1 << w, "exhaustive"
    elif isinstance(domain, Sampled):
        rng = np.random.default_rng(domain.seed)
        xs = rng.integers(0, 1 << w, size=domain.n, dtype=np.int64)
        chunks = iter([xs])
        checked, mode = domain.n, "sampled"
    else:
        raise ValueError(f"unknown domain {domain!r}")
    cex: list[int] = []
    for xs in chunks:
        abstain, payload = spec.decide_many(xs)
        bad = oracle.violations(spec, xs, abstain, payload)
        cex.extend(np.unique(xs[bad]).tolist())
        if cex_cap is not None and len(cex) >= cex_cap:
            cex = cex[:cex_cap]
            break
    return VerificationResult(not cex, tuple(sorted(set(cex))), checked, mode)


def refine(
    spec: Speculator,
    counterexamples: Sequence[int],
    table: OracleTable,
    oracle,
    max_nodes: int = 100_000,
    force: bool = False,
) -> Speculator:
    """Repair ``spec`` using counterexamples.

    By default each counterexample is relabelled with oracle truth in
    ``table`` and the speculator is retrained. With ``force`` the care
    leaves reached by the counterexamples are switched to abstain, which
    is always sound but costs coverage.
    """
    if not counterexamples:
        raise ValueError("refine needs at least one counterexample")
    if force:
        care = spec.care
        for leaf in set(care.route(np.asarray(counterexamples, dtype=np.int64)).tolist()):
            care = care.with_leaf(leaf, Speculation(0, True, care.nodes[leaf].support))
        info = dict(spec.info, forced_leaves=spec.info.get("forced_leaves", 0) + 1)
        return replace(spec, care=care, info=info)
    for x in counterexamples:
        table.correct(int(x), oracle.truth(int(x), table.sources))
    return train_speculator(table, max_nodes)


def train_verified(
    table: OracleTable,
    oracle,
    max_nodes: int = 100_000,
    max_rounds: int = 8,
    domain="exhaustive",
    epsilon: float = 0.0,
) -> tuple[Speculator, VerificationResult]:
    """Train, verify, and refine until verification passes.

    After ``max_rounds`` retraining rounds the remaining counterexamples
    are removed by forcing abstention, so the result is always verified
    over ``domain``.
    """
    spec = train_speculator(table, max_nodes, epsilon)
    result = verify_speculator(spec, oracle, domain)
    rounds = 0
    while not result.verified:
        force = rounds >= max_rounds
        spec = refine(spec, result.counterexamples, table, oracle, max_nodes, force=force)
        rounds += 1
        result = verify_speculator(spec, oracle, domain)
    spec.info["refine_rounds"] = rounds
    spec.info["verification"] = {
        "mode": result.mode,
        "width" if result.mode == "exhaustive" else "samples": spec.input_width if result.mode == "exhaustive" else result.checked,
        "seed": domain.seed if isinstance(domain, Sampled) else None,
        "status": "verified",
        "counterexample_rounds": rounds,
    }
    return spec, result


# -- metrics --------------------------------------------------------------------


@dataclass
class PredictionMetrics:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> Fraction:
        pos = self.tp + self.fp
        return Fraction(1) if pos == 0 else Fraction(self.tp, pos)

    @property
    def recall(self) -> Fraction:
        d = self.tp + self.fn
        return Fraction(1) if d == 0 else Fraction(self.tp, d)

    @property
    def coverage(self) -> Fraction:
        return Fraction(0) if self.total == 0 else Fraction(self.tp + self.fp, self.total)

    def __add__(self, other: "PredictionMetrics") -> "PredictionMetrics":
        return PredictionMetrics(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_json(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": float(self.precision),
            "recall": float(self.recall),
            "coverage": float(self.coverage),
        }


def measure(spec: Speculator, events: Iterable[DependencyEvent], oracle) -> PredictionMetrics:
    """Confusion counts of ``spec`` over the events of its target kind."""
    m = PredictionMetrics()
    kind = TARGET_KIND[spec.target]
    for ev in events:
        if ev.kind != kind:
            continue
        entries = ev.elements()
        out = predict(spec, ev.producer_inst, entries)
        if not out.abstain:
            if out.data == ev.needed_value:
                m.tp += 1
            else:
                m.fp += 1
        elif oracle.predictable(ev.producer_inst, spec.sources, entries):
            m.fn += 1
        else:
            m.tn += 1
    return m


# -- artifacts --------------------------------------------------------------------


def to_json(spec: Speculator) -> dict:
    return {
        "format": ARTIFACT_FORMAT,
        "target": spec.target,
        "mode": spec.mode,
        "input_width": spec.input_width,
        "layout": {"inst": [0, spec.input_width]},
        "abstain_policy": "leaf",
        "sources": list(spec.sources),
        "care": bsd.to_json(spec.care),
        "slot_bsds": [bsd.to_json(b) for b in spec.bits],
        "info": spec.info,
    }


def from_json(d: dict) -> Speculator:
    try:
        if d["format"] != ARTIFACT_FORMAT:
            raise MalformedArtifact(f"unknown format {d['format']!r}")
        return Speculator(
            target=d["target"],
            mode=d["mode"],
            sources=tuple(d["sources"]),
            care=bsd.from_json(d["care"]),
            bits=tuple(bsd.from_json(b) for b in d["slot_bsds"]),
            input_width=int(d["input_width"]),
            info=dict(d.get("info", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedArtifact(f"bad speculator artifact: {exc}") from exc


def dumps(spec: Speculator) -> str:
    return json.dumps(to_json(spec), sort_keys=True)


def loads(text: str) -> Speculator:
    try:
        return from_json(json.loads(text))
    except json.JSONDecodeError as exc:
        raise MalformedArtifact(str(exc)) from exc


def check_layout(spec: Speculator, selected: SelectedStateSet) -> None:
    """Raise ``LayoutMismatch`` if ``spec`` was built for a different state set."""
    if spec.mode == FACTORED and spec.sources != sources_for(selected.members):
        raise LayoutMismatch(
            f"speculator expects sources {list(spec.sources)}, state set provides "
            f"{list(sources_for(selected.members))}"
        )
