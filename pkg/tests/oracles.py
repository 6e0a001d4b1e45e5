"""Brute-force reference implementations used to cross-check the library."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from statebsd.bsd import Decision
from statebsd.elements import POOL, UNIVERSE, RecentState, element_values, source_value
from statebsd.isa import MEM_WORDS, Op, ProcessorState, decode, execute


def walk(b, x: int) -> int:
    """Follow decisions from the root one node at a time."""
    node = b.nodes[b.root]
    while isinstance(node, Decision):
        node = b.nodes[node.hi if (x >> node.var) & 1 else node.lo]
    return node.guess


def slow_accuracy(b, rows) -> Fraction:
    rows = list(rows)
    return Fraction(sum(walk(b, x) == y for x, y in rows), len(rows))


def majority(ys, default):
    ones = sum(ys)
    zeros = len(ys) - ones
    if not ys:
        return default
    return 1 if ones > zeros else 0


def random_state(rng: np.random.Generator, small: bool, flat: bool = False):
    """Random (pc, regs, mem, recent); ``small`` draws registers from {0, 1},
    ``flat`` gives every register r1..r7 the same value."""
    hi = 2 if small else 1 << 16
    regs = (0,) + tuple(int(v) for v in rng.integers(0, hi, 7))
    if flat:
        regs = (0,) + (regs[1],) * 7
    # keep register values mostly valid addresses so loads and stores execute
    if not small:
        regs = tuple(r % MEM_WORDS if rng.random() < 0.5 else r for r in regs)
        regs = (0,) + regs[1:]
    mem = [int(v) for v in rng.integers(0, 1 << 16, MEM_WORDS)]
    recent = RecentState(
        tuple(int(v) for v in rng.integers(0, 1 << 16, 4)),
        tuple(int(v) for v in rng.integers(0, MEM_WORDS, 4)),
        int(rng.integers(0, 1 << 16)),
    )
    pc = int(rng.integers(0, 256))
    return pc, regs, mem, recent


def target_value(target: str, inst, pc, regs, mem):
    """The datum ``inst`` produces for ``target``, or None if it produces none."""
    try:
        fx = execute(inst, pc, regs.__getitem__, mem.__getitem__)
    except Exception:
        return None
    if target == "pc":
        return None if fx.halted else fx.next_pc
    if target == "gpr":
        return None if fx.reg_write is None else fx.reg_write[1]
    return None if fx.mem_write is None else fx.mem_write[1]


def probe_sound_sources(target: str, e: int, trials: int = 64, seed: int = 0) -> frozenset[str] | None:
    """Sources whose value matched the datum in every probed machine state.

    An over-approximation of the true sound set: a source can survive by luck
    only if it agrees on every random state, which for 16-bit values and 64
    trials essentially never happens unless it is an identity. Returns None
    when the instruction produced no datum in any probed state.
    """
    try:
        inst = decode(e)
    except Exception:
        return None
    rng = np.random.default_rng([seed, e])
    alive = set(UNIVERSE)
    produced = False
    for k in range(trials):
        pc, regs, mem, recent = random_state(rng, small=k % 4 == 0, flat=k % 8 == 1)
        v = target_value(target, inst, pc, regs, mem)
        if v is None:
            continue
        produced = True
        vals = element_values(pc, regs, recent)
        alive = {s for s in alive if source_value(s, e, vals) == v}
        if not alive:
            break
    return frozenset(alive) if produced else None


def reusability_brute(members, events) -> Fraction:
    return Fraction(sum(1 for e in events if e.producing_element in set(members)), len(events))


def best_subset(events, capacity: int) -> Fraction:
    """Exhaustive maximum reusability over subsets of the pool of size ``capacity``."""
    best = Fraction(0)
    for combo in itertools.combinations(POOL, capacity):
        best = max(best, reusability_brute(combo, events))
    return best


def dependent_pairs(trace, window: int):
    """(consumer, producer, register) triples for register reads within ``window``."""
    out = []
    for i, rec in enumerate(trace):
        for r in decode(rec.inst).sources:
            for j in range(i - 1, -1, -1):
                if decode(trace[j].inst).dest == r:
                    if i - j < window:
                        out.append((i, j, r))
                    break
    return out
