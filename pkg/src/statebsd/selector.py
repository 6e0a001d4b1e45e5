"""Choosing which processor state elements to buffer.

Traces are reduced to *dependency events*: a later instruction needing a
value produced by a recent one (register read-after-write, load after a
store to the same address, or the next fetch address). Each event records
the state element the value could have been reused from. The selector
anneals over fixed-capacity subsets of the candidate pool to maximise the
fraction of events whose element is buffered.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .elements import POOL, POOL_INDEX, TARGETS, RecentState, element_values, producing_element
from .errors import CorruptTrace, NoDependencies, PoolExhausted
from .isa import WORD_MASK, Op, Program, TraceRecord, decode, execute

# event kind -> prediction target
KIND_TARGET = {"GPR": "gpr", "MEM": "mem", "PC": "pc"}
TARGET_KIND = {v: k for k, v in KIND_TARGET.items()}


@dataclass(frozen=True)
class SelectedStateSet:
    members: frozenset[str]
    capacity: int

    def __post_init__(self):
        members = frozenset(self.members)
        for m in members:
            if m not in POOL_INDEX:
                raise ValueError(f"unknown state element {m!r}")
        if len(members) > self.capacity:
            raise ValueError(f"{len(members)} members exceed capacity {self.capacity}")
        object.__setattr__(self, "members", members)

    @property
    def ordered(self) -> tuple[str, ...]:
        return tuple(m for m in POOL if m in self.members)

    def to_json(self) -> dict:
        return {"capacity": self.capacity, "members": list(self.ordered)}

    @classmethod
    def from_json(cls, d: dict) -> "SelectedStateSet":
        return cls(frozenset(d["members"]), int(d["capacity"]))


@dataclass
class StateBuffer:
    """Copies of the selected elements, refreshed whenever the machine commits."""

    selected: SelectedStateSet
    entries: dict[str, int | None] = field(default_factory=dict)

    def mirror(self, pc: int, regs: Sequence[int], recent: RecentState) -> None:
        vals = element_values(pc, regs, recent)
        self.entries = {m: vals[m] for m in self.selected.ordered}

    def view(self, pc: int | None = None, regs: Sequence[int | None] | None = None) -> dict[str, int | None]:
        """Entries with the PC and register copies overridden (e.g. by predicted values)."""
        out = dict(self.entries)
        if pc is not None and "PC" in out:
            out["PC"] = pc
        if regs is not None:
            for k in range(8):
                name = f"GPR{k}"
                if name in out:
                    out[name] = regs[k]
        return out


@dataclass(frozen=True)
class DependencyEvent:
    consumer_step: int
    kind: str
    producing_element: str | None
    needed_value: int
    producer_step: int
    producer_inst: int
    producer_pc: int
    producer_regs: tuple[int, ...]
    producer_recent: RecentState = RecentState()

    @property
    def target(self) -> str:
        return KIND_TARGET[self.kind]

    def elements(self) -> dict[str, int | None]:
        """Every pool element's value when the producer issued."""
        return element_values(self.producer_pc, self.producer_regs, self.producer_recent)


def extract_dependencies(
    trace: Sequence[TraceRecord], program: Program | None = None, window: int = 4
) -> list[DependencyEvent]:
    """Dependency events whose producer retired within ``window`` steps of the consumer.

    The architectural state is replayed from the trace itself; ``program``
    only supplies initial data memory for the replay. Without it, words
    that are loaded before any store take the loaded value.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    regs = [0] * 8
    mem = [0] * 256
    if program is not None:
        for a, v in program.data_init:
            mem[a] = v & WORD_MASK
    recent = RecentState()
    last_writer: dict[int, int] = {}
    last_store: dict[int, int] = {}
    snapshots: list[tuple[int, tuple[int, ...], RecentState]] = []
    events: list[DependencyEvent] = []

    def event(i: int, kind: str, j: int, value: int):
        pc, pregs, precent = snapshots[j]
        e = trace[j].inst
        events.append(
            DependencyEvent(
                consumer_step=i,
                kind=kind,
                producing_element=producing_element(KIND_TARGET[kind], e),
                needed_value=value,
                producer_step=j,
                producer_inst=e,
                producer_pc=pc,
                producer_regs=pregs,
                producer_recent=precent,
            )
        )

    for i, rec in enumerate(trace):
        if rec.step != i:
            raise CorruptTrace(f"record {i} has step {rec.step}")
        if i and trace[i - 1].next_pc != rec.pc_before:
            raise CorruptTrace(f"record {i} does not start at the previous next_pc")
        try:
            inst = decode(rec.inst)
        except Exception as exc:
            raise CorruptTrace(f"record {i}: {exc}") from exc
        snapshots.append((rec.pc_before, tuple(regs), recent))
        if i:
            event(i, "PC", i - 1, rec.pc_before)
        for r in inst.sources:
            j = last_writer.get(r)
            if j is not None and i - j < window:
                event(i, "GPR", j, regs[r])
        if program is None and inst.op is Op.LW and rec.reg_write is not None:
            # without the program's data image, trust loads of never-stored words
            addr = (regs[inst.rs1] + inst.imm) & WORD_MASK
            if addr < len(mem) and addr not in last_store:
                mem[addr] = rec.reg_write[1]
        fx = execute(inst, rec.pc_before, regs.__getitem__, mem.__getitem__)
        if (fx.reg_write, fx.mem_write, fx.next_pc) != (rec.reg_write, rec.mem_write, rec.next_pc):
            raise CorruptTrace(f"record {i} disagrees with its replay")
        if inst.op is Op.LW:
            j = last_store.get(fx.load_addr)
            if j is not None and i - j < window:
                event(i, "MEM", j, mem[fx.load_addr])
        if fx.reg_write is not None:
            regs[fx.reg_write[0]] = fx.reg_write[1]
        if inst.dest is not None:
            last_writer[inst.dest] = i
        if fx.mem_write is not None:
            mem[fx.mem_write[0]] = fx.mem_write[1]
            last_store[fx.mem_write[0]] = i
        recent = recent.after(inst, fx)
    return events


def reusability(s: SelectedStateSet | Iterable[str], events: Sequence[DependencyEvent]) -> Fraction:
    """Fraction of events whose producing element is in ``s``."""
    if not events:
        raise NoDependencies("no dependency events")
    members = s.members if isinstance(s, SelectedStateSet) else frozenset(s)
    hit = sum(1 for e in events if e.producing_element in members)
    return Fraction(hit, len(events))


def energy(s, events) -> Fraction:
    return 1 - reusability(s, events)


def acceptance_probability(delta: float, temperature: float) -> float:
    """Metropolis factor ``exp(-delta / T)``; above 1 for improving moves."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return math.exp(-float(delta) / temperature)


def neighbor(
    s: SelectedStateSet, rng: np.random.Generator, fixed: frozenset[str] = frozenset()
) -> SelectedStateSet:
    """Swap one (non-fixed) member for one non-member, both drawn uniformly."""
    outs = [m for m in s.ordered if m not in fixed]
    ins = [m for m in POOL if m not in s.members]
    if not ins or not outs:
        raise PoolExhausted("no swap available")
    out = outs[int(rng.integers(len(outs)))]
    inn = ins[int(rng.integers(len(ins)))]
    return SelectedStateSet((s.members - {out}) | {inn}, s.capacity)


@dataclass(frozen=True)
class AnnealSchedule:
    t0: float = 0.05
    alpha: float = 0.995
    resample_threshold: int = 50
    max_iters: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.resample_threshold < 1 or self.max_iters < 0:
            raise ValueError("resample_threshold >= 1 and max_iters >= 0 required")


@dataclass
class AnnealResult:
    selected: SelectedStateSet
    energy: Fraction
    history: list[Fraction]
    best_history: list[Fraction]
    seed: int

    @property
    def reusability(self) -> Fraction:
        return 1 - self.energy


def anneal(
    events: Sequence[DependencyEvent],
    capacity: int,
    sched: AnnealSchedule = AnnealSchedule(),
    base: Iterable[str] = (),
) -> AnnealResult:
    """Simulated annealing over subsets of size ``capacity`` that contain ``base``.

    A candidate move is redrawn when rejected; after ``resample_threshold``
    consecutive rejections the search stops. The temperature decays by
    ``alpha`` after every accepted move. Returns the best set visited.
    """
    if not events:
        raise NoDependencies("no dependency events to select for")
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    base = frozenset(base)
    cap = min(capacity, len(POOL))
    if len(base) > cap:
        raise ValueError("base set larger than capacity")
    rng = np.random.default_rng(sched.seed)
    counts = Counter(e.producing_element for e in events)
    total = len(events)

    def E(members: frozenset[str]) -> Fraction:
        return 1 - Fraction(sum(counts[m] for m in members), total)

    free = [m for m in POOL if m not in base]
    extra = cap - len(base)
    picks = rng.choice(len(free), size=extra, replace=False) if extra else []
    cur = SelectedStateSet(base | {free[int(k)] for k in picks}, cap)
    e_cur = E(cur.members)
    best, e_best = cur, e_cur
    history, best_history = [e_cur], [e_best]
    if extra == 0 or extra == len(free):
        return AnnealResult(best, e_best, history, best_history, sched.seed)

    t = sched.t0
    for _ in range(sched.max_iters):
        for _ in range(sched.resample_threshold):
            cand = neighbor(cur, rng, base)
            e_cand = E(cand.members)
            delta = e_cand - e_cur
            if delta <= 0 or rng.random() < acceptance_probability(delta, t):
                break
        else:
            break
        cur, e_cur = cand, e_cand
        t *= sched.alpha
        if e_cur < e_best:
            best, e_best = cur, e_cur
        history.append(e_cur)
        best_history.append(e_best)
    return AnnealResult(best, e_best, history, best_history, sched.seed)


def grow(
    base: SelectedStateSet | Iterable[str],
    events: Sequence[DependencyEvent],
    capacity: int,
    sched: AnnealSchedule = AnnealSchedule(),
) -> AnnealResult:
    """Anneal a larger set that keeps every member of ``base``."""
    members = base.members if isinstance(base, SelectedStateSet) else frozenset(base)
    return anneal(events, capacity, sched, base=members)


def events_by_target(events: Iterable[DependencyEvent]) -> dict[str, list[DependencyEvent]]:
    out: dict[str, list[DependencyEvent]] = {t: [] for t in TARGETS}
    for e in events:
        out[e.target].append(e)
    return out


def selection_to_json(selected: Mapping[str, SelectedStateSet]) -> dict:
    return {t: s.to_json() for t, s in sorted(selected.items())}


def selection_from_json(d: dict) -> dict[str, SelectedStateSet]:
    return {t: SelectedStateSet.from_json(v) for t, v in d.items()}


def selector_artifact(target: str, result: AnnealResult, sched: AnnealSchedule) -> dict:
    return {
        "target": target,
        "capacity": result.selected.capacity,
        "members": list(result.selected.ordered),
        "energy": float(result.energy),
        "seed": result.seed,
        "schedule": {
            "t0": sched.t0,
            "alpha": sched.alpha,
            "resample_threshold": sched.resample_threshold,
            "max_iters": sched.max_iters,
        },
    }
