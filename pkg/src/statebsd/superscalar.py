"""p-way in-order superscalar simulator driven by state speculators.

Each cycle the planner issues the longest prefix of the upcoming
instruction stream that can run together. An instruction may join the
group only if every value it needs from an earlier group member is
predicted: the fetch address (after any group member), a register written
in-group, or a memory word stored in-group. Predictions come from the
bundle's speculators reading the state buffer; every prediction that is
used is checked against the computed value, so an unsound predictor
raises instead of corrupting state.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import speculator as spx
from .elements import TARGETS, UNIVERSE_INDEX, RecentState, sound_matrix, sources_for
from .errors import CycleLimitExceeded, MalformedArtifact, PredictorUnsound
from .isa import (
    LATENCY,
    MEM_WORDS,
    WORD_MASK,
    Instruction,
    Op,
    ProcessorState,
    Program,
    RunResult,
    TraceRecord,
    decode,
    execute,
    run_single,
)
from .selector import SelectedStateSet
from .speculator import PredictionMetrics, Speculator, VerificationResult

STALL_REASONS = ("GPR_RAW", "MEM_RAW", "CONTROL", "STRUCTURAL")
TIMINGS = ("max", "issue")


@dataclass(frozen=True)
class SuperscalarConfig:
    """Issue width, memory ports, prediction latency and group timing.

    ``timing="max"`` charges a group its slowest member's latency.
    ``timing="issue"`` charges one cycle per group plus every member's
    extra latency (only the issue slot is shared).
    """

    p: int = 2
    mem_ports: int = 1
    l_p: int = 1
    timing: str = "max"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.l_p < 1:
            raise ValueError("l_p must be >= 1")
        if self.mem_ports < 1:
            raise ValueError("mem_ports must be >= 1")
        if self.timing not in TIMINGS:
            raise ValueError(f"timing must be one of {TIMINGS}")


@dataclass
class PredictorBundle:
    """One selected state set and speculator per target (pc, gpr, mem)."""

    selected: dict[str, SelectedStateSet]
    speculators: dict[str, Speculator]
    verification: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        for t in TARGETS:
            if t not in self.selected or t not in self.speculators:
                raise ValueError(f"bundle lacks target {t!r}")
            spx.check_layout(self.speculators[t], self.selected[t])

    @classmethod
    def abstain_everywhere(cls, capacity: int = 0) -> "PredictorBundle":
        sel = {t: SelectedStateSet(frozenset(), capacity) for t in TARGETS}
        specs = {t: Speculator.abstain_everywhere(t, sources_for(())) for t in TARGETS}
        ver = {t: {"verified": True, "mode": "trivial", "counterexamples": [], "checked": 0} for t in TARGETS}
        return cls(sel, specs, ver)

    def without(self, target: str) -> "PredictorBundle":
        """Copy with ``target`` replaced by an abstain-everywhere speculator."""
        specs = dict(self.speculators)
        old = specs[target]
        specs[target] = Speculator.abstain_everywhere(target, old.sources, old.mode, old.input_width)
        ver = dict(self.verification)
        ver[target] = {"verified": True, "mode": "trivial", "counterexamples": [], "checked": 0}
        return PredictorBundle(dict(self.selected), specs, ver)

    @property
    def verified(self) -> bool:
        return all(self.verification.get(t, {}).get("verified", False) for t in TARGETS)

    def to_json(self) -> dict:
        return {
            "format": "statebsd.bundle/1",
            "targets": {
                t: {
                    "selected": self.selected[t].to_json(),
                    "speculator": spx.to_json(self.speculators[t]),
                    "verification": self.verification.get(t, {}),
                }
                for t in TARGETS
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "PredictorBundle":
        try:
            if d["format"] != "statebsd.bundle/1":
                raise MalformedArtifact(f"unknown bundle format {d['format']!r}")
            ts = d["targets"]
            return cls(
                {t: SelectedStateSet.from_json(ts[t]["selected"]) for t in TARGETS},
                {t: spx.from_json(ts[t]["speculator"]) for t in TARGETS},
                {t: dict(ts[t].get("verification", {})) for t in TARGETS},
            )
        except (KeyError, TypeError) as exc:
            raise MalformedArtifact(f"bad bundle artifact: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "PredictorBundle":
        try:
            return cls.from_json(json.loads(text))
        except json.JSONDecodeError as exc:
            raise MalformedArtifact(str(exc)) from exc


@dataclass(frozen=True)
class Prediction:
    target: str
    slot: int
    input: int
    value: int
    source: str


@dataclass
class Slot:
    pc: int
    bits: int
    inst: Instruction
    regs: list  # register values as this instruction sees them (None = unknown)
    recent_ok: bool
    gpr: Prediction | None = None
    mem: Prediction | None = None


@dataclass
class IssuePlan:
    slots: list[Slot]
    predictions: list[Prediction]
    stall_reason: str | None = None
    # per-target (predicted, abstained-but-predictable, abstained-unpredictable)
    needs: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    issued_m: int
    group: tuple[int, ...]
    predictions_used: tuple[tuple[str, int, int], ...]
    stall_reason: str | None
    cost: int


def _value(name: str, inst: Instruction, pc: int, regs, recent: RecentState, recent_ok: bool) -> int | None:
    if name == "IMM":
        return (inst.imm if inst.op is not Op.HALT else 0) & WORD_MASK
    if name == "PC+1":
        return (pc + 1) & WORD_MASK
    if name == "PC+IMM":
        return (pc + inst.imm) & WORD_MASK
    if name == "PC":
        return pc
    if name.startswith("GPR"):
        return regs[int(name[3:])]
    if not recent_ok:
        return None
    if name == "LASTBRANCH":
        return recent.last_branch
    k = int(name[-1])
    return recent.loads[k] if name.startswith("LASTLOAD") else recent.store_addrs[k]


class _Predictors:
    """Fast lookups for one bundle (speculator tables are cached per instance)."""

    def __init__(self, bundle: PredictorBundle):
        self.bundle = bundle
        self.specs = bundle.speculators
        self.sound_cols = {
            t: np.array([UNIVERSE_INDEX[s] for s in self.specs[t].sources], dtype=np.int64) for t in TARGETS
        }

    def predict(self, target: str, slot: int, s: Slot, recent: RecentState) -> Prediction | None:
        spec = self.specs[target]
        abstain, idx = spec.decide(s.bits)
        if abstain:
            return None
        if spec.mode != spx.FACTORED:
            return Prediction(target, slot, s.bits, idx, "DIRECT")
        name = spec.sources[idx]
        v = _value(name, s.inst, s.pc, s.regs, recent, s.recent_ok)
        if v is None:
            return None
        return Prediction(target, slot, s.bits, v, name)

    def predictable(self, target: str, s: Slot, recent: RecentState) -> bool:
        row = sound_matrix(target)[s.bits, self.sound_cols[target]]
        srcs = self.specs[target].sources
        return any(
            _value(srcs[k], s.inst, s.pc, s.regs, recent, s.recent_ok) is not None for k in np.nonzero(row)[0]
        )


def _need(plan: IssuePlan, target: str, pred: Prediction | None, preds: _Predictors, s: Slot, recent) -> None:
    counts = plan.needs.setdefault(target, [0, 0, 0])
    if pred is not None:
        counts[0] += 1
    elif preds.predictable(target, s, recent):
        counts[1] += 1
    else:
        counts[2] += 1


def plan_issue(
    state: ProcessorState,
    program: Program,
    bundle: PredictorBundle | _Predictors,
    config: SuperscalarConfig,
    recent: RecentState = RecentState(),
) -> IssuePlan:
    """Choose the group issued this cycle: the longest legal prefix of at most ``p``."""
    preds = bundle if isinstance(bundle, _Predictors) else _Predictors(bundle)
    regs = list(state.regs)
    writer: dict[int, int] = {}
    stores: list[tuple[int, int]] = []  # (slot, address)
    ports = 0
    recent_ok = True
    pc = state.pc
    plan = IssuePlan([], [])
    used_gpr: set[int] = set()
    n_prog = len(program.instructions)

    for j in range(config.p):
        if j:
            prev = plan.slots[-1]
            if prev.inst.op is Op.HALT:
                break
            pcp = preds.predict("pc", j - 1, prev, recent)
            _need(plan, "pc", pcp, preds, prev, recent)
            if pcp is None or not 0 <= pcp.value < n_prog:
                plan.stall_reason = "CONTROL"
                break
            pc = pcp.value
            pc_pred = pcp
        bits = program.fetch(pc)
        inst = decode(bits)
        slot = Slot(pc, bits, inst, list(regs), recent_ok)
        new_preds: list[Prediction] = []
        reason = None
        for r in inst.sources:
            k = writer.get(r)
            if k is None:
                continue
            producer = plan.slots[k]
            if k not in used_gpr:
                _need(plan, "gpr", producer.gpr, preds, producer, recent)
            if producer.gpr is None:
                reason = "GPR_RAW"
                break
            if k not in used_gpr and producer.gpr not in new_preds:
                new_preds.append(producer.gpr)
        port = 0
        if reason is None and inst.op in (Op.LW, Op.SW):
            addr = (regs[inst.rs1] + inst.imm) & WORD_MASK
            port = 1
            if inst.op is Op.LW:
                hit = next((k for k, a in reversed(stores) if a == addr), None)
                if hit is not None:
                    producer = plan.slots[hit]
                    _need(plan, "mem", producer.mem, preds, producer, recent)
                    if producer.mem is None:
                        reason = "MEM_RAW"
                    else:
                        new_preds.append(producer.mem)
                        port = 0
            if reason is None and j and ports + port > config.mem_ports:
                reason = "STRUCTURAL"
        if reason is not None:
            plan.stall_reason = reason
            break
        if j:
            plan.predictions.append(pc_pred)
        for pr in new_preds:
            plan.predictions.append(pr)
            if pr.target == "gpr":
                used_gpr.add(pr.slot)
        ports += port
        if inst.dest is not None:
            slot.gpr = preds.predict("gpr", j, slot, recent)
            writer[inst.dest] = j
        if inst.op is Op.SW:
            slot.mem = preds.predict("mem", j, slot, recent)
            stores.append((j, (regs[inst.rs1] + inst.imm) & WORD_MASK))
        if inst.dest is not None:
            regs[inst.dest] = slot.gpr.value if slot.gpr is not None else None
        if inst.op in (Op.LW, Op.SW, Op.BEQ, Op.BNE, Op.JAL):
            recent_ok = False
        plan.slots.append(slot)
    return plan


def step_group(
    state: ProcessorState,
    plan: IssuePlan,
    config: SuperscalarConfig,
    recent: RecentState = RecentState(),
) -> tuple[ProcessorState, int, RecentState, list]:
    """Execute ``plan`` and commit it in program order.

    Returns the new state, the cycle cost, the updated recent-value state
    and the list of ``(pc, bits, Effects)`` retired.
    """
    regs0, mem0 = state.regs, state.mem
    used = {(p.target, p.slot): p for p in plan.predictions}
    writer: dict[int, int] = {}
    store_at: dict[int, int] = {}
    regs, mem = list(regs0), list(mem0)
    retired = []
    prev_fx = None
    for j, s in enumerate(plan.slots):
        if j:
            pcp = used.get(("pc", j - 1))
            if pcp is None or pcp.value != prev_fx.next_pc:
                raise PredictorUnsound(f"fetch address {s.pc} predicted, actual {prev_fx.next_pc}")

        def read_reg(r, _j=j):
            k = writer.get(r)
            if k is None:
                return regs0[r]
            p = used.get(("gpr", k))
            if p is None:
                raise PredictorUnsound(f"slot {_j} reads r{r} from an unpredicted producer")
            return p.value

        def read_mem(a, _j=j):
            k = store_at.get(a)
            if k is None:
                return mem0[a]
            p = used.get(("mem", k))
            if p is None:
                raise PredictorUnsound(f"slot {_j} loads mem[{a}] from an unpredicted store")
            return p.value

        fx = execute(s.inst, s.pc, read_reg, read_mem)
        gp = used.get(("gpr", j))
        if gp is not None and (fx.reg_write is None or gp.value != fx.reg_write[1]):
            raise PredictorUnsound(f"gpr prediction {gp.value} for {s.inst} is wrong")
        mp = used.get(("mem", j))
        if mp is not None and (fx.mem_write is None or mp.value != fx.mem_write[1]):
            raise PredictorUnsound(f"mem prediction {mp.value} for {s.inst} is wrong")
        if s.inst.dest is not None:
            writer[s.inst.dest] = j
        if fx.mem_write is not None:
            store_at[fx.mem_write[0]] = j
        if fx.reg_write is not None:
            regs[fx.reg_write[0]] = fx.reg_write[1]
        if fx.mem_write is not None:
            mem[fx.mem_write[0]] = fx.mem_write[1]
        recent = recent.after(s.inst, fx)
        retired.append((s.pc, s.bits, fx))
        prev_fx = fx
    lats = [LATENCY[s.inst.op] for s in plan.slots]
    if config.timing == "max":
        cost = max(lats)
    else:
        cost = 1 + sum(l - 1 for l in lats)
    if plan.predictions:
        cost = max(cost, config.l_p)
    new = ProcessorState(prev_fx.next_pc, tuple(regs), tuple(mem), prev_fx.halted)
    return new, cost, recent, retired


@dataclass
class SimResult:
    program: str
    p: int
    final_state: ProcessorState
    instructions: int
    cycles: int
    metrics: dict[str, PredictionMetrics]
    stalls: dict[str, int]
    non_head: int
    trace: list[TraceRecord] = field(default_factory=list, repr=False)
    cycle_log: list[CycleRecord] = field(default_factory=list, repr=False)

    @property
    def cpi(self) -> Fraction:
        return Fraction(self.cycles, self.instructions) if self.instructions else Fraction(0)

    @property
    def coverage(self) -> Fraction:
        """Fraction of retired instructions that issued behind a group head."""
        return Fraction(self.non_head, self.instructions) if self.instructions else Fraction(0)


def run_superscalar(
    program: Program,
    bundle: PredictorBundle,
    config: SuperscalarConfig = SuperscalarConfig(),
    max_cycles: int = 10_000_000,
    keep_log: bool = False,
) -> SimResult:
    if max_cycles <= 0:
        raise ValueError("max_cycles must be positive")
    preds = _Predictors(bundle)
    state = ProcessorState.initial(program)
    recent = RecentState()
    cycles = n = non_head = 0
    stalls: Counter = Counter()
    needs = {t: [0, 0, 0] for t in TARGETS}
    trace: list[TraceRecord] = []
    log: list[CycleRecord] = []
    groups = 0
    while not state.halted:
        if cycles >= max_cycles:
            res = SimResult(program.name, config.p, state, n, cycles, {}, dict(stalls), non_head, trace, log)
            raise CycleLimitExceeded(f"no HALT within {max_cycles} cycles", res)
        plan = plan_issue(state, program, preds, config, recent)
        state, cost, recent, retired = step_group(state, plan, config, recent)
        if plan.stall_reason:
            stalls[plan.stall_reason] += 1
        for t, c in plan.needs.items():
            for k in range(3):
                needs[t][k] += c[k]
        if keep_log:
            log.append(
                CycleRecord(
                    groups,
                    plan.m,
                    tuple(range(n, n + plan.m)),
                    tuple((p.target, p.input, p.value) for p in plan.predictions),
                    plan.stall_reason,
                    cost,
                )
            )
        for pc, bits, fx in retired:
            trace.append(TraceRecord(n, pc, bits, fx.reg_write, fx.mem_write, fx.next_pc, LATENCY[decode(bits).op]))
            n += 1
        non_head += plan.m - 1
        cycles += cost
        groups += 1
    metrics = {t: PredictionMetrics(tp=c[0], fn=c[1], tn=c[2]) for t, c in needs.items()}
    return SimResult(program.name, config.p, state, n, cycles, metrics, dict(stalls), non_head, trace, log)


@dataclass
class EquivalenceReport:
    diffs: list[tuple[str, object, object]]

    @property
    def ok(self) -> bool:
        return not self.diffs

    def to_json(self):
        return "ok" if self.ok else [[str(a), str(b), str(c)] for a, b, c in self.diffs]


def compare_reference(program: Program, result: SimResult, reference: RunResult | None = None) -> EquivalenceReport:
    """Bit-compare the superscalar run against the single-cycle reference."""
    ref = reference if reference is not None else run_single(program)
    diffs = ref.final.diff(result.final_state)
    if ref.instructions != result.instructions:
        diffs.append(("instructions", ref.instructions, result.instructions))
    return EquivalenceReport(diffs)


def sim_report(result: SimResult, equivalence: EquivalenceReport) -> dict:
    return {
        "program": result.program,
        "p": result.p,
        "cycles": result.cycles,
        "instructions": result.instructions,
        "cpi": float(result.cpi),
        "coverage": {t: float(m.coverage) for t, m in sorted(result.metrics.items())},
        "sim_coverage": float(result.coverage),
        "stalls": {r: result.stalls.get(r, 0) for r in STALL_REASONS},
        "equivalence": equivalence.to_json(),
    }
