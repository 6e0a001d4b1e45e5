"""MiniRV-16: a 16-bit toy RISC ISA and its single-cycle reference processor.

Machine: 8 general registers (r0 reads as zero), 256-word data memory,
word-indexed program counter, separate instruction memory of at most 256
words. All arithmetic wraps modulo 2**16.

Bit layout, ``[15:12]`` is always the opcode::

    R  ADD SUB AND OR XOR SLT MUL   rd[11:9] rs1[8:6] rs2[5:3] pad[2:0]
    I  ADDI LW                      rd[11:9] rs1[8:6] imm6[5:0]
    S  SW                           rs2[11:9] rs1[8:6] imm6[5:0]
    B  BEQ BNE                      rs1[11:9] rs2[8:6] imm6[5:0]
    J  JAL                          rd[11:9] imm9[8:0]
       HALT                         pad[11:0]

``pad`` bits carry no meaning but are kept by ``decode`` so that every
valid encoding round-trips through ``encode``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Callable, Iterable, NamedTuple, Sequence

from .errors import (
    CorruptTrace,
    FieldOutOfRange,
    InvalidOpcode,
    MemOutOfRange,
    PcOutOfRange,
    ProcessorHalted,
    StepLimitExceeded,
)

WORD_BITS = 16
WORD_MASK = 0xFFFF
NUM_REGS = 8
MEM_WORDS = 256
IMEM_WORDS = 256


class Op(IntEnum):
    ADD = 0
    SUB = 1
    AND = 2
    OR = 3
    XOR = 4
    SLT = 5
    ADDI = 6
    LW = 7
    SW = 8
    BEQ = 9
    BNE = 10
    JAL = 11
    MUL = 12
    HALT = 13


R_OPS = frozenset({Op.ADD, Op.SUB, Op.AND, Op.OR, Op.XOR, Op.SLT, Op.MUL})
I_OPS = frozenset({Op.ADDI, Op.LW})
B_OPS = frozenset({Op.BEQ, Op.BNE})
CONTROL_OPS = frozenset({Op.BEQ, Op.BNE, Op.JAL})
MEM_OPS = frozenset({Op.LW, Op.SW})

LATENCY = {op: 1 for op in Op}
LATENCY.update({Op.LW: 2, Op.SW: 2, Op.MUL: 3})


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value & (1 << (bits - 1)) else value


def signed16(value: int) -> int:
    return sext(value, WORD_BITS)


@dataclass(frozen=True)
class Instruction:
    op: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    pad: int = 0

    def __str__(self):
        op = self.op
        if op in R_OPS:
            return f"{op.name} r{self.rd}, r{self.rs1}, r{self.rs2}"
        if op is Op.ADDI:
            return f"ADDI r{self.rd}, r{self.rs1}, {self.imm}"
        if op is Op.LW:
            return f"LW r{self.rd}, {self.imm}(r{self.rs1})"
        if op is Op.SW:
            return f"SW r{self.rs2}, {self.imm}(r{self.rs1})"
        if op in B_OPS:
            return f"{op.name} r{self.rs1}, r{self.rs2}, {self.imm}"
        if op is Op.JAL:
            return f"JAL r{self.rd}, {self.imm}"
        return "HALT"

    @property
    def sources(self) -> tuple[int, ...]:
        """Registers read by this instruction (r0 excluded, duplicates removed)."""
        op = self.op
        if op in R_OPS or op in B_OPS or op is Op.SW:
            regs = (self.rs1, self.rs2)
        elif op in I_OPS:
            regs = (self.rs1,)
        else:
            regs = ()
        return tuple(sorted({r for r in regs if r != 0}))

    @property
    def dest(self) -> int | None:
        """Register written, or None (writes to r0 are discarded)."""
        if self.op in R_OPS or self.op in I_OPS or self.op is Op.JAL:
            return self.rd or None
        return None


def decode(e: int) -> Instruction:
    if not 0 <= e <= WORD_MASK:
        raise FieldOutOfRange(f"encoding {e!r} is not a 16-bit word")
    code = e >> 12
    if code > Op.HALT:
        raise InvalidOpcode(f"opcode {code} in {e:#06x} is reserved")
    op = Op(code)
    a, b, c = (e >> 9) & 7, (e >> 6) & 7, (e >> 3) & 7
    if op in R_OPS:
        return Instruction(op, rd=a, rs1=b, rs2=c, pad=e & 7)
    if op in I_OPS:
        return Instruction(op, rd=a, rs1=b, imm=sext(e, 6))
    if op is Op.SW:
        return Instruction(op, rs2=a, rs1=b, imm=sext(e, 6))
    if op in B_OPS:
        return Instruction(op, rs1=a, rs2=b, imm=sext(e, 6))
    if op is Op.JAL:
        return Instruction(op, rd=a, imm=sext(e, 9))
    return Instruction(op, pad=e & 0xFFF)


def _check(name: str, value: int, lo: int, hi: int):
    if not lo <= value <= hi:
        raise FieldOutOfRange(f"{name}={value} outside [{lo}, {hi}]")


def encode(i: Instruction) -> int:
    op = Op(i.op)
    for name in ("rd", "rs1", "rs2"):
        _check(name, getattr(i, name), 0, 7)
    if op in R_OPS:
        _check("pad", i.pad, 0, 7)
        return op << 12 | i.rd << 9 | i.rs1 << 6 | i.rs2 << 3 | i.pad
    if op is Op.JAL:
        _check("imm9", i.imm, -256, 255)
        return op << 12 | i.rd << 9 | (i.imm & 0x1FF)
    if op is Op.HALT:
        _check("pad", i.pad, 0, 0xFFF)
        return op << 12 | i.pad
    _check("imm6", i.imm, -32, 31)
    if op in I_OPS:
        return op << 12 | i.rd << 9 | i.rs1 << 6 | (i.imm & 0x3F)
    if op is Op.SW:
        return op << 12 | i.rs2 << 9 | i.rs1 << 6 | (i.imm & 0x3F)
    return op << 12 | i.rs1 << 9 | i.rs2 << 6 | (i.imm & 0x3F)


def latency(state: "ProcessorState | None", e: int) -> int:
    """Cycles taken by ``e``; the state argument is accepted but unused."""
    return LATENCY[decode(e).op]


@dataclass(frozen=True)
class ProcessorState:
    pc: int = 0
    regs: tuple[int, ...] = (0,) * NUM_REGS
    mem: tuple[int, ...] = (0,) * MEM_WORDS
    halted: bool = False

    @classmethod
    def initial(cls, program: "Program") -> "ProcessorState":
        mem = [0] * MEM_WORDS
        for addr, value in program.data_init:
            mem[addr] = value & WORD_MASK
        return cls(pc=program.entry_pc, mem=tuple(mem))

    def diff(self, other: "ProcessorState") -> list[tuple[str, object, object]]:
        out = []
        if self.pc != other.pc:
            out.append(("pc", self.pc, other.pc))
        for k, (a, b) in enumerate(zip(self.regs, other.regs)):
            if a != b:
                out.append((f"r{k}", a, b))
        for k, (a, b) in enumerate(zip(self.mem, other.mem)):
            if a != b:
                out.append((f"mem[{k}]", a, b))
        if self.halted != other.halted:
            out.append(("halted", self.halted, other.halted))
        return out


class Effects(NamedTuple):
    """What one instruction does to the architectural state."""

    reg_write: tuple[int, int] | None
    mem_write: tuple[int, int] | None
    next_pc: int
    halted: bool
    load_addr: int | None


def effective_address(base: int, imm: int) -> int:
    addr = (base + imm) & WORD_MASK
    if addr >= MEM_WORDS:
        raise MemOutOfRange(f"address {addr} >= {MEM_WORDS}")
    return addr


def execute(
    inst: Instruction,
    pc: int,
    read_reg: Callable[[int], int],
    read_mem: Callable[[int], int],
) -> Effects:
    """Evaluate ``inst`` against operand accessors; the core of every simulator here."""
    op = inst.op
    nxt = (pc + 1) & WORD_MASK
    rw = mw = load_addr = None
    if op in R_OPS:
        a, b = read_reg(inst.rs1), read_reg(inst.rs2)
        if op is Op.ADD:
            v = a + b
        elif op is Op.SUB:
            v = a - b
        elif op is Op.AND:
            v = a & b
        elif op is Op.OR:
            v = a | b
        elif op is Op.XOR:
            v = a ^ b
        elif op is Op.SLT:
            v = int(signed16(a) < signed16(b))
        else:
            v = a * b
        rw = (inst.rd, v & WORD_MASK)
    elif op is Op.ADDI:
        rw = (inst.rd, (read_reg(inst.rs1) + inst.imm) & WORD_MASK)
    elif op is Op.LW:
        load_addr = effective_address(read_reg(inst.rs1), inst.imm)
        rw = (inst.rd, read_mem(load_addr))
    elif op is Op.SW:
        mw = (effective_address(read_reg(inst.rs1), inst.imm), read_reg(inst.rs2))
    elif op in B_OPS:
        equal = read_reg(inst.rs1) == read_reg(inst.rs2)
        if equal == (op is Op.BEQ):
            nxt = (pc + inst.imm) & WORD_MASK
    elif op is Op.JAL:
        rw = (inst.rd, nxt)
        nxt = (pc + inst.imm) & WORD_MASK
    else:
        return Effects(None, None, pc, True, None)
    if rw is not None and rw[0] == 0:
        rw = None
    return Effects(rw, mw, nxt, False, load_addr)


def apply_effects(state: ProcessorState, fx: Effects) -> ProcessorState:
    regs, mem = state.regs, state.mem
    if fx.reg_write is not None:
        r, v = fx.reg_write
        regs = regs[:r] + (v,) + regs[r + 1:]
    if fx.mem_write is not None:
        a, v = fx.mem_write
        mem = mem[:a] + (v,) + mem[a + 1:]
    return ProcessorState(fx.next_pc, regs, mem, fx.halted)


def step(s: ProcessorState, e: int) -> ProcessorState:
    if s.halted:
        raise ProcessorHalted("cannot step a halted processor")
    fx = execute(decode(e), s.pc, s.regs.__getitem__, s.mem.__getitem__)
    return apply_effects(s, fx)


@dataclass(frozen=True)
class Program:
    instructions: tuple[int, ...]
    data_init: tuple[tuple[int, int], ...] = ()
    entry_pc: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "data_init", tuple((int(a), int(v)) for a, v in self.data_init))
        if len(self.instructions) > IMEM_WORDS:
            raise FieldOutOfRange(f"{len(self.instructions)} instructions > {IMEM_WORDS}")
        for addr, _ in self.data_init:
            _check("data address", addr, 0, MEM_WORDS - 1)

    def fetch(self, pc: int) -> int:
        if not 0 <= pc < len(self.instructions):
            raise PcOutOfRange(f"pc {pc} outside program of {len(self.instructions)} words")
        return self.instructions[pc]


@dataclass(frozen=True)
class TraceRecord:
    step: int
    pc_before: int
    inst: int
    reg_write: tuple[int, int] | None
    mem_write: tuple[int, int] | None
    next_pc: int
    latency: int

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "pc": self.pc_before,
            "inst": f"{self.inst:04x}",
            "rw": list(self.reg_write) if self.reg_write else None,
            "mw": list(self.mem_write) if self.mem_write else None,
            "npc": self.next_pc,
            "lat": self.latency,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        try:
            return cls(
                step=int(d["step"]),
                pc_before=int(d["pc"]),
                inst=int(d["inst"], 16),
                reg_write=tuple(d["rw"]) if d["rw"] is not None else None,
                mem_write=tuple(d["mw"]) if d["mw"] is not None else None,
                next_pc=int(d["npc"]),
                latency=int(d["lat"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptTrace(f"bad trace record {d!r}") from exc


@dataclass
class RunResult:
    final: ProcessorState
    trace: list[TraceRecord] = field(default_factory=list)

    @property
    def instructions(self) -> int:
        return len(self.trace)

    @property
    def cycles(self) -> int:
        return sum(r.latency for r in self.trace)

    @property
    def cpi(self) -> Fraction:
        return Fraction(self.cycles, self.instructions) if self.trace else Fraction(0)


def run_single(program: Program, max_steps: int = 1_000_000) -> RunResult:
    """Run ``program`` on the single-cycle reference until HALT.

    Raises ``StepLimitExceeded`` (with the partial ``RunResult`` attached)
    when ``max_steps`` instructions retire without halting.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    init = ProcessorState.initial(program)
    pc, regs, mem = init.pc, list(init.regs), list(init.mem)
    trace: list[TraceRecord] = []
    halted = False
    for n in range(max_steps):
        e = program.fetch(pc)
        inst = decode(e)
        fx = execute(inst, pc, regs.__getitem__, mem.__getitem__)
        if fx.reg_write is not None:
            regs[fx.reg_write[0]] = fx.reg_write[1]
        if fx.mem_write is not None:
            mem[fx.mem_write[0]] = fx.mem_write[1]
        trace.append(TraceRecord(n, pc, e, fx.reg_write, fx.mem_write, fx.next_pc, LATENCY[inst.op]))
        pc, halted = fx.next_pc, fx.halted
        if halted:
            break
    result = RunResult(ProcessorState(pc, tuple(regs), tuple(mem), halted), trace)
    if not halted:
        raise StepLimitExceeded(f"no HALT within {max_steps} steps", result)
    return result


def replay(initial: ProcessorState, trace: Iterable[TraceRecord]) -> ProcessorState:
    """Re-execute a trace with ``step``, checking every recorded field."""
    s = initial
    for k, rec in enumerate(trace):
        if rec.step != k or rec.pc_before != s.pc:
            raise CorruptTrace(f"record {k} does not follow the previous state")
        fx = execute(decode(rec.inst), s.pc, s.regs.__getitem__, s.mem.__getitem__)
        if (fx.reg_write, fx.mem_write, fx.next_pc) != (rec.reg_write, rec.mem_write, rec.next_pc):
            raise CorruptTrace(f"record {k} disagrees with the reference step")
        if rec.latency != LATENCY[decode(rec.inst).op]:
            raise CorruptTrace(f"record {k} has latency {rec.latency}")
        s = step(s, rec.inst)
    return s


def write_trace(trace: Sequence[TraceRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_trace(path) -> list[TraceRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptTrace(f"{path}: {exc}") from exc
            out.append(TraceRecord.from_json(d))
    return out
