"""Processor state elements, prediction sources, and the soundness oracle.

A *state element* is one word of processor state the selector may buffer:
the PC, a general register, or a recent-value slot. A predictor does not
compute values; it picks a *source* whose value it claims equals the
dependent datum. Sources are the buffered elements plus a few values wired
straight from the producing instruction:

``IMM``     the instruction's sign-extended immediate
``PC+1``    fall-through address of the instruction (needs ``PC`` buffered)
``PC+IMM``  branch/jump target (needs ``PC`` buffered)

``sound_matrix(target)`` is the exact ground truth used to verify
predictors: entry ``[e, s]`` is true iff source ``s`` equals the datum
that instruction ``e`` produces for ``target`` in *every* machine state.
It is derived by hand from the ISA semantics (register identities such as
``x + 0 == x`` and ``x ^ x == 0``); tests cross-check it against the
reference simulator on random states.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Mapping

import numpy as np

from .isa import WORD_MASK, Instruction, Op, decode, sext

TARGETS = ("pc", "gpr", "mem")

POOL: tuple[str, ...] = (
    ("PC",)
    + tuple(f"GPR{k}" for k in range(8))
    + tuple(f"LASTLOAD{k}" for k in range(4))
    + tuple(f"LASTSTOREADDR{k}" for k in range(4))
    + ("LASTBRANCH",)
)
POOL_INDEX = {name: k for k, name in enumerate(POOL)}
DERIVED = ("IMM", "PC+1", "PC+IMM")
UNIVERSE = POOL + DERIVED
UNIVERSE_INDEX = {name: k for k, name in enumerate(UNIVERSE)}
RECENT_SLOTS = 4


def check_element(name: str) -> str:
    if name not in POOL_INDEX:
        raise ValueError(f"unknown state element {name!r}")
    return name


def sources_for(members) -> tuple[str, ...]:
    """Source list a speculator can select from, given buffered elements."""
    members = set(members)
    out = [m for m in POOL if m in members]
    out.append("IMM")
    if "PC" in members:
        out += ["PC+1", "PC+IMM"]
    return tuple(out)


def immediate(inst: Instruction) -> int:
    return inst.imm if inst.op not in (Op.HALT,) else 0


@dataclass(frozen=True)
class RecentState:
    """Recent-value history mirrored into ``LAST*`` elements (slot 0 newest)."""

    loads: tuple[int, ...] = (0,) * RECENT_SLOTS
    store_addrs: tuple[int, ...] = (0,) * RECENT_SLOTS
    last_branch: int = 0

    def after(self, inst: Instruction, fx) -> "RecentState":
        out = self
        if fx.load_addr is not None:
            loaded = fx.reg_write[1] if fx.reg_write else None
            if loaded is not None:
                out = replace(out, loads=(loaded,) + out.loads[:-1])
        if fx.mem_write is not None:
            out = replace(out, store_addrs=(fx.mem_write[0],) + out.store_addrs[:-1])
        if inst.op in (Op.BEQ, Op.BNE, Op.JAL):
            out = replace(out, last_branch=fx.next_pc)
        return out


def element_values(pc: int, regs, recent: RecentState) -> dict[str, int | None]:
    vals: dict[str, int | None] = {"PC": pc}
    for k in range(8):
        vals[f"GPR{k}"] = regs[k]
    for k in range(RECENT_SLOTS):
        vals[f"LASTLOAD{k}"] = recent.loads[k]
        vals[f"LASTSTOREADDR{k}"] = recent.store_addrs[k]
    vals["LASTBRANCH"] = recent.last_branch
    return vals


def source_value(name: str, inst_bits: int, entries: Mapping[str, int | None]) -> int | None:
    """Value of source ``name`` for the producer ``inst_bits``; None if unavailable."""
    if name == "IMM":
        try:
            return immediate(decode(inst_bits)) & WORD_MASK
        except Exception:
            return None
    if name in ("PC+1", "PC+IMM"):
        pc = entries.get("PC")
        if pc is None:
            return None
        if name == "PC+1":
            return (pc + 1) & WORD_MASK
        try:
            return (pc + immediate(decode(inst_bits))) & WORD_MASK
        except Exception:
            return None
    return entries.get(name)


def _fields():
    e = np.arange(1 << 16, dtype=np.int64)
    op = e >> 12
    a, b, c = (e >> 9) & 7, (e >> 6) & 7, (e >> 3) & 7
    imm6 = np.where(e & 0x20, (e & 0x3F) - 64, e & 0x3F)
    imm9 = np.where(e & 0x100, (e & 0x1FF) - 512, e & 0x1FF)
    return op, a, b, c, imm6, imm9


@lru_cache(maxsize=None)
def sound_matrix(target: str) -> np.ndarray:
    """Boolean ``(65536, len(UNIVERSE))`` soundness table for ``target``."""
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    op, a, b, c, imm6, imm9 = _fields()
    n = op.size
    out = np.zeros((n, len(UNIVERSE)), dtype=bool)
    gpr = np.array([UNIVERSE_INDEX[f"GPR{k}"] for k in range(8)])
    rows = np.arange(n)

    def mark_reg(mask, reg):
        idx = np.nonzero(mask)[0]
        out[idx, gpr[reg[idx]]] = True

    def mark(mask, name):
        out[mask, UNIVERSE_INDEX[name]] = True

    zero = np.zeros(n, dtype=np.int64)
    if target == "gpr":
        w = a != 0
        rs1, rs2 = b, c
        same = rs1 == rs2
        is_ = {o: (op == o) & w for o in Op}
        mark_reg(is_[Op.ADD] & (rs2 == 0), rs1)
        mark_reg(is_[Op.ADD] & (rs1 == 0), rs2)
        mark_reg(is_[Op.SUB] & (rs2 == 0), rs1)
        mark_reg(is_[Op.SUB] & same, zero)
        mark_reg(is_[Op.AND] & same, rs1)
        mark_reg(is_[Op.AND] & ((rs1 == 0) | (rs2 == 0)), zero)
        mark_reg(is_[Op.OR] & (same | (rs2 == 0)), rs1)
        mark_reg(is_[Op.OR] & (rs1 == 0), rs2)
        mark_reg(is_[Op.XOR] & same, zero)
        mark_reg(is_[Op.XOR] & (rs2 == 0), rs1)
        mark_reg(is_[Op.XOR] & (rs1 == 0), rs2)
        mark_reg(is_[Op.SLT] & same, zero)
        mark_reg(is_[Op.MUL] & ((rs1 == 0) | (rs2 == 0)), zero)
        mark_reg(is_[Op.ADDI] & (imm6 == 0), rs1)
        mark(is_[Op.ADDI] & (rs1 == 0), "IMM")
        mark(is_[Op.JAL], "PC+1")
    elif target == "mem":
        mark_reg(op == Op.SW, a)
    else:
        valid = op <= Op.HALT
        control = (op == Op.BEQ) | (op == Op.BNE) | (op == Op.JAL)
        mark(valid & ~control & (op != Op.HALT), "PC+1")
        same = a == b
        mark((op == Op.BEQ) & same, "PC+IMM")
        mark((op == Op.BNE) & same, "PC+1")
        branch = (op == Op.BEQ) | (op == Op.BNE)
        mark(branch & (imm6 == 1), "PC+1")
        mark(branch & (imm6 == 1), "PC+IMM")
        mark(op == Op.JAL, "PC+IMM")
        mark((op == Op.JAL) & (imm9 == 1), "PC+1")
    # sources that coincide for this encoding: IMM == GPR0 when the immediate
    # is zero, PC+IMM == PC+1 when it is one
    r_op = (op <= Op.XOR) | (op == Op.SLT) | (op == Op.MUL) | (op == Op.HALT)
    imm = np.where(op == Op.JAL, imm9, np.where(r_op, 0, imm6))
    valid = op <= Op.HALT
    g0, im, p1, pi = (UNIVERSE_INDEX[k] for k in ("GPR0", "IMM", "PC+1", "PC+IMM"))
    z = valid & (imm == 0) & (out[:, g0] | out[:, im])
    out[z, g0] = out[z, im] = True
    o = valid & (imm == 1) & (out[:, p1] | out[:, pi])
    out[o, p1] = out[o, pi] = True
    del rows
    out.setflags(write=False)
    return out


def sound_sources(target: str, inst_bits: int) -> frozenset[str]:
    row = sound_matrix(target)[inst_bits]
    return frozenset(UNIVERSE[k] for k in np.nonzero(row)[0])


def producing_element(target: str, inst_bits: int) -> str | None:
    """State element a dependent datum can be reused from, or None.

    None when the datum needs no buffered state (immediate) or when no
    element is guaranteed to hold it.
    """
    sound = sound_sources(target, inst_bits)
    if "IMM" in sound:
        return None
    if sound & {"PC+1", "PC+IMM"}:
        return "PC"
    for name in POOL:
        if name in sound:
            return name
    return None


# 'sext' re-exported for callers that build immediates by hand
__all__ = [
    "DERIVED",
    "POOL",
    "RecentState",
    "TARGETS",
    "UNIVERSE",
    "element_values",
    "producing_element",
    "sext",
    "sound_matrix",
    "sound_sources",
    "source_value",
    "sources_for",
]
