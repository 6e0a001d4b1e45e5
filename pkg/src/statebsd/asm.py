"""Two-pass assembler and disassembler for MiniRV-16 text.

Syntax::

    ; comment
    loop:  ADDI r1, r1, -1      ; rD, rS1, imm
           LW   r2, 3(r1)       ; rD, imm(rS1)
           SW   r2, 0(r3)       ; rSrc, imm(rBase)
           BNE  r1, r0, loop    ; label or signed offset
    .data 16 42
"""

from __future__ import annotations

import re

from .errors import AssemblyError, StateBsdError
from .isa import B_OPS, R_OPS, Instruction, Op, Program, decode, encode

_REG = re.compile(r"^r([0-7])$", re.IGNORECASE)
_MEM = re.compile(r"^(-?\w+)\((r[0-7])\)$", re.IGNORECASE)
_LABEL = re.compile(r"^([A-Za-z_.][\w.]*):")


def _reg(tok: str, lineno: int) -> int:
    m = _REG.match(tok)
    if not m:
        raise AssemblyError(f"line {lineno}: expected register, got {tok!r}")
    return int(m.group(1))


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AssemblyError(f"line {lineno}: expected integer, got {tok!r}") from None


def assemble(text: str, name: str = "") -> Program:
    labels: dict[str, int] = {}
    pending: list[tuple[int, int, str, list[str]]] = []
    data: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        while (m := _LABEL.match(line)):
            if m.group(1) in labels:
                raise AssemblyError(f"line {lineno}: duplicate label {m.group(1)!r}")
            labels[m.group(1)] = len(pending)
            line = line[m.end():].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        mnem = parts[0].upper()
        args = [a.strip() for a in parts[1].split(",")] if len(parts) > 1 else []
        if mnem == ".DATA":
            toks = line.split()[1:]
            if len(toks) != 2:
                raise AssemblyError(f"line {lineno}: .data takes <addr> <value>")
            data.append((_int(toks[0], lineno), _int(toks[1], lineno) & 0xFFFF))
            continue
        pending.append((lineno, len(pending), mnem, args))

    words = []
    for lineno, pc, mnem, args in pending:
        try:
            op = Op[mnem]
        except KeyError:
            raise AssemblyError(f"line {lineno}: unknown mnemonic {mnem!r}") from None

        def target(tok: str) -> int:
            if tok in labels:
                return labels[tok] - pc
            return _int(tok, lineno)

        def want(n: int):
            if len(args) != n:
                raise AssemblyError(f"line {lineno}: {mnem} takes {n} operands")

        if op in R_OPS:
            want(3)
            inst = Instruction(op, _reg(args[0], lineno), _reg(args[1], lineno), _reg(args[2], lineno))
        elif op is Op.ADDI:
            want(3)
            inst = Instruction(op, rd=_reg(args[0], lineno), rs1=_reg(args[1], lineno), imm=_int(args[2], lineno))
        elif op in (Op.LW, Op.SW):
            want(2)
            m = _MEM.match(args[1].replace(" ", ""))
            if not m:
                raise AssemblyError(f"line {lineno}: expected imm(rS1), got {args[1]!r}")
            r, base, imm = _reg(args[0], lineno), _reg(m.group(2), lineno), _int(m.group(1), lineno)
            if op is Op.LW:
                inst = Instruction(op, rd=r, rs1=base, imm=imm)
            else:
                inst = Instruction(op, rs2=r, rs1=base, imm=imm)
        elif op in B_OPS:
            want(3)
            inst = Instruction(op, rs1=_reg(args[0], lineno), rs2=_reg(args[1], lineno), imm=target(args[2]))
        elif op is Op.JAL:
            want(2)
            inst = Instruction(op, rd=_reg(args[0], lineno), imm=target(args[1]))
        else:
            want(0)
            inst = Instruction(op)
        try:
            words.append(encode(inst))
        except StateBsdError as exc:
            raise AssemblyError(f"line {lineno}: {exc}") from exc
    try:
        return Program(tuple(words), tuple(data), name=name)
    except StateBsdError as exc:
        raise AssemblyError(str(exc)) from exc


def disassemble(program: Program) -> str:
    """Inverse of ``assemble`` up to labels (offsets are emitted numerically)."""
    lines = [f".data {a} {v}" for a, v in program.data_init]
    lines += [str(decode(e)) for e in program.instructions]
    return "\n".join(lines) + "\n"
