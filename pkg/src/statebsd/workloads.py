"""Deterministic MiniRV-16 workload generators and the default evaluation suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .asm import assemble
from .errors import GenerationFailed, StateBsdError
from .isa import Program, run_single


class WorkloadKind(str, Enum):
    RANDOM = "RANDOM"
    ARITH_CHAIN = "ARITH_CHAIN"
    MEMCOPY = "MEMCOPY"
    FIB = "FIB"
    BUBBLE_SORT = "BUBBLE_SORT"
    BRANCH_HEAVY = "BRANCH_HEAVY"


@dataclass(frozen=True)
class Workload:
    kind: WorkloadKind
    length: int
    seed: int = 0
    options: tuple[tuple[str, object], ...] = ()

    @property
    def name(self) -> str:
        extra = "".join(f"-{k}{v}" for k, v in self.options)
        return f"{self.kind.value.lower()}-{self.length}-s{self.seed}{extra}"

    def build(self) -> Program:
        return gen_program(self.kind, self.length, self.seed, name=self.name, **dict(self.options))

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "length": self.length, "seed": self.seed, "options": dict(self.options)}

    @classmethod
    def from_json(cls, d: dict) -> "Workload":
        return cls(WorkloadKind(d["kind"]), int(d["length"]), int(d.get("seed", 0)), tuple(sorted(d.get("options", {}).items())))


def load_const(rd: int, value: int) -> list[str]:
    """ADDI/ADD sequence putting ``0 <= value < 512`` into ``rd``."""
    if not 0 <= value < 512:
        raise ValueError("constant out of range")
    if value <= 31:
        return [f"ADDI r{rd}, r0, {value}"]
    out = [f"ADDI r{rd}, r0, {value >> 4}"]
    out += [f"ADD r{rd}, r{rd}, r{rd}"] * 4
    if value & 15:
        out.append(f"ADDI r{rd}, r{rd}, {value & 15}")
    return out


# counts r7 down and jumps back with JAL, whose reach exceeds a branch's
_LOOP_TAIL = ["ADDI r7, r7, -1", "BEQ r7, r0, 2", "JAL r0, top", "HALT"]


def _halts(program: Program, max_steps: int) -> bool:
    try:
        run_single(program, max_steps)
        return True
    except StateBsdError:
        return False


def _random(rng: np.random.Generator, length: int, density: float, mem_frac: float, branch_frac: float,
            mul: bool, iterations: int, window: int = 4) -> str:
    alu = ["ADD", "SUB", "AND", "OR", "XOR", "SLT"] + (["MUL"] if mul else [])
    written: list[int] = []  # destination of each emitted instruction
    body: list[str] = []

    def src() -> int:
        recent = [r for r in written[-(window - 1):] if r]
        if recent and rng.random() < density:
            return int(rng.choice(recent))
        stale = [r for r in range(1, 7) if r not in written[-window:]]
        if density == 0:
            return int(rng.choice(stale)) if stale and rng.random() < 0.5 else 0
        return int(rng.integers(0, 7))

    for i in range(length):
        u = rng.random()
        rd = int(rng.integers(1, 7))
        remaining = length - i - 1
        if u < branch_frac and remaining >= 1:
            off = int(rng.integers(1, min(4, remaining + 1) + 1))
            op = rng.choice(["BEQ", "BNE", "JAL"])
            if op == "JAL":
                body.append(f"JAL r0, {off}")
            else:
                body.append(f"{op} r{src()}, r{src()}, {off}")
            written.append(0)
        elif u < branch_frac + mem_frac:
            addr = int(rng.integers(0, 8))
            if rng.random() < 0.5:
                body.append(f"SW r{src()}, {addr}(r0)")
                written.append(0)
            else:
                body.append(f"LW r{rd}, {addr}(r0)")
                written.append(rd)
        elif rng.random() < 0.3:
            body.append(f"ADDI r{rd}, r{src()}, {int(rng.integers(-8, 9))}")
            written.append(rd)
        else:
            body.append(f"{rng.choice(alu)} r{rd}, r{src()}, r{src()}")
            written.append(rd)
    if iterations <= 1:
        return "\n".join(body + ["HALT"])
    # r7 is reserved for the loop counter
    return "\n".join(load_const(7, iterations) + ["top:"] + body + _LOOP_TAIL)


def _arith_chain(rng: np.random.Generator, length: int, move_frac: float = 0.7) -> str:
    lines = [f"ADDI r1, r0, {int(rng.integers(1, 32))}"]
    for i in range(1, length):
        rp, rd = (i - 1) % 7 + 1, i % 7 + 1
        if rng.random() < move_frac:
            form = int(rng.integers(6))
            lines.append([
                f"ADD r{rd}, r{rp}, r0",
                f"OR r{rd}, r{rp}, r{rp}",
                f"AND r{rd}, r{rp}, r{rp}",
                f"XOR r{rd}, r{rp}, r0",
                f"SUB r{rd}, r{rp}, r0",
                f"ADDI r{rd}, r{rp}, 0",
            ][form])
        else:
            form = int(rng.integers(4))
            imm = int(rng.choice([v for v in range(-8, 9) if v]))
            lines.append([
                f"ADDI r{rd}, r{rp}, {imm}",
                f"ADD r{rd}, r{rp}, r{rd}",
                f"XOR r{rd}, r{rp}, r{rd}",
                f"MUL r{rd}, r{rp}, r{rd}",
            ][form])
    return "\n".join(lines + ["HALT"])


def _memcopy(rng: np.random.Generator, n: int, passes: int) -> str:
    src, dst = 8, 8 + n
    data = [f".data {src + k} {int(rng.integers(0, 1 << 16))}" for k in range(n)]
    return "\n".join(
        data
        + load_const(6, passes)
        + ["again:"]
        + load_const(4, src)
        + load_const(5, dst)
        + load_const(2, n)
        + [
            "loop: LW r3, 0(r4)",
            "SW r3, 0(r5)",
            "LW r1, 0(r5)",       # read back what was just stored
            "ADD r7, r7, r1",     # checksum
            "ADDI r4, r4, 1",
            "ADDI r5, r5, 1",
            "ADDI r2, r2, -1",
            "BNE r2, r0, loop",
            "ADDI r6, r6, -1",
            "BNE r6, r0, again",
            "HALT",
        ]
    )


def _fib(n: int) -> str:
    return "\n".join(
        ["ADDI r1, r0, 0", "ADDI r2, r0, 1"]
        + load_const(3, n)
        + [
            "loop: BEQ r3, r0, done",
            "ADD r4, r1, r2",
            "ADD r1, r2, r0",
            "ADD r2, r4, r0",
            "ADDI r3, r3, -1",
            "JAL r0, loop",
            "done: HALT",
        ]
    )


def _bubble(rng: np.random.Generator, n: int) -> str:
    data = [f".data {k} {int(rng.integers(0, 1000))}" for k in range(n)]
    return "\n".join(
        data
        + load_const(1, n - 1)
        + [
            "outer: BEQ r1, r0, done",
            "ADDI r2, r0, 0",
            "inner: BEQ r2, r1, next",
            "LW r3, 0(r2)",
            "LW r4, 1(r2)",
            "SLT r5, r4, r3",
            "BEQ r5, r0, keep",
            "SW r4, 0(r2)",
            "SW r3, 1(r2)",
            "keep: ADDI r2, r2, 1",
            "JAL r0, inner",
            "next: ADDI r1, r1, -1",
            "JAL r0, outer",
            "done: HALT",
        ]
    )


def _branch_heavy(rng: np.random.Generator, length: int, iterations: int) -> str:
    body: list[str] = []
    for _ in range(length):
        g = int(rng.integers(6))
        a, b = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        if g == 0:
            body += ["JAL r0, 2", f"ADDI r{a}, r{a}, 1"]           # always skips
        elif g == 1:
            body += ["BEQ r0, r0, 2", f"ADDI r{a}, r{a}, 3"]       # always taken
        elif g == 2:
            body += [f"BNE r{a}, r{a}, 2", f"ADDI r{a}, r{b}, 1"]  # never taken
        elif g == 3:
            body += [f"BEQ r{a}, r{b}, 2", f"XOR r{a}, r{a}, r{b}"]  # data dependent
        elif g == 4:
            body += [f"BNE r{a}, r7, 1"]                           # target == fall-through
        else:
            body += [f"ADD r{a}, r{b}, r7"]
    return "\n".join(load_const(7, iterations) + ["top:"] + body + _LOOP_TAIL)


def gen_program(kind: WorkloadKind | str, length: int, seed: int = 0, name: str = "", **opts) -> Program:
    """Deterministic program of the given kind.

    ``length`` is the body size (RANDOM, ARITH_CHAIN, BRANCH_HEAVY), the
    element count (MEMCOPY, BUBBLE_SORT) or ``n`` for FIB.
    """
    kind = WorkloadKind(kind)
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    retries = int(opts.pop("retries", 20))
    max_steps = int(opts.pop("max_steps", 200_000))
    for _ in range(retries):
        if kind is WorkloadKind.RANDOM:
            text = _random(
                rng,
                length,
                density=float(opts.get("density", 0.5)),
                mem_frac=float(opts.get("mem_frac", 0.2)),
                branch_frac=float(opts.get("branch_frac", 0.1)),
                mul=bool(opts.get("mul", True)),
                iterations=int(opts.get("iterations", 1)),
            )
        elif kind is WorkloadKind.ARITH_CHAIN:
            text = _arith_chain(rng, length, float(opts.get("move_frac", 0.7)))
        elif kind is WorkloadKind.MEMCOPY:
            text = _memcopy(rng, length, int(opts.get("passes", 1)))
        elif kind is WorkloadKind.FIB:
            text = _fib(length)
        elif kind is WorkloadKind.BUBBLE_SORT:
            text = _bubble(rng, length)
        else:
            text = _branch_heavy(rng, length, int(opts.get("iterations", 20)))
        try:
            prog = assemble(text, name=name or f"{kind.value.lower()}-{length}-s{seed}")
        except StateBsdError:
            continue
        if _halts(prog, max_steps):
            return prog
    raise GenerationFailed(f"no valid {kind.value} program after {retries} attempts")


def default_suite(seed: int = 0) -> list[Workload]:
    """Covers every kind; roughly 35k retired instructions per simulation pass."""
    W, K = Workload, WorkloadKind
    return [
        W(K.RANDOM, 60, seed, (("iterations", 120),)),
        W(K.RANDOM, 60, seed + 1, (("density", 0.9), ("iterations", 120))),
        W(K.RANDOM, 63, seed + 2, (("branch_frac", 0.0), ("density", 0.0), ("mem_frac", 0.0), ("mul", False))),
        W(K.ARITH_CHAIN, 200, seed),
        W(K.ARITH_CHAIN, 200, seed + 1),
        W(K.MEMCOPY, 40, seed, (("passes", 24),)),
        W(K.FIB, 500, seed),
        W(K.BUBBLE_SORT, 36, seed),
        W(K.BRANCH_HEAVY, 30, seed, (("iterations", 150),)),
    ]
