"""Assemble a small program, run it on the reference processor, and read the trace."""

from statebsd.asm import assemble, disassemble
from statebsd.isa import run_single

SOURCE = """
.data 0 7
        LW   r1, 0(r0)      ; r1 = 7
        ADDI r2, r0, 1      ; r2 = 1 (accumulator)
loop:   MUL  r2, r2, r1     ; r2 *= r1
        ADDI r1, r1, -1
        BNE  r1, r0, loop
        SW   r2, 1(r0)      ; mem[1] = 7!
        HALT
"""

prog = assemble(SOURCE, name="factorial")
print(disassemble(prog))
result = run_single(prog)
print(f"{'step':>4} {'pc':>3}  instruction")
for rec in result.trace[:8]:
    print(f"{rec.step:>4} {rec.pc_before:>3}  {rec.inst:04x}  lat={rec.latency} rw={rec.reg_write} npc={rec.next_pc}")
print("...")
print(f"7! mod 2^16 = {result.final.mem[1]}")
print(f"{result.instructions} instructions, {result.cycles} cycles, CPI {result.cpi} = {float(result.cpi):.3f}")
