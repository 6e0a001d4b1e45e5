import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import probe_sound_sources
from statebsd.elements import (
    POOL,
    UNIVERSE,
    RecentState,
    element_values,
    producing_element,
    sound_matrix,
    sound_sources,
    source_value,
    sources_for,
)
from statebsd.isa import Instruction, Op, encode

# columns the hand-derived table is expected to be complete on
COMPLETE = frozenset([f"GPR{k}" for k in range(8)] + ["IMM", "PC+1", "PC+IMM"])


def test_pool_is_the_18_candidates():
    assert len(POOL) == 18 and len(set(POOL)) == 18
    assert POOL[0] == "PC" and POOL[-1] == "LASTBRANCH"


def test_sources_for():
    assert sources_for({"GPR3", "GPR1"}) == ("GPR1", "GPR3", "IMM")
    assert sources_for({"PC"}) == ("PC", "IMM", "PC+1", "PC+IMM")


def test_matrix_shape_and_readonly():
    m = sound_matrix("gpr")
    assert m.shape == (1 << 16, len(UNIVERSE)) and m.dtype == bool
    with pytest.raises(ValueError):
        m[0, 0] = True


def _check(target, e):
    claimed = sound_sources(target, e)
    probed = probe_sound_sources(target, e)
    if probed is None:
        return
    # every claimed source really is an identity...
    assert claimed <= probed, (target, hex(e), claimed, probed)
    # ...and no register/immediate/pc identity is missed
    assert (probed & COMPLETE) <= claimed, (target, hex(e), claimed, probed)


@pytest.mark.parametrize("target", ["pc", "gpr", "mem"])
def test_matrix_against_probing_sample(target):
    rng = np.random.default_rng(11)
    for e in rng.integers(0, 1 << 16, 600).tolist():
        _check(target, e)


@settings(max_examples=300)
@given(st.sampled_from(["pc", "gpr", "mem"]), st.integers(0, 0xFFFF))
def test_matrix_against_probing(target, e):
    _check(target, e)


@pytest.mark.parametrize(
    "target,inst,expected",
    [
        ("gpr", Instruction(Op.ADD, rd=2, rs1=1, rs2=0), {"GPR1"}),
        ("gpr", Instruction(Op.XOR, rd=2, rs1=3, rs2=3), {"GPR0", "IMM"}),
        ("gpr", Instruction(Op.ADDI, rd=1, rs1=0, imm=5), {"IMM"}),
        ("gpr", Instruction(Op.ADDI, rd=1, rs1=4, imm=0), {"GPR4"}),
        ("gpr", Instruction(Op.JAL, rd=1, imm=3), {"PC+1"}),
        ("gpr", Instruction(Op.ADD, rd=0, rs1=1, rs2=0), set()),
        ("mem", Instruction(Op.SW, rs2=5, rs1=1, imm=2), {"GPR5"}),
        ("pc", Instruction(Op.ADD, rd=1, rs1=2, rs2=3), {"PC+1"}),
        ("pc", Instruction(Op.BEQ, rs1=2, rs2=2, imm=4), {"PC+IMM"}),
        ("pc", Instruction(Op.BNE, rs1=2, rs2=3, imm=1), {"PC+1", "PC+IMM"}),
        ("pc", Instruction(Op.BEQ, rs1=2, rs2=3, imm=4), set()),
        ("pc", Instruction(Op.HALT), set()),
    ],
)
def test_known_identities(target, inst, expected):
    got = sound_sources(target, encode(inst))
    assert expected <= got
    assert got & COMPLETE == expected & COMPLETE


def test_invalid_opcodes_have_no_sources():
    for t in ("pc", "gpr", "mem"):
        assert not sound_matrix(t)[14 << 12 :].any()


def test_producing_element():
    assert producing_element("gpr", encode(Instruction(Op.ADDI, rd=1, imm=5))) is None
    assert producing_element("mem", encode(Instruction(Op.SW, rs2=1))) == "GPR1"
    assert producing_element("pc", encode(Instruction(Op.ADD, rd=1))) == "PC"
    assert producing_element("gpr", encode(Instruction(Op.MUL, rd=1, rs1=2, rs2=3))) is None


def test_element_values_and_source_value():
    recent = RecentState((1, 2, 3, 4), (5, 6, 7, 8), 9)
    vals = element_values(10, (0, 11, 12, 13, 14, 15, 16, 17), recent)
    assert set(vals) == set(POOL)
    assert vals["LASTLOAD2"] == 3 and vals["LASTSTOREADDR0"] == 5 and vals["LASTBRANCH"] == 9
    e = encode(Instruction(Op.BEQ, rs1=1, rs2=2, imm=-3))
    assert source_value("PC+IMM", e, vals) == 7
    assert source_value("PC+1", e, vals) == 11
    assert source_value("IMM", e, vals) == 0xFFFD
    assert source_value("PC+1", e, {}) is None
