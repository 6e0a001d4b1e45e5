from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from statebsd.asm import assemble
from statebsd.bsd import Bsd, Speculation
from statebsd.elements import POOL, TARGETS, RecentState, sources_for
from statebsd.errors import CycleLimitExceeded, MalformedArtifact, PredictorUnsound
from statebsd.isa import ProcessorState, run_single
from statebsd.selector import SelectedStateSet, extract_dependencies
from statebsd.speculator import FACTORED, SemanticOracle, Speculator, index_bits, table_from_events, train_verified
from statebsd.superscalar import (
    PredictorBundle,
    SuperscalarConfig,
    compare_reference,
    plan_issue,
    run_superscalar,
    sim_report,
    step_group,
)
from statebsd.workloads import WorkloadKind, gen_program

ALL = frozenset(POOL[:9])  # PC and every register


def const_spec(target, members, source):
    """Speculator that always names ``source`` (no abstention)."""
    sources = sources_for(members)
    k = sources.index(source)
    bits = tuple(Bsd((Speculation((k >> i) & 1),), 16) for i in range(index_bits(len(sources))))
    return Speculator(target, FACTORED, sources, Bsd((Speculation(1),), 16), bits)


def stub_bundle(gpr_source=None, mem_source=None, members=ALL):
    sel = {t: SelectedStateSet(members, 18) for t in TARGETS}
    specs = {"pc": const_spec("pc", members, "PC+1")}
    for t, src in (("gpr", gpr_source), ("mem", mem_source)):
        specs[t] = const_spec(t, members, src) if src else Speculator.abstain_everywhere(t, sources_for(members))
    return PredictorBundle(sel, specs, {t: {"verified": True} for t in TARGETS})


def trained_bundle(programs):
    evs = []
    for p in programs:
        evs += extract_dependencies(run_single(p).trace, p)
    sel = {t: SelectedStateSet(ALL, 18) for t in TARGETS}
    specs, ver = {}, {}
    for t in TARGETS:
        specs[t], res = train_verified(table_from_events(evs, t, sources_for(ALL)), SemanticOracle(t))
        ver[t] = res.to_json()
    return PredictorBundle(sel, specs, ver)


_SHARED = []


def shared_bundle():
    """Bundle trained on one program of every kind; reused for unseen programs."""
    if not _SHARED:
        progs = [gen_program(k, {"MEMCOPY": 8, "FIB": 15, "BUBBLE_SORT": 8}.get(k.value, 30), 99) for k in WorkloadKind]
        _SHARED.append(trained_bundle(progs))
    return _SHARED[0]


def plan(text, bundle, p=2, ports=1):
    prog = assemble(text)
    return plan_issue(ProcessorState.initial(prog), prog, bundle, SuperscalarConfig(p, ports))


def test_gpr_raw_abstain_stalls():
    pl = plan("ADD r1, r2, r3\nADD r4, r1, r1\nHALT", stub_bundle())
    assert pl.m == 1 and pl.stall_reason == "GPR_RAW"


def test_gpr_prediction_enables_pair():
    pl = plan("ADD r1, r2, r3\nADD r4, r1, r1\nHALT", stub_bundle(gpr_source="GPR2"))
    assert pl.m == 2 and {p.target for p in pl.predictions} == {"pc", "gpr"}


def test_wrong_prediction_is_caught_at_execution():
    prog = assemble("ADDI r2, r0, 3\nADD r1, r2, r2\nADD r4, r1, r1\nHALT")
    bundle = stub_bundle(gpr_source="GPR2")
    with pytest.raises(PredictorUnsound):
        run_superscalar(prog, bundle, SuperscalarConfig(2))


def test_two_loads_share_one_port():
    pl = plan("LW r1, 0(r0)\nLW r2, 1(r0)\nHALT", stub_bundle())
    assert pl.m == 1 and pl.stall_reason == "STRUCTURAL"
    assert plan("LW r1, 0(r0)\nLW r2, 1(r0)\nHALT", stub_bundle(), ports=2).m == 2


def test_store_load_forwarding_needs_mem_prediction():
    text = "SW r3, 0(r0)\nLW r2, 0(r0)\nHALT"
    assert plan(text, stub_bundle(), ports=2).stall_reason == "MEM_RAW"
    pl = plan(text, stub_bundle(mem_source="GPR3"))
    assert pl.m == 2 and any(p.target == "mem" for p in pl.predictions)


def test_control_without_pc_prediction_stalls():
    b = stub_bundle()
    b = b.without("pc")
    pl = plan("ADD r1, r2, r3\nADD r4, r5, r6\nHALT", b)
    assert pl.m == 1 and pl.stall_reason == "CONTROL"


def test_group_costs():
    b = stub_bundle()
    for text, cost in (("ADD r1, r2, r3\nXOR r4, r5, r6\nHALT", 1), ("ADD r1, r2, r3\nLW r4, 0(r0)\nHALT", 2)):
        prog = assemble(text)
        s = ProcessorState.initial(prog)
        pl = plan_issue(s, prog, b, SuperscalarConfig(2))
        assert pl.m == 2
        _, c, _, retired = step_group(s, pl, SuperscalarConfig(2))
        assert c == cost and len(retired) == 2
    prog = assemble("ADD r1, r2, r3\nMUL r4, r5, r6\nHALT")
    s = ProcessorState.initial(prog)
    pl = plan_issue(s, prog, b, SuperscalarConfig(2, timing="issue"))
    assert step_group(s, pl, SuperscalarConfig(2, timing="issue"))[1] == 3
    pl = plan_issue(s, prog, b, SuperscalarConfig(2, l_p=4))
    assert step_group(s, pl, SuperscalarConfig(2, l_p=4))[1] == 4


def test_halt_ends_group():
    pl = plan("HALT\nADD r1, r2, r3", stub_bundle(), p=4)
    assert pl.m == 1


@pytest.mark.parametrize("seed", range(4))
def test_abstain_everywhere_matches_single(seed):
    prog = gen_program(WorkloadKind.RANDOM, 50, seed, iterations=3)
    ref = run_single(prog)
    for p in (1, 2, 4):
        res = run_superscalar(prog, PredictorBundle.abstain_everywhere(), SuperscalarConfig(p))
        assert res.cycles == ref.cycles and res.cpi == ref.cpi and res.coverage == 0
        assert compare_reference(prog, res, ref).ok


def test_dependency_free_alu_halves_cpi():
    prog = gen_program(WorkloadKind.RANDOM, 63, 2, branch_frac=0.0, density=0.0, mem_frac=0.0, mul=False)
    ref = run_single(prog)
    b = trained_bundle([prog])
    for p in (1, 2, 4):
        res = run_superscalar(prog, b, SuperscalarConfig(p))
        assert res.cpi == ref.cpi / p


def test_corrupted_register_gives_one_diff():
    prog = assemble("ADDI r3, r0, 9\nHALT")
    res = run_superscalar(prog, PredictorBundle.abstain_everywhere())
    regs = list(res.final_state.regs)
    regs[3] ^= 1
    res.final_state = ProcessorState(res.final_state.pc, tuple(regs), res.final_state.mem, True)
    rep = compare_reference(prog, res)
    assert [d[0] for d in rep.diffs] == ["r3"]
    assert compare_reference(prog, run_superscalar(prog, PredictorBundle.abstain_everywhere())).ok


def test_cycle_limit():
    prog = gen_program(WorkloadKind.FIB, 20)
    with pytest.raises(CycleLimitExceeded):
        run_superscalar(prog, PredictorBundle.abstain_everywhere(), max_cycles=10)


@settings(max_examples=40)
@given(st.sampled_from(list(WorkloadKind)), st.integers(0, 10_000), st.sampled_from([1, 2, 3, 4]))
def test_trained_bundle_equivalence_and_sandwich(kind, seed, p):
    length = {"MEMCOPY": 6, "FIB": 12, "BUBBLE_SORT": 6}.get(kind.value, 24)
    prog = gen_program(kind, length, seed)
    ref = run_single(prog)
    res = run_superscalar(prog, shared_bundle(), SuperscalarConfig(p), keep_log=True)
    assert compare_reference(prog, res, ref).ok
    assert ref.cpi / p <= res.cpi <= ref.cpi
    assert all(1 <= c.issued_m <= p for c in res.cycle_log)
    assert res.trace == ref.trace


def test_report_shape_and_bundle_roundtrip():
    prog = gen_program(WorkloadKind.ARITH_CHAIN, 30, 1)
    b = shared_bundle()
    res = run_superscalar(prog, b)
    rep = sim_report(res, compare_reference(prog, res))
    assert rep["equivalence"] == "ok" and set(rep["coverage"]) == {"gpr", "mem", "pc"}
    assert set(rep["stalls"]) == {"GPR_RAW", "MEM_RAW", "CONTROL", "STRUCTURAL"}
    back = PredictorBundle.loads(b.dumps())
    assert back.dumps() == b.dumps() and back.verified
    with pytest.raises(MalformedArtifact):
        PredictorBundle.loads('{"format": "x"}')


def test_config_validation():
    for kw in ({"p": 0}, {"l_p": 0}, {"mem_ports": 0}, {"timing": "avg"}):
        with pytest.raises(ValueError):
            SuperscalarConfig(**kw)
