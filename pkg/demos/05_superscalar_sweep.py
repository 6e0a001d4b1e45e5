"""Train a full bundle on a few programs and compare issue widths and ablations."""

from statebsd.isa import run_single
from statebsd.pipeline import Corpus, PipelineConfig, train_bundle
from statebsd.superscalar import SuperscalarConfig, compare_reference, run_superscalar
from statebsd.workloads import Workload, WorkloadKind

cfg = PipelineConfig(suite=(
    Workload(WorkloadKind.ARITH_CHAIN, 120, 0),
    Workload(WorkloadKind.MEMCOPY, 20, 0, (("passes", 4),)),
    Workload(WorkloadKind.FIB, 100, 0),
))
corpus = Corpus.build([w.build() for w in cfg.suite])
bundle, anneals = train_bundle(corpus.all_events(), cfg)
for t, res in anneals.items():
    print(f"{t:>3}: buffer {' '.join(bundle.selected[t].ordered)}  reusability {float(res.reusability):.3f}")

print(f"\n{'program':<22} {'single':>7} {'p=1':>7} {'p=2':>7} {'p=4':>7} {'no_pc':>7} {'no_gpr':>7} {'no_mem':>7}")
for prog, ref in zip(corpus.programs, corpus.runs):
    cells = []
    for p in (1, 2, 4):
        res = run_superscalar(prog, bundle, SuperscalarConfig(p))
        assert compare_reference(prog, res, ref).ok
        cells.append(float(res.cpi))
    for t in ("pc", "gpr", "mem"):
        cells.append(float(run_superscalar(prog, bundle.without(t), SuperscalarConfig(2)).cpi))
    print(f"{prog.name:<22} {float(ref.cpi):>7.3f} " + " ".join(f"{c:>7.3f}" for c in cells))
