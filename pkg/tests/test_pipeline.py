import csv
import logging

import pytest

from oracles import reusability_brute
from statebsd.elements import TARGETS
from statebsd.pipeline import (
    CSV_COLUMNS,
    SWEEP_COLUMNS,
    Corpus,
    PipelineConfig,
    Report,
    capacity_sweep,
    evaluate_suite,
    export_report,
    run_pipeline,
    train_bundle,
    with_overrides,
)
from statebsd.superscalar import PredictorBundle
from statebsd.workloads import Workload, WorkloadKind

SMALL = PipelineConfig(
    suite=(
        Workload(WorkloadKind.ARITH_CHAIN, 40, 0),
        Workload(WorkloadKind.MEMCOPY, 8, 0, (("passes", 2),)),
        Workload(WorkloadKind.BRANCH_HEAVY, 8, 0, (("iterations", 4),)),
    ),
    max_iters=300,
    sweep_capacities=(2, 4, 8),
)


@pytest.fixture(scope="module")
def small():
    return run_pipeline(SMALL)


def test_dependency_free_traces_give_trivial_bundle(caplog):
    from statebsd.asm import assemble

    corpus = Corpus.build([assemble("HALT")])
    with caplog.at_level(logging.WARNING):
        bundle, anneals = train_bundle(corpus.all_events(), SMALL)
    assert bundle.verified and all(a is None for a in anneals.values())
    assert all(bundle.speculators[t].coverage_of_domain() == 0 for t in TARGETS)
    assert "abstains everywhere" in caplog.text


def test_small_pipeline(small):
    rep = small.report
    assert small.bundle.verified
    full = rep.select("full")
    assert len(full) == 3 * len(SMALL.issue_widths)
    assert all(r["equivalence"] == "ok" and r["fp"] == 0 for r in rep.rows)
    chain = [r for r in rep.select("full", 2) if r["program"].startswith("arith_chain")][0]
    assert chain["coverage_gpr"] > 0
    assert {r["config"] for r in rep.rows} >= {"full", "no_pc", "no_gpr", "no_mem", "cap=2", "cap=8"}


def test_sweep_is_nested_and_monotone(small):
    sweep = small.report.sweep
    assert [r["capacity"] for r in sweep] == [2, 4, 8]
    for a, b in zip(sweep, sweep[1:]):
        assert b["coverage"] >= a["coverage"]
        for t in TARGETS:
            assert set(a[f"selected_{t}"].split()) <= set(b[f"selected_{t}"].split())
    events = small.corpus.all_events()
    for row in sweep:
        for t in TARGETS:
            evs = [e for e in events if e.target == t]
            assert row[f"reusability_{t}"] == pytest.approx(float(reusability_brute(row[f"selected_{t}"].split(), evs)))


def test_abstain_everywhere_bundle_speedup_is_one(small):
    rep = evaluate_suite(PredictorBundle.abstain_everywhere(), small.corpus, SMALL, sweep=False)
    assert all(r["speedup"] == 1.0 for r in rep.rows)


def test_empty_suite_csv_is_header_only(tmp_path):
    rep = evaluate_suite(PredictorBundle.abstain_everywhere(), Corpus.build([]), SMALL)
    path = tmp_path / "rows.csv"
    export_report(rep, path, "csv")
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"
    export_report(rep, tmp_path / "sweep.csv", "sweep-csv")
    assert (tmp_path / "sweep.csv").read_text() == ",".join(SWEEP_COLUMNS) + "\n"


def test_json_roundtrip_and_csv_precision(small, tmp_path):
    rep = small.report
    export_report(rep, tmp_path / "r.json", "json")
    back = Report.loads((tmp_path / "r.json").read_text())
    assert back == Report.from_json(rep.to_json()) and back.dumps() == rep.dumps()
    export_report(rep, tmp_path / "r.csv", "csv")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and list(rows[0]) == list(CSV_COLUMNS)
    for r in rows:
        assert r["precision_pc"] == r["precision_gpr"] == r["precision_mem"] == "1.0"
    with pytest.raises(ValueError):
        export_report(rep, tmp_path / "x", "xml")


def test_config_roundtrip_and_validation():
    assert PipelineConfig.from_json(SMALL.to_json()) == SMALL
    assert with_overrides(SMALL, p=4).p == 4
    with pytest.raises(ValueError):
        PipelineConfig(verification="smt")
    assert SMALL.schedule("pc").seed != SMALL.schedule("gpr").seed
    assert SMALL.schedule("pc", salt=4).seed != SMALL.schedule("pc").seed


def test_sampled_verification_mode():
    cfg = with_overrides(SMALL, verification="sampled", samples=20_000)
    corpus = Corpus.build([SMALL.suite[0].build()])
    bundle, _ = train_bundle(corpus.all_events(), cfg)
    assert bundle.verified and bundle.verification["gpr"]["mode"] == "sampled"


def test_capacity_sweep_returns_bundles(small):
    corpus = Corpus.build([SMALL.suite[0].build()])
    sweep, rows, bundles = capacity_sweep(corpus, SMALL)
    assert sorted(bundles) == [2, 4, 8] and len(rows) == 3
    assert all(b.verified for b in bundles.values())
