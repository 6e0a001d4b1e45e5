"""End-to-end training and evaluation: traces -> bundle -> report."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .elements import TARGETS, sources_for
from .isa import Program, RunResult, run_single
from .selector import (
    AnnealResult,
    AnnealSchedule,
    DependencyEvent,
    SelectedStateSet,
    anneal,
    events_by_target,
    extract_dependencies,
    grow,
    selector_artifact,
)
from .speculator import (
    PredictionMetrics,
    SemanticOracle,
    Sampled,
    Speculator,
    measure,
    table_from_events,
    train_verified,
)
from .superscalar import PredictorBundle, SuperscalarConfig, compare_reference, run_superscalar
from .workloads import Workload, default_suite

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    capacity_pc: int = 8
    capacity_gpr: int = 8
    capacity_mem: int = 8
    t0: float = 0.05
    alpha: float = 0.995
    resample_threshold: int = 50
    max_iters: int = 2000
    bsd_max_nodes: int = 100_000
    epsilon: float = 0.0
    issue_widths: tuple[int, ...] = (1, 2, 4)
    p: int = 2
    mem_ports: int = 1
    l_p: int = 1
    timing: str = "max"
    verification: str = "exhaustive"
    samples: int = 1_000_000
    max_refine_rounds: int = 8
    master_seed: int = 0
    window: int = 4
    sweep_capacities: tuple[int, ...] = (2, 4, 8, 16, 32)
    suite: tuple[Workload, ...] = field(default_factory=lambda: tuple(default_suite()))

    def __post_init__(self):
        if self.verification not in ("exhaustive", "sampled"):
            raise ValueError("verification must be 'exhaustive' or 'sampled'")
        object.__setattr__(self, "issue_widths", tuple(self.issue_widths))
        object.__setattr__(self, "sweep_capacities", tuple(sorted(self.sweep_capacities)))
        object.__setattr__(self, "suite", tuple(self.suite))

    def capacity(self, target: str) -> int:
        return getattr(self, f"capacity_{target}")

    def schedule(self, target: str, salt: int = 0) -> AnnealSchedule:
        """Per-target annealing schedule with a seed derived from the master seed."""
        k = TARGETS.index(target)
        ss = np.random.SeedSequence([self.master_seed, k, salt])
        return AnnealSchedule(self.t0, self.alpha, self.resample_threshold, self.max_iters, int(ss.generate_state(1)[0]))

    def domain(self):
        return "exhaustive" if self.verification == "exhaustive" else Sampled(self.samples, self.master_seed)

    def sim_config(self, p: int | None = None) -> SuperscalarConfig:
        return SuperscalarConfig(p or self.p, self.mem_ports, self.l_p, self.timing)

    def to_json(self) -> dict:
        d = asdict(self)
        d["issue_widths"] = list(self.issue_widths)
        d["sweep_capacities"] = list(self.sweep_capacities)
        d["suite"] = [w.to_json() for w in self.suite]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "suite" in d:
            d["suite"] = tuple(Workload.from_json(w) for w in d["suite"])
        for k in ("issue_widths", "sweep_capacities"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Corpus:
    """Programs with their reference runs and dependency events."""

    programs: list[Program]
    runs: list[RunResult]
    events: list[list[DependencyEvent]]

    @classmethod
    def build(cls, programs: Sequence[Program], window: int = 4) -> "Corpus":
        runs = [run_single(p) for p in programs]
        events = [extract_dependencies(r.trace, p, window) for p, r in zip(programs, runs)]
        return cls(list(programs), runs, events)

    def all_events(self) -> list[DependencyEvent]:
        return [e for evs in self.events for e in evs]

    @property
    def instructions(self) -> int:
        return sum(r.instructions for r in self.runs)


def _train_target(
    events: list[DependencyEvent], target: str, selected: SelectedStateSet, cfg: PipelineConfig
) -> tuple[Speculator, dict]:
    table = table_from_events(events, target, sources_for(selected.members))
    spec, result = train_verified(
        table,
        SemanticOracle(target),
        max_nodes=cfg.bsd_max_nodes,
        max_rounds=cfg.max_refine_rounds,
        domain=cfg.domain(),
        epsilon=cfg.epsilon,
    )
    ver = result.to_json()
    ver["refine_rounds"] = spec.info.get("refine_rounds", 0)
    return spec, ver


def bundle_for_selection(
    events: Sequence[DependencyEvent], selected: dict[str, SelectedStateSet], cfg: PipelineConfig
) -> PredictorBundle:
    by = events_by_target(events)
    specs, ver = {}, {}
    for t in TARGETS:
        if not by[t]:
            log.warning("no %s dependencies in the traces; %s speculator abstains everywhere", t, t)
            specs[t] = Speculator.abstain_everywhere(t, sources_for(selected[t].members))
            ver[t] = {"verified": True, "mode": "trivial", "counterexamples": [], "checked": 0, "refine_rounds": 0}
            continue
        specs[t], ver[t] = _train_target(by[t], t, selected[t], cfg)
    return PredictorBundle(dict(selected), specs, ver)


def train_bundle(
    events: Sequence[DependencyEvent], cfg: PipelineConfig
) -> tuple[PredictorBundle, dict[str, AnnealResult | None]]:
    """Select state per target by annealing, then train and verify speculators."""
    by = events_by_target(events)
    selected: dict[str, SelectedStateSet] = {}
    anneals: dict[str, AnnealResult | None] = {}
    for t in TARGETS:
        if by[t]:
            res = anneal(by[t], cfg.capacity(t), cfg.schedule(t))
            selected[t], anneals[t] = res.selected, res
        else:
            selected[t], anneals[t] = SelectedStateSet(frozenset(), cfg.capacity(t)), None
    return bundle_for_selection(events, selected, cfg), anneals


def train_from_traces(traces: Sequence, cfg: PipelineConfig, programs: Sequence[Program] | None = None):
    events: list[DependencyEvent] = []
    for k, tr in enumerate(traces):
        events.extend(extract_dependencies(tr, programs[k] if programs else None, cfg.window))
    return train_bundle(events, cfg)


# -- evaluation ---------------------------------------------------------------------

CSV_COLUMNS = (
    "program",
    "config",
    "p",
    "instructions",
    "cycles_single",
    "cycles",
    "cpi_single",
    "cpi",
    "speedup",
    "sim_coverage",
    "coverage_pc",
    "coverage_gpr",
    "coverage_mem",
    "precision_pc",
    "precision_gpr",
    "precision_mem",
    "fp",
    "stall_gpr_raw",
    "stall_mem_raw",
    "stall_control",
    "stall_structural",
    "equivalence",
)

SWEEP_COLUMNS = (
    "capacity",
    "coverage",
    "coverage_pc",
    "coverage_gpr",
    "coverage_mem",
    "reusability_pc",
    "reusability_gpr",
    "reusability_mem",
    "cpi",
    "selected_pc",
    "selected_gpr",
    "selected_mem",
)


def _num(x: Fraction | float) -> float:
    return float(x)


def evaluate_program(
    program: Program,
    reference: RunResult,
    events: Sequence[DependencyEvent],
    bundle: PredictorBundle,
    config_name: str,
    sim: SuperscalarConfig,
) -> dict:
    """One report row: simulate, check equivalence, measure predictors on the trace."""
    metrics = {t: measure(bundle.speculators[t], events, SemanticOracle(t)) for t in TARGETS}
    row = {"program": program.name, "config": config_name, "p": sim.p}
    try:
        result = run_superscalar(program, bundle, sim)
    except Exception as exc:  # reported per row, the sweep goes on
        row.update({k: None for k in CSV_COLUMNS if k not in row})
        row["equivalence"] = f"error: {type(exc).__name__}: {exc}"
        return row
    eq = compare_reference(program, result, reference)
    stalls = result.stalls
    row.update(
        instructions=result.instructions,
        cycles_single=reference.cycles,
        cycles=result.cycles,
        cpi_single=_num(reference.cpi),
        cpi=_num(result.cpi),
        speedup=_num(Fraction(reference.cycles, result.cycles)),
        sim_coverage=_num(result.coverage),
        fp=sum(m.fp for m in metrics.values()),
        stall_gpr_raw=stalls.get("GPR_RAW", 0),
        stall_mem_raw=stalls.get("MEM_RAW", 0),
        stall_control=stalls.get("CONTROL", 0),
        stall_structural=stalls.get("STRUCTURAL", 0),
        equivalence="ok" if eq.ok else "; ".join(f"{a}: {b} != {c}" for a, b, c in eq.diffs),
    )
    for t in TARGETS:
        row[f"coverage_{t}"] = _num(metrics[t].coverage)
        row[f"precision_{t}"] = _num(metrics[t].precision)
    return row


def _eval_job(args):
    return evaluate_program(*args)


def _run_jobs(jobs: list, workers: int) -> list[dict]:
    if workers <= 1:
        return [_eval_job(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_eval_job, jobs))


@dataclass
class Report:
    rows: list[dict]
    sweep: list[dict] = field(default_factory=list)
    anneal: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"rows": self.rows, "sweep": self.sweep, "anneal": self.anneal, "config": self.config}

    @classmethod
    def from_json(cls, d: dict) -> "Report":
        return cls(list(d["rows"]), list(d.get("sweep", [])), dict(d.get("anneal", {})), dict(d.get("config", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    @classmethod
    def loads(cls, text: str) -> "Report":
        return cls.from_json(json.loads(text))

    def select(self, config: str, p: int | None = None) -> list[dict]:
        return [r for r in self.rows if r["config"] == config and (p is None or r["p"] == p)]


def _csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return buf.getvalue()


def export_report(report: Report, path, fmt: str = "json") -> None:
    """Write ``report`` as JSON, CSV (one row per program x configuration) or sweep CSV."""
    if fmt == "json":
        text = report.dumps()
    elif fmt == "csv":
        text = _csv(report.rows, CSV_COLUMNS)
    elif fmt == "sweep-csv":
        text = _csv(report.sweep, SWEEP_COLUMNS)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


def anneal_summary(res: AnnealResult | None, target: str = "", sched: AnnealSchedule | None = None) -> dict:
    if res is None:
        return {"target": target, "members": [], "reusability": None, "history": [], "best_history": [], "seed": None}
    out = selector_artifact(target, res, sched or AnnealSchedule(seed=res.seed))
    out.update(
        reusability=float(res.reusability),
        history=[float(e) for e in res.history],
        best_history=[float(e) for e in res.best_history],
    )
    return out


def capacity_sweep(
    corpus: Corpus, cfg: PipelineConfig, workers: int = 1
) -> tuple[list[dict], list[dict], dict[int, PredictorBundle]]:
    """Nested selections grown over ``cfg.sweep_capacities``; one bundle per point."""
    events = corpus.all_events()
    by = events_by_target(events)
    base = {t: SelectedStateSet(frozenset(), 0) for t in TARGETS}
    sweep_rows, sim_rows, bundles = [], [], {}
    for cap in cfg.sweep_capacities:
        selected = {}
        for t in TARGETS:
            if by[t]:
                res = grow(base[t], by[t], cap, cfg.schedule(t, salt=cap))
                selected[t] = res.selected
            else:
                selected[t] = SelectedStateSet(frozenset(), min(cap, 18))
        base = selected
        bundle = bundle_for_selection(events, selected, cfg)
        bundles[cap] = bundle
        metrics = {t: measure(bundle.speculators[t], events, SemanticOracle(t)) for t in TARGETS}
        total = sum(metrics.values(), PredictionMetrics())
        sim = cfg.sim_config()
        jobs = [
            (p, r, e, bundle, f"cap={cap}", sim) for p, r, e in zip(corpus.programs, corpus.runs, corpus.events)
        ]
        rows = _run_jobs(jobs, workers)
        sim_rows += rows
        cycles = sum(r["cycles"] or 0 for r in rows)
        insts = sum(r["instructions"] or 0 for r in rows)
        row = {"capacity": cap, "coverage": _num(total.coverage), "cpi": _num(Fraction(cycles, insts)) if insts else None}
        for t in TARGETS:
            row[f"coverage_{t}"] = _num(metrics[t].coverage)
            n = len(by[t])
            hit = sum(1 for e in by[t] if e.producing_element in selected[t].members)
            row[f"reusability_{t}"] = _num(Fraction(hit, n)) if n else None
            row[f"selected_{t}"] = " ".join(selected[t].ordered)
        sweep_rows.append(row)
    return sweep_rows, sim_rows, bundles


def evaluate_suite(
    bundle: PredictorBundle,
    corpus: Corpus,
    cfg: PipelineConfig,
    workers: int = 1,
    sweep: bool = True,
) -> Report:
    """Full bundle at every issue width, one-off ablations and the capacity sweep at ``cfg.p``."""
    jobs = []
    for prog, ref, ev in zip(corpus.programs, corpus.runs, corpus.events):
        for p in cfg.issue_widths:
            jobs.append((prog, ref, ev, bundle, "full", cfg.sim_config(p)))
        for t in TARGETS:
            jobs.append((prog, ref, ev, bundle.without(t), f"no_{t}", cfg.sim_config()))
    rows = _run_jobs(jobs, workers)
    sweep_rows: list[dict] = []
    if sweep and corpus.programs:
        sweep_rows, cap_rows, _ = capacity_sweep(corpus, cfg, workers)
        rows += cap_rows
    return Report(rows, sweep_rows, {}, cfg.to_json())


@dataclass
class PipelineResult:
    bundle: PredictorBundle
    report: Report
    corpus: Corpus
    anneals: dict


def run_pipeline(cfg: PipelineConfig = PipelineConfig(), workers: int = 1, sweep: bool = True) -> PipelineResult:
    """Build the suite, train on its traces, evaluate, and assemble the report."""
    corpus = Corpus.build([w.build() for w in cfg.suite], cfg.window)
    bundle, anneals = train_bundle(corpus.all_events(), cfg)
    report = evaluate_suite(bundle, corpus, cfg, workers, sweep)
    report.anneal = {t: anneal_summary(anneals[t], t, cfg.schedule(t)) for t in TARGETS}
    return PipelineResult(bundle, report, corpus, anneals)


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return replace(cfg, **kw)
