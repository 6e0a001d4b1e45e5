"""Which processor state is worth buffering? Anneal over the candidate pool."""

import numpy as np

from statebsd.elements import POOL
from statebsd.pipeline import Corpus
from statebsd.selector import AnnealSchedule, anneal, events_by_target, reusability
from statebsd.workloads import Workload, WorkloadKind

corpus = Corpus.build([w.build() for w in (
    Workload(WorkloadKind.ARITH_CHAIN, 120, 0),
    Workload(WorkloadKind.MEMCOPY, 20, 0, (("passes", 4),)),
    Workload(WorkloadKind.BUBBLE_SORT, 12, 0),
)])
by = events_by_target(corpus.all_events())
print(", ".join(f"{len(v)} {t} events" for t, v in by.items()))

rng = np.random.default_rng(0)
for target, events in by.items():
    print(f"\n{target}:")
    for cap in (1, 2, 4, 8):
        res = anneal(events, cap, AnnealSchedule(seed=cap))
        rand = np.mean([float(reusability(rng.choice(POOL, cap, replace=False), events)) for _ in range(10)])
        print(f"  capacity {cap}: annealed {float(res.reusability):.3f} vs random {rand:.3f}  "
              f"{' '.join(res.selected.ordered)}")
