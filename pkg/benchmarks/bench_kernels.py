"""Time the hot kernels under each available backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from trajimpute import kernels
from trajimpute.config import RunConfig
from trajimpute.dtw import AlignmentConstraints, ReferenceCollection, dtw_distance, score_candidates
from trajimpute.harness import Scenario, induce_missingness
from trajimpute.pipeline import prepare_sets
from trajimpute.segmentation import detect_stay_points
from trajimpute.series import split_query
from trajimpute.synth import PersonaSpec, generate


def cases():
    rng = np.random.default_rng(0)
    ds = generate(PersonaSpec(n_persons=20, n_days=5))
    traj = ds.trajectories[0]
    sets = prepare_sets(ds.trajectories, RunConfig())
    ind = induce_missingness(sets, Scenario(3 * 3600, 1, 0))
    ig = ind.gaps[0]
    q = ind.masked[ig.set_index]
    refs = ReferenceCollection.from_series(m for k, m in enumerate(ind.masked) if k != ig.set_index)
    pre, post = split_query(q, ig.gap, 8 * 3600)
    a, b = rng.exponential(1.0, 200), rng.exponential(1.0, 300)
    return {
        "stay_labels": lambda: detect_stay_points(traj),
        "dtw 200x300": lambda: dtw_distance(a, b, AlignmentConstraints()),
        "dtw 200x300 band 20": lambda: dtw_distance(a, b, AlignmentConstraints(sakoe_chiba=20, open_begin_end=True)),
        "placement scan": lambda: score_candidates(
            pre,
            post,
            ig.gap,
            refs,
            AlignmentConstraints(one_to_one=True, time_window=3 * 3600),
            gap_clock=q.clock[ig.gap.start_index : ig.gap.end_index],
        ),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    work = cases()
    times = {}
    for backend in kernels.BACKENDS:
        kernels.use(backend)
        for name, fn in work.items():
            fn()  # warm up
            times[name, backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in kernels.BACKENDS) + ("     speedup" if len(kernels.BACKENDS) > 1 else ""))
    for name in work:
        row = [times[name, b] for b in kernels.BACKENDS]
        line = f"{name:<22}" + "".join(f"{t * 1000:>10.2f}ms" for t in row)
        if len(row) > 1:
            line += f"{row[0] / row[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
