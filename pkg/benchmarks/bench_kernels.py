"""Compare the compiled and pure-numpy geometry kernels.

Times each kernel on the call shapes the simulator and proxy use, plus one
full episode rollout per backend (the backend is chosen at import, so
rollouts run in a subprocess with ``MINMAXDRIVE_PURE`` set).

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from minmaxdrive.kernels import available_backends


def _cases(rng):
    boxes = np.column_stack([rng.uniform(-30, 30, (8, 2)), rng.uniform(-np.pi, np.pi, 8),
                             np.full(8, 4.8), np.full(8, 2.0)])
    ego = np.array([0.0, 0.0, 0.3, 4.8, 2.0])
    traj = np.column_stack([np.linspace(0, 80, 91), np.zeros(91), np.zeros(91)])
    other = np.column_stack([np.linspace(60, -20, 91), np.full(91, 0.5), np.full(91, np.pi)])
    angles = np.linspace(0, 2 * np.pi, 30, endpoint=False)
    poly = np.column_stack([np.linspace(0, 200, 101), 5 * np.sin(np.linspace(0, 3, 101))])
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(poly, axis=0).T))])
    pts = rng.uniform(0, 200, (1, 2))
    return {
        "sat_overlap_one_many": lambda k: k.sat_overlap_one_many(ego, boxes),
        "first_overlap": lambda k: k.first_overlap(traj, other, 4.8, 2.0, 4.8, 2.0),
        "ray_cast_boxes": lambda k: k.ray_cast_boxes(0.0, 0.0, angles, 50.0, boxes),
        "frenet_project_points": lambda k: k.frenet_project_points(pts, poly, cum),
    }


ROLLOUT_SNIPPET = """
import time
from minmaxdrive.kernels import BACKEND
from minmaxdrive.sim import ReplayPolicy, make_synthetic_scenarios, rollout_episode
scs = make_synthetic_scenarios(0, 20)
t = time.perf_counter()
for sc in scs:
    rollout_episode(ReplayPolicy(), sc, None, 0)
print(BACKEND, (time.perf_counter() - t) / len(scs))
"""


def bench_rollouts():
    out = {}
    for pure in ("1", "0"):
        env = dict(os.environ, MINMAXDRIVE_PURE=pure)
        res = subprocess.run([sys.executable, "-c", ROLLOUT_SNIPPET], env=env, capture_output=True, text=True,
                             check=True)
        name, sec = res.stdout.split()
        out[name] = float(sec)
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--repeat", type=int, default=2000)
    p.add_argument("--json")
    args = p.parse_args(argv)
    backends = available_backends()
    cases = _cases(np.random.default_rng(0))
    results = {}
    for case, fn in cases.items():
        row = {}
        for name, mod in backends.items():
            row[name] = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat
        results[case] = row
    results["rollout_episode"] = bench_rollouts()
    print(f"{'kernel':24s} {'python us':>12s} {'cython us':>12s} {'speedup':>8s}")
    for case, row in results.items():
        py, cy = row.get("python"), row.get("cython")
        speed = f"{py / cy:8.1f}" if py and cy else "     n/a"
        cy_txt = f"{cy * 1e6:12.2f}" if cy else "         n/a"
        print(f"{case:24s} {py * 1e6:12.2f} {cy_txt} {speed}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2, sort_keys=True)
    return results


if __name__ == "__main__":
    main()
