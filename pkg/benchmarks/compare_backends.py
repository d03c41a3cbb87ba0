"""Compare the numba and numpy kernel backends: speed and agreement.

Kernel microbenchmarks call both implementations in one process. The
whole-pipeline comparison spawns a child per backend (the backend is fixed
at import time via CONO_BACKEND) and checks that the assembled video is
byte-identical: every kernel that feeds latents computes elementwise in
float64 with a single rounding to float32, so backend choice must never
change the output, only the wall clock.

Usage: python3 benchmarks/compare_backends.py [--repeats N] [--skip-pipeline]
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np

from cono import _kernels as K


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(repeats):
    gen = np.random.Generator(np.random.PCG64(1))
    a2 = gen.standard_normal((16, 512)).astype(np.float32)
    b2 = gen.standard_normal((16, 512)).astype(np.float32)
    a4 = gen.standard_normal((16, 2, 16, 16)).astype(np.float32)
    b4 = gen.standard_normal((16, 2, 16, 16)).astype(np.float32)

    cases = [
        ("affine2 16x2x16x16", lambda f: f(a4, b4, 0.98, 0.11),
         K.affine2_np, K.affine2_nb if K.HAS_NUMBA else None, True),
        ("posterior_eps 16x2x16x16", lambda f: f(a4, b4, 0.9, 0.19, 0.09),
         K.posterior_eps_np, K.posterior_eps_nb if K.HAS_NUMBA else None, True),
        ("frame_mean 16x512", lambda f: f(a2),
         K.frame_mean_np, K.frame_mean_nb if K.HAS_NUMBA else None, True),
        ("regularize 16x512", lambda f: f(a2, b2, 2.0)[0],
         K.regularize_np, K.regularize_nb if K.HAS_NUMBA else None, True),
        ("mse 16x512", lambda f: f(a2, b2),
         K.mse_np, K.mse_nb if K.HAS_NUMBA else None, False),
    ]

    print(f"{'kernel':28s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}  agreement")
    inner = 200
    for name, call, f_np, f_nb, elementwise in cases:
        t_np = best_of(lambda: [call(f_np) for _ in range(inner)], repeats) / inner
        if f_nb is None:
            print(f"{name:28s} {t_np * 1e6:9.1f}us {'-':>10s} {'-':>8s}  numba not installed")
            continue
        call(f_nb)  # compile outside the timer
        t_nb = best_of(lambda: [call(f_nb) for _ in range(inner)], repeats) / inner
        r_np, r_nb = call(f_np), call(f_nb)
        if elementwise:
            agree = "bit-identical" if np.array_equal(r_np, r_nb) else "DIFFER"
        else:
            rel = abs(r_np - r_nb) / max(abs(r_np), 1e-300)
            agree = f"rel {rel:.1e}" + ("" if rel <= 1e-12 else " DIFFER")
        print(
            f"{name:28s} {t_np * 1e6:9.1f}us {t_nb * 1e6:9.1f}us {t_np / t_nb:7.2f}x  {agree}"
        )


PIPELINE_CHILD = "--pipeline-child"


def run_pipeline_child():
    from cono import (
        AnalyticPredictor,
        PromptSpec,
        SeededRng,
        StageConfig,
        build_schedule,
        make_plan,
        run_pipeline,
    )

    K.warmup()
    sched = build_schedule()
    plan = make_plan(sched, 50)
    pred = AnalyticPredictor(sched, (16, 2, 16, 16), sigma0=0.25)
    p_a = PromptSpec("bench-a", np.array([2, 3.0, 4.0, 4.0, 9.0, 0.0, 1.5, 0.0], np.float64))
    p_b = PromptSpec("bench-b", np.array([2, 3.0, 4.0, 4.0, 0.0, 9.0, 1.5, 0.0], np.float64))
    cfg = StageConfig()
    best = float("inf")
    final = None
    for _ in range(3):
        t0 = time.perf_counter()
        final, _, _ = run_pipeline(pred, [p_a, p_b, p_b], cfg, plan, sched, SeededRng(0))
        best = min(best, time.perf_counter() - t0)
    digest = hashlib.sha256(final.data.tobytes()).hexdigest()
    print(json.dumps({"backend": K.BACKEND, "seconds": best, "sha256": digest}))


def bench_pipeline():
    results = {}
    for backend in ("numpy", "numba"):
        if backend == "numba" and not K.HAS_NUMBA:
            print("pipeline (numba): skipped, numba not installed")
            continue
        env = dict(os.environ, CONO_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), PIPELINE_CHILD],
            capture_output=True,
            text=True,
            env=env,
            timeout=600,
        )
        if proc.returncode != 0:
            print(f"pipeline ({backend}): child failed\n{proc.stderr}")
            return
        results[backend] = json.loads(proc.stdout.strip().splitlines()[-1])
        print(f"pipeline ({backend}): {results[backend]['seconds']:.3f}s best of 3 (56 frames, 50 steps)")
    if len(results) == 2:
        speedup = results["numpy"]["seconds"] / results["numba"]["seconds"]
        same = results["numpy"]["sha256"] == results["numba"]["sha256"]
        print(f"pipeline speedup: {speedup:.2f}x, outputs {'byte-identical' if same else 'DIFFER'}")
        if not same:
            sys.exit(1)


def main():
    if PIPELINE_CHILD in sys.argv:
        run_pipeline_child()
        return
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats, best is kept")
    parser.add_argument("--skip-pipeline", action="store_true", help="kernels only")
    args = parser.parse_args()
    print(f"active backend: {K.BACKEND} (numba installed: {K.HAS_NUMBA})")
    K.warmup()
    bench_kernels(args.repeats)
    if not args.skip_pipeline:
        bench_pipeline()


if __name__ == "__main__":
    main()
