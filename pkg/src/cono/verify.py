"""Built-in oracle suite behind the `verify` CLI subcommand.

Each check is deterministic (fixed seeds), reports the measured value next
to its tolerance, and is independent of the test suite so a distributed
install can self-check without pytest.
"""

from __future__ import annotations

import math
import time
from typing import Any, Callable

import numpy as np

from . import _kernels as K
from .engine import (
    StageConfig,
    apply_regularization,
    consistency_grad,
    extending_shuffle,
    internal_shuffle,
    run_first_clip,
    run_guided_stage,
)
from .harness import finite_diff_grad, mc_posterior_oracle
from .latent import LatentClip, SeededRng, mse, sample_standard_normal
from .predictor import AnalyticPredictor
from .schedule import add_noise, build_schedule, coeffs_from_alpha_bars, ddim_step, make_plan
from .world import Codec, PromptSpec, decode, prompt_to_scene

_CHECKS: list[Callable[[], dict[str, Any]]] = []


def _check(fn: Callable[[], dict[str, Any]]) -> Callable[[], dict[str, Any]]:
    _CHECKS.append(fn)
    return fn


@_check
def schedule_hand_values() -> dict[str, Any]:
    sched = build_schedule(T=2, beta_start=0.1, beta_end=0.2, kind="linear")
    got = sched.alpha_bars.tolist()
    err = max(abs(got[0] - 0.9), abs(got[1] - 0.72))
    return {"name": "schedule_hand_values", "measured": err, "tolerance": 1e-12, "pass": err <= 1e-12}


@_check
def ddim_reconstruction_identity() -> dict[str, Any]:
    rng = SeededRng(11)
    z = rng.standard_normal((2, 1, 4, 4))
    eps = rng.standard_normal((2, 1, 4, 4))
    a, b = coeffs_from_alpha_bars(0.37, 0.37)
    out = K.affine2(z, eps, a, b)
    identical = bool(np.array_equal(out, z))
    return {"name": "ddim_reconstruction_identity", "measured": "bit-exact" if identical else "differs", "tolerance": "bit-exact", "pass": identical}


@_check
def ddim_round_trip() -> dict[str, Any]:
    rng = SeededRng(12)
    sched = build_schedule()
    z0 = sample_standard_normal(rng, (2, 1, 4, 4))
    eps = sample_standard_normal(rng, (2, 1, 4, 4))
    t = 500
    z_t = add_noise(sched, z0, eps, t)
    back = ddim_step(sched, z_t, eps, t, None)
    rel = mse(back, z0) / max(float(np.mean(z0.data.astype(np.float64) ** 2)), 1e-12)
    return {"name": "ddim_round_trip", "measured": rel, "tolerance": 1e-5, "pass": rel <= 1e-5}


@_check
def rng_moments() -> dict[str, Any]:
    draws = SeededRng(13).standard_normal((1_000_000,)).astype(np.float64)
    mean = float(draws.mean())
    var = float(draws.var())
    ok = abs(mean) <= 0.01 and 0.99 <= var <= 1.01
    return {"name": "rng_moments", "measured": {"mean": mean, "var": var}, "tolerance": "mean within 0.01, var within [0.99, 1.01]", "pass": ok}


@_check
def shuffle_index_maps() -> dict[str, Any]:
    rng = SeededRng(14)
    failures = 0
    ext = extending_shuffle(LatentClip(np.arange(4, dtype=np.float32).reshape(4, 1, 1, 1)), 2)
    if ext.data.reshape(-1).tolist() != [2.0, 3.0, 1.0, 0.0]:
        failures += 1
    internal = internal_shuffle(
        LatentClip(np.arange(16, dtype=np.float32).reshape(16, 1, 1, 1)), 6, 8
    )
    expect = list(range(6)) + [14, 15] + list(range(6, 14))
    if internal.data.reshape(-1).tolist() != [float(v) for v in expect]:
        failures += 1
    for _ in range(200):
        n = rng.integers(2, 33)
        n1 = rng.integers(1, n + 1)
        clip = sample_standard_normal(rng, (n, 1, 2, 2))
        out = extending_shuffle(clip, n1)
        for i in range(n):
            src = n - n1 + i if i < n1 else n - 1 - i
            if not np.array_equal(out.data[i], clip.data[src]):
                failures += 1
                break
        if n1 < n:
            n2 = rng.integers(1, n - n1 + 1)
            out2 = internal_shuffle(clip, n1, n2)
            perm = list(range(n1)) + list(range(n1 + n2, n)) + list(range(n1, n1 + n2))
            for i, src in enumerate(perm):
                if not np.array_equal(out2.data[i], clip.data[src]):
                    failures += 1
                    break
    return {"name": "shuffle_index_maps", "measured": {"failures": failures}, "tolerance": "0 failures", "pass": failures == 0}


@_check
def regularization_contraction() -> dict[str, Any]:
    cur = LatentClip(np.array([2.0, 4.0], np.float32).reshape(2, 1, 1, 1))
    ref = LatentClip(np.zeros((2, 1, 1, 1), np.float32))
    out, gb, ga = apply_regularization(cur, ref, 0.1)
    hand_err = max(
        abs(out.data.reshape(-1)[0] - 1.7),
        abs(out.data.reshape(-1)[1] - 3.7),
        abs(gb - 9.0),
        abs(ga - 7.29),
    )
    rng = SeededRng(15)
    cur16 = sample_standard_normal(rng, (16, 2, 16, 16))
    ref16 = sample_standard_normal(rng, (16, 2, 16, 16))
    _, gb16, ga16 = apply_regularization(cur16, ref16, 140.0)
    factor = math.sqrt(ga16 / gb16)
    expected = 1.0 - 2.0 * 140.0 / (16 * 512)
    factor_err = abs(factor - expected)
    ok = hand_err <= 1e-6 and factor_err <= 1e-6
    return {"name": "regularization_contraction", "measured": {"hand_err": float(hand_err), "factor": factor, "factor_err": factor_err}, "tolerance": 1e-6, "pass": ok}


@_check
def gradient_vs_finite_differences() -> dict[str, Any]:
    rng = SeededRng(16)
    worst = 0.0
    for _ in range(5):
        ref = sample_standard_normal(rng, (4, 1, 2, 2))
        cur = sample_standard_normal(rng, (4, 1, 2, 2))
        got = consistency_grad(ref, cur)
        want = finite_diff_grad(ref, cur, 1e-3)
        worst = max(worst, float(np.max(np.abs(got.data - want.data))))
    return {"name": "gradient_vs_finite_differences", "measured": worst, "tolerance": 1e-4, "pass": worst <= 1e-4}


@_check
def analytic_vs_monte_carlo() -> dict[str, Any]:
    sched = build_schedule()
    rng = SeededRng(17)
    from .world import analytic_eps

    worst = 0.0
    for case in range(5):
        prompt = PromptSpec(f"verify-{case}", np.array([case, 1.2, 3.0, 4.0, 1.0, 0.0, 2.0, 0.0], np.float64))
        scene = prompt_to_scene(prompt, (1, 2, 2), 1, sigma0=0.5)
        probe = sample_standard_normal(rng, (1, 1, 2, 2))
        t = [100, 300, 500, 700, 900][case]
        got = analytic_eps(scene, probe, t, sched)
        est, se = mc_posterior_oracle(scene, t, sched, probe, 100_000, SeededRng(1000 + case))
        dev = np.abs(got.data.astype(np.float64) - est.data.astype(np.float64))
        sigmas = float(np.max(dev / np.maximum(se.data.astype(np.float64), 1e-12)))
        worst = max(worst, sigmas)
    return {"name": "analytic_vs_monte_carlo", "measured": {"worst_sigmas": worst}, "tolerance": 3.0, "pass": worst <= 3.0}


@_check
def guided_frame_reproduction() -> dict[str, Any]:
    sched = build_schedule()
    plan = make_plan(sched, 20)
    dims = (8, 1, 8, 8)
    pred = AnalyticPredictor(sched, dims)
    prompt = PromptSpec("verify-guided", np.array([3, 1.5, 2.0, 2.0, 1.0, 1.0, 2.0, 0.0], np.float64))
    cfg = StageConfig(N=8, N1=3, N2=4, Td=0, delta=0.0, regularization_enabled=False)
    first = run_first_clip(pred, prompt, plan, sched, SeededRng(18), cfg.cfg_scale)
    ext, _ = run_guided_stage(pred, prompt, first, "extending", cfg, plan, sched)
    ok = bool(np.array_equal(ext.final_latent.data[0:3], first.final_latent.data[5:8]))
    internal, _ = run_guided_stage(pred, prompt, ext, "internal", cfg, plan, sched)
    ok = ok and bool(np.array_equal(internal.final_latent.data[0:3], ext.final_latent.data[0:3]))
    ok = ok and bool(np.array_equal(internal.final_latent.data[4:8], ext.final_latent.data[3:7]))
    return {"name": "guided_frame_reproduction", "measured": "bit-exact" if ok else "differs", "tolerance": "bit-exact", "pass": ok}


@_check
def first_clip_convergence() -> dict[str, Any]:
    sched = build_schedule()
    plan = make_plan(sched, 50)
    dims = (16, 2, 16, 16)
    pred = AnalyticPredictor(sched, dims)
    prompt = PromptSpec("verify-converge", np.array([5, 1.5, 8.0, 8.0, 1.0, 0.0, 2.5, 0.0], np.float64))
    record = run_first_clip(pred, prompt, plan, sched, SeededRng(19), cfg_scale=1.0)
    scene = pred.scene_for(prompt)
    err = mse(decode(Codec(), record.final_latent), scene.mu)
    bound = 0.3**2 + 0.05
    return {"name": "first_clip_convergence", "measured": err, "tolerance": bound, "pass": err < bound}


def run_verification() -> dict[str, Any]:
    checks = []
    for fn in _CHECKS:
        t0 = time.perf_counter()
        result = fn()
        result["seconds"] = round(time.perf_counter() - t0, 3)
        checks.append(result)
    return {
        "backend": K.BACKEND,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
    }
