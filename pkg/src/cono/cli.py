"""Command-line surface: generate, verify, inspect, shuffle-demo."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import (
    RunConfig,
    load_config,
    load_prompt_library,
    save_config,
    write_manifest,
)
from .engine import StageConfig, extending_shuffle, internal_shuffle, run_pipeline
from .errors import ConoError
from .harness import content_drift
from .io import export_frames, lat_summary
from .latent import LatentClip, SeededRng, write_lat
from .predictor import AnalyticPredictor, close_bridge, open_bridge
from .schedule import build_schedule, make_plan
from .verify import run_verification
from .world import Codec, prompt_from_id

log = logging.getLogger("cono")


def _setup_logging() -> None:
    level_name = os.environ.get("CONO_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConoError(f"CONO_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(level=levels[level_name], format="%(levelname)s %(name)s: %(message)s")


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.predictor is not None:
        cfg.predictor = args.predictor
    if args.bridge_cmd is not None:
        cfg.bridge_cmd = args.bridge_cmd
    cfg.validate()

    schedule = build_schedule(cfg.T, cfg.beta_start, cfg.beta_end, cfg.schedule_kind)
    plan = make_plan(schedule, cfg.steps)
    stage_cfg = StageConfig(
        N=cfg.N, N1=cfg.N1, N2=cfg.N2, Td=cfg.Td, delta=cfg.delta,
        cfg_scale=cfg.cfg_scale, regularization_enabled=cfg.regularization,
        td_units=cfg.td_units,
    )
    library = load_prompt_library(cfg.prompt_library)
    prompts = [prompt_from_id(pid, library) for pid in cfg.effective_prompt_ids()]
    rng = SeededRng(cfg.seed)

    session = None
    if cfg.predictor == "bridge":
        log.info("opening bridge: %s", cfg.bridge_cmd)
        predictor = session = open_bridge(cfg.bridge_cmd, cfg.dims)
    else:
        predictor = AnalyticPredictor(schedule, cfg.dims, cfg.sigma0, cfg.sigma_uncond)

    t0 = time.perf_counter()
    try:
        final, records, traces = run_pipeline(predictor, prompts, stage_cfg, plan, schedule, rng)
    finally:
        if session is not None:
            close_bridge(session)
    run_seconds = time.perf_counter() - t0
    log.info("pipeline produced %d frames in %.2fs", final.n_frames, run_seconds)

    os.makedirs(cfg.out_dir, exist_ok=True)
    codec = Codec()
    files = export_frames(final, cfg.out_dir, codec)
    stage_files = []
    for i, rec in enumerate(records):
        path = os.path.join(cfg.out_dir, f"stage_{i:02d}_{rec.stage_tag}.lat")
        write_lat(rec.final_latent, path)
        stage_files.append({"stage_tag": rec.stage_tag, "prompt_id": rec.prompt_id, "file": path})
    save_config(cfg, os.path.join(cfg.out_dir, "config.resolved.json"))

    drift = None
    if len(records) >= 2:
        report = content_drift(records, codec, final=final)
        drift = {
            "drifts": list(report.drifts),
            "cosines": [c for c in report.cosines],
        }
    manifest = {
        "engine_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "frames": final.n_frames,
        "stages": stage_files,
        "traces": [
            {"stage_tag": tr.stage_tag, "g_before": list(tr.g_before), "g_after": list(tr.g_after)}
            for tr in traces
        ],
        "drift": drift,
        "timings": {"pipeline_seconds": run_seconds},
    }
    manifest_path = args.report or os.path.join(cfg.out_dir, "manifest.json")
    write_manifest(manifest_path, manifest)
    print(f"wrote {final.n_frames} frames to {cfg.out_dir} (manifest: {manifest_path})")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    report = run_verification()
    text = json.dumps(report, indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0 if report["all_pass"] else 1


def _cmd_inspect(args: argparse.Namespace) -> int:
    for path in args.paths:
        print(json.dumps(lat_summary(path), indent=2))
    return 0


def _cmd_shuffle_demo(args: argparse.Namespace) -> int:
    n, n1 = args.n, args.n1
    marker = LatentClip(np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1))
    ext = extending_shuffle(marker, n1)
    print(" ".join(str(int(v)) for v in ext.data.reshape(-1)))
    if args.n2 is not None:
        internal = internal_shuffle(marker, n1, args.n2)
        print(" ".join(str(int(v)) for v in internal.data.reshape(-1)))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cono",
        description="Deterministic long-video latent diffusion engine (toy world + bridge).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run the pipeline and export frames")
    gen.add_argument("--config", required=True, help="JSON run config path")
    gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    gen.add_argument("--out", default=None, help="override the output directory")
    gen.add_argument("--predictor", choices=("analytic", "bridge"), default=None)
    gen.add_argument("--bridge-cmd", default=None, help="bridge command or tcp:HOST:PORT")
    gen.add_argument("--report", default=None, help="manifest path (default OUT/manifest.json)")
    gen.set_defaults(func=_cmd_generate)

    ver = sub.add_parser("verify", help="run the built-in oracle suite")
    ver.add_argument("--report", default=None, help="also write the JSON report here")
    ver.set_defaults(func=_cmd_verify)

    ins = sub.add_parser("inspect", help="print .lat headers and statistics")
    ins.add_argument("paths", nargs="+", help=".lat files")
    ins.set_defaults(func=_cmd_inspect)

    dem = sub.add_parser("shuffle-demo", help="print shuffle permutation tables")
    dem.add_argument("--n", type=int, required=True, help="frames per clip")
    dem.add_argument("--n1", type=int, required=True, help="guided frame count")
    dem.add_argument("--n2", type=int, default=None, help="also print the internal table")
    dem.set_defaults(func=_cmd_shuffle_demo)
    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        _setup_logging()
        parser = _build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except ConoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
