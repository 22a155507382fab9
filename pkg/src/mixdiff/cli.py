"""Batch command-line front end: configure, run, evaluate, and sweep sampling
experiments reproducibly.

Exit codes: 0 ok, 1 runtime failure, 2 invalid input. The only environment
variable honored is MIXDIFF_OUT_DIR (default output directory).
"""

from __future__ import annotations

import itertools
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from .config import (
    SamplerConfig,
    Seeds,
    build_denoisers,
    load_config_document,
    make_manifest,
    parse_gaussian_target,
    parse_sampler_config,
    parse_schedule,
)
from .denoisers import TrainConfig, train_toy_denoiser
from .errors import ConfigError, SamplingError, TrainingDiverged
from .latent import LatentVideo, RngStream, load_lvt, save_lvt
from .metrics import metric_report
from .mixture import run_mixture_sampling
from .schedule import make_step_map
from .smoothing import SmoothingConfig, temporal_smooth


def _out_dir(given: str | None, default_name: str) -> Path:
    if given is not None:
        base = Path(given)
    else:
        import os

        root = os.environ.get("MIXDIFF_OUT_DIR", ".")
        base = Path(root) / default_name
    base.mkdir(parents=True, exist_ok=True)
    return base


def _apply_overrides(doc: dict, overrides: tuple[str, ...]) -> dict:
    """--override key=value flags, dotted paths, JSON-parsed values."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--override", f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "path collides with a non-object field")
        node[parts[-1]] = value
    return doc


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _run_one_chain(cfg: SamplerConfig, video_d, image_d, step_map, chain: int):
    init_rng = RngStream(cfg.seeds.init, chain)
    noise_rng = RngStream(cfg.seeds.step_noise, chain)
    select_rng = RngStream(cfg.seeds.selection, chain)
    sample, trace = run_mixture_sampling(
        video_d,
        image_d,
        cfg.policy,
        cfg.schedule,
        step_map,
        dims=cfg.dims,
        guidance=cfg.guidance,
        guidance_video=cfg.guidance_video,
        guidance_image=cfg.guidance_image,
        entropy=cfg.entropy,
        cond=cfg.cond,
        init_rng=init_rng,
        noise_rng=noise_rng,
        select_rng=select_rng,
    )
    if cfg.smoothing_threshold is not None:
        sample = temporal_smooth(
            sample,
            SmoothingConfig(cfg.smoothing_threshold, cfg.smoothing_sigma_floor),
        )
    return sample, trace


def run_sampling(cfg: SamplerConfig, out: Path) -> dict:
    """Execute all chains of a run and write outputs + manifest. Returns the
    manifest dict."""
    video_d, image_d = build_denoisers(cfg)
    step_map = make_step_map(cfg.schedule.T, cfg.infer_steps)
    start = time.perf_counter()

    def work(chain: int):
        return _run_one_chain(cfg, video_d, image_d, step_map, chain)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, range(cfg.chains)))
    else:
        results = [work(i) for i in range(cfg.chains)]

    chain_paths, trace_paths = [], []
    for i, (sample, trace) in enumerate(results):
        cp = out / f"chain_{i:04d}.lvt"
        tp = out / f"chain_{i:04d}_trace.jsonl"
        save_lvt(cp, sample)
        tp.write_text(trace.to_jsonl())
        chain_paths.append(cp.name)
        trace_paths.append(tp.name)

    manifest = make_manifest(
        cfg, chain_paths, trace_paths, time.perf_counter() - start
    )
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


@click.group()
@click.version_option()
def main():
    """Mixture-of-denoisers diffusion sampling experiments."""


@main.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "-o", "out_path", default=None, help="Output directory.")
@click.option("--override", "-O", multiple=True, help="Dotted key=value config override.")
def sample(config_path, out_path, override):
    """Run sampling chains from a config file (or a previous run manifest)."""
    try:
        doc = load_config_document(config_path)
        doc = _apply_overrides(doc, override)
        cfg = parse_sampler_config(doc)
    except ConfigError as exc:
        _fail(2, str(exc))
    out = _out_dir(out_path, "run")
    try:
        manifest = run_sampling(cfg, out)
    except SamplingError as exc:
        _fail(1, str(exc))
    except (OSError, ValueError) as exc:
        _fail(1, str(exc))
    click.echo(f"wrote {len(manifest['chains'])} chain(s) to {out}")


_TRAIN_FIELDS = {
    "dims",
    "schedule",
    "target",
    "steps",
    "batch",
    "lr",
    "warmup",
    "prompt_drop",
    "noise_offset",
    "hidden_width",
    "embed_dim",
    "seeds",
}


def parse_train_config(doc: dict):
    from .config import _as_int, _as_num, _no_extras, _require

    _require(isinstance(doc, dict), "", "config must be a JSON object")
    _no_extras(doc, _TRAIN_FIELDS, "config")
    _require("dims" in doc, "dims", "is required")
    dims = doc["dims"]
    _require(
        isinstance(dims, (list, tuple)) and len(dims) == 4,
        "dims",
        "must be [F, C, H, W]",
    )
    for i, d in enumerate(dims):
        _require(
            isinstance(d, int) and not isinstance(d, bool) and d >= 1,
            f"dims[{i}]",
            "must be an integer >= 1",
        )
    sched = parse_schedule(doc.get("schedule", {}))
    _require("target" in doc, "target", "is required")
    target = parse_gaussian_target(doc["target"], tuple(dims))
    steps = _as_int(doc.get("steps", 5000), "steps")
    _require(steps >= 0, "steps", "must be >= 0")
    try:
        train_cfg = TrainConfig(
            steps=steps,
            batch=_as_int(doc.get("batch", 128), "batch"),
            lr=_as_num(doc.get("lr", 1e-4), "lr"),
            warmup=_as_int(doc.get("warmup", 500), "warmup"),
            prompt_drop_prob=_as_num(doc.get("prompt_drop", 0.30), "prompt_drop"),
            noise_offset=_as_num(doc.get("noise_offset", 0.1), "noise_offset"),
            hidden_width=_as_int(doc.get("hidden_width", 64), "hidden_width"),
            embed_dim=_as_int(doc.get("embed_dim", 16), "embed_dim"),
        )
    except ValueError as exc:
        raise ConfigError("config", str(exc)) from exc
    seeds = Seeds.from_dict(doc.get("seeds", {}))
    return sched, target, train_cfg, seeds, doc


@main.command("train-toy")
@click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "-o", "out_path", default=None, help="Output directory.")
@click.option("--override", "-O", multiple=True, help="Dotted key=value config override.")
def train_toy(config_path, out_path, override):
    """Train the toy denoiser and write its parameter files + loss curve."""
    try:
        doc = load_config_document(config_path)
        doc = _apply_overrides(doc, override)
        sched, target, train_cfg, seeds, resolved = parse_train_config(doc)
    except ConfigError as exc:
        _fail(2, str(exc))
    out = _out_dir(out_path, "toy")
    rng = RngStream(seeds.training, 0)
    try:
        result = train_toy_denoiser(target, sched, train_cfg, rng)
    except TrainingDiverged as exc:
        _fail(1, f"training diverged at step {exc.step}")
    blob, sidecar = result.denoiser.save(out / "toy_model")
    loss_csv = out / "loss_curve.csv"
    with open(loss_csv, "w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(result.losses):
            fh.write(f"{i},{loss!r}\n")
    from . import __version__

    manifest = {
        "artifact_version": __version__,
        "config": {
            "dims": list(target.dims),
            "schedule": sched.to_config(),
            "target": resolved["target"],
            "steps": train_cfg.steps,
            "batch": train_cfg.batch,
            "lr": train_cfg.lr,
            "warmup": train_cfg.warmup,
            "prompt_drop": train_cfg.prompt_drop_prob,
            "noise_offset": train_cfg.noise_offset,
            "hidden_width": train_cfg.hidden_width,
            "embed_dim": train_cfg.embed_dim,
            "seeds": seeds.to_dict(),
        },
        "model": blob.name,
        "sidecar": sidecar.name,
        "loss_curve": loss_csv.name,
        "final_loss": None if len(result.losses) == 0 else float(result.losses[-1]),
    }
    (out / "train_manifest.json").write_text(json.dumps(manifest, indent=2))
    click.echo(f"wrote model to {blob} ({train_cfg.steps} steps)")


@main.command("eval")
@click.argument("inputs", nargs=-1, required=True, type=click.Path())
@click.option("--target", "-t", "target_path", default=None, type=click.Path(exists=True))
@click.option("--lags", default="1", help="Comma-separated autocorrelation lags.")
@click.option("--out", "-o", "out_path", default=None, help="Report path stem.")
def eval_cmd(inputs, target_path, lags, out_path):
    """Compute the metric battery over .lvt files (glob patterns accepted)."""
    paths: list[Path] = []
    for pattern in inputs:
        p = Path(pattern)
        if p.exists():
            paths.append(p)
        else:
            paths.extend(sorted(p.parent.glob(p.name)))
    if not paths:
        _fail(2, "no input files matched")
    try:
        samples = [load_lvt(p) for p in paths]
    except ValueError as exc:
        _fail(2, str(exc))
    dims = samples[0].shape
    if any(s.shape != dims for s in samples):
        _fail(2, f"inputs disagree on dims (first is {dims})")

    target = None
    if target_path is not None:
        try:
            doc = json.loads(Path(target_path).read_text())
            target = parse_gaussian_target(doc, dims)
        except (json.JSONDecodeError, ConfigError, ValueError) as exc:
            _fail(2, f"target: {exc}")

    try:
        lag_list = tuple(int(v) for v in lags.split(",") if v.strip())
    except ValueError:
        _fail(2, f"bad --lags value {lags!r}")
    report = metric_report(samples, target=target, lags=lag_list)

    stem = Path(out_path) if out_path else _out_dir(None, "eval") / "report"
    stem.parent.mkdir(parents=True, exist_ok=True)
    Path(str(stem) + ".json").write_text(report.to_json())
    Path(str(stem) + ".csv").write_text(report.to_csv())
    click.echo(report.to_csv().rstrip())


@main.command()
@click.option("--spec", "-s", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "-o", "out_path", default=None, help="Sweep output directory.")
def sweep(spec_path, out_path):
    """Run a cartesian hyperparameter sweep: one sample+eval run per cell.

    Spec JSON: {"base": <sample config>, "grid": {dotted.key: [values...]},
    "max_runs": 256}. Completed runs (manifest + outputs present) are skipped,
    so an interrupted sweep resumes where it stopped.
    """
    try:
        spec = json.loads(Path(spec_path).read_text())
    except json.JSONDecodeError as exc:
        _fail(2, f"invalid JSON: {exc}")
    if not isinstance(spec, dict) or "base" not in spec or "grid" not in spec:
        _fail(2, 'sweep spec needs "base" and "grid"')
    grid = spec["grid"]
    if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
        _fail(2, '"grid" must map dotted keys to value lists')
    max_runs = spec.get("max_runs", 256)
    keys = sorted(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    if len(combos) > max_runs:
        _fail(2, f"sweep has {len(combos)} runs, exceeding max_runs={max_runs}")

    out = _out_dir(out_path, "sweep")
    rows = []
    for idx, combo in enumerate(combos):
        run_dir = out / f"run_{idx:03d}"
        doc = json.loads(json.dumps(spec["base"]))  # deep copy
        overrides = tuple(f"{k}={json.dumps(v)}" for k, v in zip(keys, combo))
        try:
            doc = _apply_overrides(doc, overrides)
            cfg = parse_sampler_config(doc)
        except ConfigError as exc:
            _fail(2, f"run_{idx:03d}: {exc}")
        manifest_path = run_dir / "run_manifest.json"
        done = False
        if manifest_path.exists():
            existing = json.loads(manifest_path.read_text())
            done = all((run_dir / name).exists() for name in existing["chains"])
        if not done:
            run_dir.mkdir(parents=True, exist_ok=True)
            try:
                run_sampling(cfg, run_dir)
            except SamplingError as exc:
                _fail(1, f"run_{idx:03d}: {exc}")
        manifest = json.loads(manifest_path.read_text())
        samples = [load_lvt(run_dir / name) for name in manifest["chains"]]
        target = None
        if cfg.target.get("kind") != "toy":
            target = parse_gaussian_target(cfg.target, cfg.dims)
        report = metric_report(samples, target=target).by_name()
        row = {"run": f"run_{idx:03d}"}
        row.update({k: v for k, v in zip(keys, combo)})
        for name in ("mean_pooled", "var_pooled", "temporal_autocorr_1", "flicker", "w2_to_target"):
            if name in report:
                row[name] = report[name].value
        rows.append(row)

    columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns))
    (out / "sweep_results.csv").write_text("\n".join(lines) + "\n")
    click.echo(f"{len(rows)} run(s) -> {out / 'sweep_results.csv'}")


@main.command("export-frames")
@click.argument("lvt_path", type=click.Path(exists=True))
@click.option("--channel", "-k", default=0, show_default=True, help="Channel index to export.")
@click.option("--out", "-o", "out_path", default=None, help="Output directory.")
def export_frames(lvt_path, channel, out_path):
    """Export one channel of a latent video as binary PGM frames,
    min-max normalized per video (constant videos map to mid-gray)."""
    try:
        video = load_lvt(lvt_path)
    except ValueError as exc:
        _fail(2, str(exc))
    if not 0 <= channel < video.channels:
        _fail(2, f"channel {channel} out of range 0..{video.channels - 1}")
    out = _out_dir(out_path, "frames")
    plane = video.data[:, channel]
    lo, hi = float(plane.min()), float(plane.max())
    if hi > lo:
        scaled = np.rint((plane - lo) * (255.0 / (hi - lo)))
    else:
        scaled = np.full_like(plane, 128.0)
    bytes_ = np.clip(scaled, 0, 255).astype(np.uint8)
    height, width = plane.shape[1], plane.shape[2]
    for f in range(video.frames):
        path = out / f"frame_{f:03d}.pgm"
        with open(path, "wb") as fh:
            fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
            fh.write(bytes_[f].tobytes())
    click.echo(f"wrote {video.frames} frame(s) to {out}")


if __name__ == "__main__":
    main()
