"""Command-line front end: explain / insertion / sanity / bench / frames.

Every command takes ``--config <json>`` and ``--out <dir>``; ``--seed``
overrides the config's global seed.  Each run writes a JSON summary that
embeds the fully resolved configuration (defaults expanded), so any report
can be re-run bit-exactly from the config it carries.  Exit codes: 0 on
success, 2 for configuration/validation problems, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .core import Image, RngStream, SaliencyMap, read_tensor, write_map, write_tensor
from .evaluate import auc, insertion_curve, sanity_check, time_explainer
from .explain import (
    DummyConfig,
    ExplainerConfig,
    LimeConfig,
    NoiseConfig,
    OcclusionConfig,
    RiseConfig,
    explain_image,
    write_lime_explanation,
)
from .frames import FRAME_KINDS, generate_frames
from .models import (
    build_constant_model,
    build_dqn_toy,
    build_planted_model,
    read_model,
)
from .render import render_heatmap, write_png

__all__ = ["main", "ConfigError", "load_run_config"]


class ConfigError(ValueError):
    """Configuration problem, annotated with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"config field '{path}': {message}")
        self.path = path


def _get(d: dict, key: str, path: str, default=None, required: bool = False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    return d[key]


_EXPLAINER_TYPES = {
    "occlusion": OcclusionConfig,
    "noise": NoiseConfig,
    "rise": RiseConfig,
    "lime": LimeConfig,
    "dummy": DummyConfig,
}


def _parse_explainer(entry: dict, index: int) -> ExplainerConfig:
    path = f"explainers[{index}]"
    if not isinstance(entry, dict):
        raise ConfigError(path, "must be an object")
    variant = _get(entry, "variant", path, required=True)
    cls = _EXPLAINER_TYPES.get(variant)
    if cls is None:
        raise ConfigError(f"{path}.variant", f"unknown variant {variant!r}")
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in entry.items():
        if key == "variant":
            continue
        if key not in known:
            raise ConfigError(f"{path}.{key}", f"unknown parameter for variant {variant!r}")
        kwargs[key] = value
    if "name" not in kwargs:
        kwargs["name"] = f"{variant}-{index}"
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _build_model(spec: dict, base_dir: Path):
    kind = _get(spec, "kind", "model", required=True)
    if kind == "dqn-toy":
        return build_dqn_toy(
            int(_get(spec, "n_actions", "model", default=5)),
            RngStream(int(_get(spec, "seed", "model", default=0))),
        )
    if kind == "planted":
        return build_planted_model(
            tuple(_get(spec, "region", "model", required=True)),
            tuple(_get(spec, "input_shape", "model", default=[84, 84, 4])),
            int(_get(spec, "n_outputs", "model", default=5)),
            RngStream(int(_get(spec, "seed", "model", default=0))),
            hidden_dims=tuple(_get(spec, "hidden_dims", "model", default=[24, 12])),
            gain=float(_get(spec, "gain", "model", default=4.0)),
            offset=float(_get(spec, "offset", "model", default=0.0)),
        )
    if kind == "constant":
        return build_constant_model(_get(spec, "probabilities", "model", required=True))
    if kind == "file":
        path = base_dir / _get(spec, "path", "model", required=True)
        if not path.exists():
            raise ConfigError("model.path", f"no such file: {path}")
        return read_model(path)
    raise ConfigError("model.kind", f"unknown kind {kind!r}")


def _load_images(spec: dict, base_dir: Path) -> List[Image]:
    kind = _get(spec, "kind", "images", required=True)
    if kind == "files":
        paths = _get(spec, "paths", "images", required=True)
        images = []
        for i, rel in enumerate(paths):
            path = base_dir / rel
            if not path.exists():
                raise ConfigError(f"images.paths[{i}]", f"no such file: {path}")
            images.append(read_tensor(path))
        if not images:
            raise ConfigError("images.paths", "must list at least one file")
        return images
    if kind in FRAME_KINDS:
        return generate_frames(
            kind,
            _get(spec, "params", "images", default={}),
            int(_get(spec, "seed", "images", default=0)),
            int(_get(spec, "count", "images", default=1)),
        )
    raise ConfigError("images.kind", f"unknown kind {kind!r}")


@dataclass
class RunConfig:
    seed: int
    model: object
    images: List[Image]
    explainers: List[ExplainerConfig]
    options: dict
    resolved: dict


def _resolve_explainer_dict(config: ExplainerConfig) -> dict:
    out = {"variant": config.variant}
    for f in dataclasses.fields(config):
        if f.init:
            out[f.name] = getattr(config, f.name)
    return out


def load_run_config(raw: dict, base_dir: Path, seed_override: Optional[int] = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "config root must be a JSON object")
    seed = int(_get(raw, "seed", "", default=0))
    if seed_override is not None:
        seed = seed_override
    model_spec = _get(raw, "model", "", default={"kind": "dqn-toy", "n_actions": 5, "seed": 0})
    images_spec = _get(
        raw, "images", "", default={"kind": "planted-rect", "params": {}, "seed": 0, "count": 1}
    )
    explainer_specs = _get(raw, "explainers", "", default=[{"variant": "occlusion"}])
    if not isinstance(explainer_specs, list) or not explainer_specs:
        raise ConfigError("explainers", "must be a non-empty list")
    explainers = [_parse_explainer(e, i) for i, e in enumerate(explainer_specs)]
    names = [c.name for c in explainers]
    if len(set(names)) != len(names):
        raise ConfigError("explainers", f"names must be unique, got {names}")

    model = _build_model(model_spec, base_dir)
    images = _load_images(images_spec, base_dir)

    options = {
        "insertion": {
            "step_pixels": int(
                _get(_get(raw, "insertion", "", default={}), "step_pixels", "insertion", default=84)
            ),
            "random_baseline": bool(
                _get(
                    _get(raw, "insertion", "", default={}),
                    "random_baseline",
                    "insertion",
                    default=True,
                )
            ),
        },
        "sanity": {
            "include_identity_row": bool(
                _get(
                    _get(raw, "sanity", "", default={}),
                    "include_identity_row",
                    "sanity",
                    default=False,
                )
            ),
            "absolute": bool(
                _get(_get(raw, "sanity", "", default={}), "absolute", "sanity", default=False)
            ),
        },
        "bench": {
            "warmup": int(_get(_get(raw, "bench", "", default={}), "warmup", "bench", default=1)),
        },
        "render": {
            "overlay": bool(
                _get(_get(raw, "render", "", default={}), "overlay", "render", default=True)
            ),
            "alpha": float(
                _get(_get(raw, "render", "", default={}), "alpha", "render", default=0.6)
            ),
        },
        "frames": _get(raw, "frames", "", default=None),
    }

    resolved = {
        "seed": seed,
        "model": model_spec,
        "images": images_spec,
        "explainers": [_resolve_explainer_dict(c) for c in explainers],
        "insertion": options["insertion"],
        "sanity": options["sanity"],
        "bench": options["bench"],
        "render": options["render"],
    }
    if options["frames"] is not None:
        resolved["frames"] = options["frames"]
    return RunConfig(seed, model, images, explainers, options, resolved)


def _machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "saliencybench": __version__,
    }


def _write_summary(out_dir: Path, command: str, run: RunConfig, payload: dict) -> Path:
    summary = {
        "command": command,
        "seed": run.seed,
        "machine": _machine_descriptor(),
        "config": run.resolved,
    }
    summary.update(payload)
    path = out_dir / f"{command}_summary.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _explainer_rng(run: RunConfig, config: ExplainerConfig, explainer_idx: int, image_idx: int):
    seed = getattr(config, "seed", None)
    if seed is not None:
        return RngStream(int(seed)).child(image_idx)
    return RngStream(run.seed).child(explainer_idx).child(image_idx)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_explain(run: RunConfig, out_dir: Path) -> int:
    outputs = []
    for ei, config in enumerate(run.explainers):
        for ii, image in enumerate(run.images):
            rng = _explainer_rng(run, config, ei, ii)
            result = explain_image(run.model, image, config, rng)
            stem = f"saliency_img{ii:03d}_{config.name}"
            tensor_path = out_dir / f"{stem}.sbt1"
            write_map(result.saliency, tensor_path)
            png_path = out_dir / f"{stem}.png"
            base = image if run.options["render"]["overlay"] else None
            write_png(
                render_heatmap(result.saliency, base, run.options["render"]["alpha"]), png_path
            )
            entry = {"image": ii, "explainer": config.name, "tensor": tensor_path.name, "png": png_path.name}
            if result.lime is not None:
                record_path = out_dir / f"{stem}_explanation.json"
                write_lime_explanation(result.lime, record_path, _resolve_explainer_dict(config))
                entry["lime_record"] = record_path.name
            outputs.append(entry)
    _write_summary(out_dir, "explain", run, {"outputs": outputs})
    return 0


def cmd_insertion(run: RunConfig, out_dir: Path) -> int:
    step = run.options["insertion"]["step_pixels"]
    curves_csv = out_dir / "insertion_curves.csv"
    rows = []
    mean_auc = {}
    for ei, config in enumerate(run.explainers):
        aucs = []
        for ii, image in enumerate(run.images):
            rng = _explainer_rng(run, config, ei, ii)
            result = explain_image(run.model, image, config, rng)
            ordering = result.lime if result.lime is not None else result.saliency
            curve = insertion_curve(
                run.model, image, ordering, step_pixels=step, rng=rng.child(0xF00D)
            )
            aucs.append(auc(curve))
            for pi, (fr, cf) in enumerate(zip(curve.fractions, curve.confidences)):
                rows.append([config.name, ii, pi, f"{fr:.10g}", f"{cf:.10g}"])
        mean_auc[config.name] = float(np.mean(aucs))

    if run.options["insertion"]["random_baseline"]:
        aucs = []
        for ii, image in enumerate(run.images):
            rng = RngStream(run.seed).child(0xBA5E).child(ii)
            rand_map = SaliencyMap(
                rng.uniforms(image.height * image.width)
                .reshape(image.height, image.width)
                .astype(np.float32)
            )
            curve = insertion_curve(run.model, image, rand_map, step_pixels=step)
            aucs.append(auc(curve))
            for pi, (fr, cf) in enumerate(zip(curve.fractions, curve.confidences)):
                rows.append(["uniform-random", ii, pi, f"{fr:.10g}", f"{cf:.10g}"])
        mean_auc["uniform-random"] = float(np.mean(aucs))

    with open(curves_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["explainer", "image", "point", "fraction", "confidence"])
        writer.writerows(rows)
    _write_summary(
        out_dir,
        "insertion",
        run,
        {"mean_auc": mean_auc, "curves_csv": curves_csv.name, "step_pixels": step},
    )
    return 0


def cmd_sanity(run: RunConfig, out_dir: Path) -> int:
    include_identity = run.options["sanity"]["include_identity_row"]
    csv_path = out_dir / "sanity_rows.csv"
    reports = {}
    warnings = []
    rows_out = []
    for ei, config in enumerate(run.explainers):
        report = sanity_check(
            run.model,
            run.images,
            config,
            RngStream(run.seed).child(ei),
            include_identity_row=include_identity,
            absolute=run.options["sanity"]["absolute"],
        )
        def _finite(value):
            return value if np.isfinite(value) else None  # undefined -> JSON null

        rows = []
        for row in report.rows:
            rows.append(
                {
                    "depth": row.depth,
                    "spearman": _finite(row.spearman),
                    "ssim": _finite(row.ssim),
                    "hog_pearson": _finite(row.hog_pearson),
                    "n_images": row.n_images,
                    "spearman_excluded": row.spearman_excluded,
                    "ssim_excluded": row.ssim_excluded,
                    "hog_excluded": row.hog_excluded,
                }
            )
            rows_out.append(
                [
                    config.name,
                    row.depth,
                    f"{row.spearman:.10g}",
                    f"{row.ssim:.10g}",
                    f"{row.hog_pearson:.10g}",
                    row.n_images,
                    row.spearman_excluded,
                    row.ssim_excluded,
                    row.hog_excluded,
                ]
            )
        reports[config.name] = rows
        randomized = [r for r in report.rows if r.depth > 0]
        if randomized and all(
            r.spearman > 0.999 and r.ssim > 0.999 and r.hog_pearson > 0.999 for r in randomized
        ):
            msg = (
                f"explainer '{config.name}' FAILS the sanity check: maps are unchanged "
                "under parameter randomization at every depth"
            )
            warnings.append(msg)
            print(f"warning: {msg}", file=sys.stderr)

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "explainer",
                "depth",
                "spearman",
                "ssim",
                "hog_pearson",
                "n_images",
                "spearman_excluded",
                "ssim_excluded",
                "hog_excluded",
            ]
        )
        writer.writerows(rows_out)
    _write_summary(
        out_dir,
        "sanity",
        run,
        {"reports": reports, "warnings": warnings, "rows_csv": csv_path.name},
    )
    return 0


def cmd_bench(run: RunConfig, out_dir: Path) -> int:
    warmup = run.options["bench"]["warmup"]
    csv_path = out_dir / "bench_times.csv"
    results = {}
    rows = []
    for ei, config in enumerate(run.explainers):
        stats = time_explainer(
            run.model, run.images, config, warmup=warmup, rng=RngStream(run.seed).child(ei)
        )
        results[config.name] = {
            "mean_seconds": stats.mean,
            "std_seconds": stats.std,
            "min_seconds": stats.min,
            "max_seconds": stats.max,
            "runs": len(stats.seconds),
        }
        for ri, sec in enumerate(stats.seconds):
            rows.append([config.name, ri, f"{sec:.10g}"])
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["explainer", "run", "seconds"])
        writer.writerows(rows)
    _write_summary(
        out_dir, "bench", run, {"timings": results, "times_csv": csv_path.name, "warmup": warmup}
    )
    return 0


def cmd_frames(run: RunConfig, out_dir: Path) -> int:
    spec = run.options["frames"]
    if spec is None:
        raise ConfigError("frames", "missing required section for the frames command")
    kind = _get(spec, "kind", "frames", required=True)
    if kind not in FRAME_KINDS:
        raise ConfigError("frames.kind", f"unknown kind {kind!r}")
    params = _get(spec, "params", "frames", default={})
    seed = int(_get(spec, "seed", "frames", default=run.seed))
    count = int(_get(spec, "count", "frames", default=1))
    try:
        images = generate_frames(kind, params, seed, count)
    except ValueError as exc:
        raise ConfigError("frames", str(exc)) from exc
    outputs = []
    for i, image in enumerate(images):
        path = out_dir / f"frame_{kind}_{i:03d}.sbt1"
        write_tensor(image, path)
        outputs.append(path.name)
    _write_summary(out_dir, "frames", run, {"outputs": outputs, "kind": kind, "count": count})
    return 0


_COMMANDS = {
    "explain": cmd_explain,
    "insertion": cmd_insertion,
    "sanity": cmd_sanity,
    "bench": cmd_bench,
    "frames": cmd_frames,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saliencybench",
        description="Perturbation-based saliency maps and their computational evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="override the config's global seed")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    config_path = Path(args.config)
    try:
        if not config_path.exists():
            raise ConfigError("--config", f"no such file: {config_path}")
        try:
            raw = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from exc
        run = load_run_config(raw, config_path.parent, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.command](run, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/metric failure
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
