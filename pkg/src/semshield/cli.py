"""Command-line surface: generate, inspect, bench, rerun.

Every command writes a manifest with its fully resolved configuration
and the SHA-256 of each artifact; ``semshield rerun <manifest>``
re-executes the run and verifies the hashes, which on the toy backend
must reproduce bit-identically.

Config precedence: command-line flag > config file > built-in default.
The config file is flat ``key = value`` lines using the flag names
(``s-ca = 0.9``); ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import hashlib
import importlib
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import AttentionRecord, AttnMap, aggregate, minmax_norm
from .bench import (
    comparison_sweep,
    load_assignment_file,
    run_benchmark,
    swap_token_groups,
    token_mask_ablation,
)
from .container import dump_generation, read_container
from .datasets import generate_dataset
from .denoiser import ToyDenoiser
from .errors import MissingRecord, SemShieldError
from .pipeline import PipelineConfig, generate
from .extraction import ExtractionConfig
from .scenario import two_blob_scene
from .scoring import RemoteScorer, StubScorer
from . import viz

DEFAULTS = {
    "seed": 0,
    "steps": 20,
    "ts": 2,
    "s-ca": 0.9,
    "s-sa": 0.2,
    "guidance": 7.5,
    "backend": "toy",
    "toy-grid": 16,
    "dump-attn": False,
    "no-protect": False,
    "dataset": "cc500",
    "scorer": "stub",
    "scorer-protocol": "blip",
    "size": 100,
    "seeds": 4,
    "workers": 1,
    "threshold": 0.9,
    "concept": 0,
    "swap": False,
    "sweep": False,
}

_TYPES = {
    "seed": int, "steps": int, "ts": int, "toy-grid": int, "size": int,
    "seeds": int, "workers": int, "concept": int,
    "s-ca": float, "s-sa": float, "guidance": float, "threshold": float,
    "dump-attn": bool, "no-protect": bool, "swap": bool, "sweep": bool,
}


def read_config_file(path: str | Path) -> dict:
    """Parse flat ``key = value`` lines; unknown keys are rejected."""
    out = {}
    for i, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{i}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS and key not in ("prompt", "out"):
            raise ValueError(f"{path}:{i}: unknown config key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value):
    if value is None:
        return None
    typ = _TYPES.get(key, str)
    if typ is bool:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return typ(value)


def resolve_config(args: argparse.Namespace, keys: list[str]) -> dict:
    """Merge CLI flags, config file and defaults (in that precedence)."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key in keys:
        flag_val = getattr(args, key.replace("-", "_"), None)
        if flag_val is not None:
            resolved[key] = _coerce(key, flag_val)
        elif key in file_cfg:
            resolved[key] = _coerce(key, file_cfg[key])
        else:
            resolved[key] = DEFAULTS.get(key)
    for extra in ("prompt", "out"):
        if extra in keys:
            continue
        val = getattr(args, extra, None)
        if val is None and extra in file_cfg:
            val = file_cfg[extra]
        if val is not None:
            resolved[extra] = val
    return resolved


def build_backend(spec: str, toy_grid: int):
    """``toy`` or ``adapter:module.path:factory`` (imported and called)."""
    if spec == "toy":
        return ToyDenoiser(grid=(toy_grid, toy_grid))
    if spec.startswith("adapter:"):
        target = spec.split(":", 1)[1]
        if ":" not in target:
            raise ValueError(
                "adapter backends are addressed as adapter:module.path:factory"
            )
        mod_name, attr = target.rsplit(":", 1)
        factory = getattr(importlib.import_module(mod_name), attr)
        return factory()
    raise ValueError(f"unknown backend {spec!r}")


def _pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        total_steps=cfg["steps"],
        protection_steps=cfg["ts"],
        guidance_scale=cfg["guidance"],
        seed=cfg["seed"],
        extraction=ExtractionConfig(s_ca=cfg["s-ca"], s_sa=cfg["s-sa"]),
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: dict, artifacts: list[Path]):
    manifest = {
        "command": command,
        "config": cfg,
        "artifacts": {p.name: _sha256(p) for p in artifacts},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False), "utf-8")
    return path


# --- generate -------------------------------------------------------------

_GENERATE_KEYS = [
    "seed", "steps", "ts", "s-ca", "s-sa", "guidance",
    "backend", "toy-grid", "dump-attn", "no-protect",
]


def cmd_generate(args) -> int:
    cfg = resolve_config(args, _GENERATE_KEYS)
    prompt = cfg.get("prompt") or getattr(args, "prompt", None)
    if not prompt:
        raise ValueError("--prompt is required")
    cfg["prompt"] = prompt
    out_dir = Path(cfg.get("out") or getattr(args, "out", None) or "runs/latest")
    out_dir.mkdir(parents=True, exist_ok=True)

    backend = build_backend(cfg["backend"], cfg["toy-grid"])
    result = generate(
        prompt, _pipeline_config(cfg), backend, protect=not cfg["no-protect"]
    )

    artifacts = []
    img_path = out_dir / "image.png"
    Image.fromarray(result.image).save(img_path, format="PNG")
    artifacts.append(img_path)

    if result.mask is not None:
        table = out_dir / "mask_table.txt"
        table.write_text(result.mask.describe() + "\n", "utf-8")
        artifacts.append(table)

    if cfg["dump-attn"]:
        dump_path = out_dir / "dump.container"
        # the embedded snapshot must stay path-free so reruns hash equal
        snapshot = {k: v for k, v in cfg.items() if k != "out"}
        dump_generation(dump_path, result, config_snapshot=snapshot)
        artifacts.append(dump_path)

    _write_manifest(out_dir, "generate", cfg, artifacts)
    active = result.diagnostics.get("protection_active")
    print(
        f"generated {img_path} (protection={'on' if active else 'off'}, "
        f"steps={result.diagnostics.get('backend_steps')})"
    )
    return 0


# --- inspect ----------------------------------------------------------------


def _records_from_container(data: dict, prefix: str) -> list[AttentionRecord]:
    grids = data.get("meta", {}).get("layer_grids", {})
    slots: dict[tuple[int, str], dict[str, np.ndarray]] = {}
    for name, value in data.items():
        parts = name.split("/")
        if len(parts) != 3:
            continue
        kind_tag, t_tag, layer = parts
        if kind_tag == f"{prefix}cross" or (prefix == "" and kind_tag == "cross"):
            kind = "cross"
        elif kind_tag == f"{prefix}self" or (prefix == "" and kind_tag == "self"):
            kind = "self"
        else:
            continue
        slots.setdefault((int(t_tag[1:]), layer), {})[kind] = np.asarray(
            value, dtype=np.float64
        )
    records = []
    for (step, layer), maps in sorted(slots.items()):
        if "cross" not in maps or "self" not in maps:
            continue
        grid = tuple(grids.get(layer, (0, 0)))
        if grid == (0, 0):
            side = int(round(np.sqrt(maps["cross"].shape[0])))
            grid = (side, side)
        records.append(
            AttentionRecord(
                step=step,
                layer=layer,
                cross=AttnMap(values=maps["cross"], grid=grid, kind="cross"),
                self_map=AttnMap(values=maps["self"], grid=grid, kind="self"),
            )
        )
    return records


def cmd_inspect(args) -> int:
    data = read_container(args.container)
    meta = data.get("meta")
    if not meta:
        raise MissingRecord(f"{args.container}: no meta entry")
    records = _records_from_container(data, "p1") or _records_from_container(data, "")
    if not records:
        raise MissingRecord(f"{args.container}: no attention records")
    out_dir = Path(args.out or Path(args.container).parent / "inspect")
    out_dir.mkdir(parents=True, exist_ok=True)
    threshold = args.threshold if args.threshold is not None else DEFAULTS["threshold"]

    agg_cross = aggregate(records, "cross")
    agg_self = aggregate(records, "self")
    w, h = agg_cross.grid

    concepts = meta["concepts"]
    wanted = [c for c in concepts if args.concept in (0, None, c["index"])]
    if not wanted:
        raise MissingRecord(f"concept {args.concept} not in container")

    legend = {}
    for c in wanted:
        k = c["index"]
        start, end = c["span"]
        column = agg_cross.values[:, start:end].mean(axis=1)
        column = minmax_norm(column)
        heat, m1 = viz.render_heatmap(column, (w, h))
        viz.save_image(heat, out_dir / f"concept{k}_cross.png")
        points = column.reshape(h, w) >= threshold
        viz.save_image(viz.render_points(points), out_dir / f"concept{k}_points.png")

        anchor_key = f"anchor/{k}"
        meta_entry = {"cross": m1, "threshold": threshold, "surface": c["surface"]}
        if anchor_key in data:
            anchor = np.asarray(data[anchor_key], dtype=bool)
            flat = anchor.reshape(-1)
            self_col = minmax_norm(agg_self.values[:, flat].mean(axis=1))
            sheat, m2 = viz.render_heatmap(self_col, (w, h))
            viz.save_image(sheat, out_dir / f"concept{k}_self.png")
            meta_entry["self"] = m2
        region_key = f"region/{k}"
        if region_key in data:
            overlay, _ = viz.render_mask_overlay(
                column, np.asarray(data[region_key], dtype=bool), (w, h)
            )
            viz.save_image(overlay, out_dir / f"concept{k}_region.png")
        legend[str(k)] = meta_entry

    (out_dir / "legend.json").write_text(json.dumps(legend, indent=2), "utf-8")
    print(f"inspection written to {out_dir}")
    return 0


# --- bench ------------------------------------------------------------------

_BENCH_KEYS = [
    "seed", "steps", "ts", "s-ca", "s-sa", "guidance", "backend", "toy-grid",
    "dataset", "scorer", "scorer-protocol", "size", "seeds", "workers",
    "swap", "sweep",
]


def _build_scorer(cfg: dict):
    spec = cfg["scorer"]
    if spec == "stub":
        return StubScorer()
    if spec.startswith("service:"):
        return RemoteScorer(url=spec.split(":", 1)[1], protocol=cfg["scorer-protocol"])
    raise ValueError(f"unknown scorer {spec!r}")


def cmd_bench(args) -> int:
    cfg = resolve_config(args, _BENCH_KEYS)
    out_dir = Path(cfg.get("out") or getattr(args, "out", None) or "runs/bench")
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []

    if cfg["sweep"]:
        scene = two_blob_scene()
        thresholds = [round(0.1 * i, 1) for i in range(1, 10)]
        report = comparison_sweep(scene, thresholds)
        sweep_path = out_dir / "sweep.jsonl"
        report.to_jsonl(sweep_path)
        artifacts.append(sweep_path)
        lines = ["mode        s_ca  s_sa  score"]
        for p in report.points:
            s_sa = f"{p.s_sa:.1f}" if p.s_sa is not None else "  - "
            lines.append(f"{p.mode:<11} {p.s_ca:.1f}  {s_sa}  {p.score:.4f}")
        (out_dir / "sweep.txt").write_text("\n".join(lines) + "\n", "utf-8")
        artifacts.append(out_dir / "sweep.txt")
        print("\n".join(lines))

    elif args.ablation_tokens:
        prompt = cfg.get("prompt") or getattr(args, "prompt", None)
        if not prompt:
            raise ValueError("--prompt is required for a token ablation")
        _, assignments = load_assignment_file(args.ablation_tokens)
        backend = build_backend(cfg["backend"], cfg["toy-grid"])
        pipeline_cfg = _pipeline_config(cfg)
        runs = [("ablation", assignments)]
        if cfg["swap"]:
            runs.append(("ablation_swapped", swap_token_groups(assignments)))
        for label, assigned in runs:
            res = token_mask_ablation(prompt, assigned, pipeline_cfg, backend)
            img_path = out_dir / f"{label}.png"
            Image.fromarray(res.result.image).save(img_path, format="PNG")
            artifacts.append(img_path)
            if res.mask is not None:
                table = out_dir / f"{label}_mask.txt"
                table.write_text(res.mask.describe() + "\n", "utf-8")
                artifacts.append(table)
        print(f"ablation artifacts in {out_dir}")

    else:
        dataset = generate_dataset(cfg["dataset"], seed=cfg["seed"], size=cfg["size"])
        dataset.seeds_per_prompt = cfg["seeds"]
        backend_grid = cfg["toy-grid"]

        def factory():
            return build_backend(cfg["backend"], backend_grid)

        report = run_benchmark(
            dataset,
            _pipeline_config(cfg),
            backend_factory=factory,
            scorer=_build_scorer(cfg),
            items_path=out_dir / "items.jsonl",
            workers=cfg["workers"],
        )
        (out_dir / "summary.txt").write_text(report.summary_text() + "\n", "utf-8")
        (out_dir / "summary.csv").write_text(report.summary_csv(), "utf-8")
        artifacts += [out_dir / "items.jsonl", out_dir / "summary.txt", out_dir / "summary.csv"]
        print(report.summary_text())

    _write_manifest(out_dir, "bench", cfg, artifacts)
    return 0


# --- rerun ------------------------------------------------------------------


def cmd_rerun(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = json.loads(manifest_path.read_text("utf-8"))
    cfg = manifest["config"]
    out_dir = Path(args.out) if args.out else manifest_path.parent / "rerun"

    replay = argparse.Namespace(
        config=None,
        prompt=cfg.get("prompt"),
        out=str(out_dir),
        ablation_tokens=None,
        **{k.replace("-", "_"): v for k, v in cfg.items() if k not in ("prompt", "out")},
    )
    command = manifest["command"]
    if command == "generate":
        cmd_generate(replay)
    elif command == "bench":
        cmd_bench(replay)
    else:
        raise ValueError(f"cannot rerun command {command!r}")

    new_manifest = json.loads((out_dir / "manifest.json").read_text("utf-8"))
    mismatched = [
        name
        for name, digest in manifest["artifacts"].items()
        if new_manifest["artifacts"].get(name) != digest
    ]
    total = len(manifest["artifacts"])
    if mismatched:
        print(f"reproduction FAILED: {mismatched} differ ({total - len(mismatched)}/{total} match)")
        return 1
    print(f"reproduced: {total}/{total} artifacts identical")
    return 0


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semshield",
        description="Semantic shielding for multi-concept text-to-image attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run one (optionally protected) generation")
    gen.add_argument("--prompt")
    gen.add_argument("--config")
    gen.add_argument("--out")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--steps", type=int)
    gen.add_argument("--ts", type=int, help="protection/recording step count")
    gen.add_argument("--s-ca", type=float, dest="s_ca")
    gen.add_argument("--s-sa", type=float, dest="s_sa")
    gen.add_argument("--guidance", type=float)
    gen.add_argument("--backend")
    gen.add_argument("--toy-grid", type=int, dest="toy_grid")
    gen.add_argument("--dump-attn", action="store_true", default=None, dest="dump_attn")
    gen.add_argument("--no-protect", action="store_true", default=None, dest="no_protect")
    gen.set_defaults(func=cmd_generate)

    ins = sub.add_parser("inspect", help="render heatmaps from a dump container")
    ins.add_argument("container")
    ins.add_argument("--concept", type=int, default=0, help="1-based index; 0 = all")
    ins.add_argument("--threshold", type=float, default=None)
    ins.add_argument("--out")
    ins.set_defaults(func=cmd_inspect)

    ben = sub.add_parser("bench", help="dataset runs, sweeps and ablations")
    ben.add_argument("--dataset")
    ben.add_argument("--config")
    ben.add_argument("--out")
    ben.add_argument("--prompt")
    ben.add_argument("--seed", type=int)
    ben.add_argument("--steps", type=int)
    ben.add_argument("--ts", type=int)
    ben.add_argument("--s-ca", type=float, dest="s_ca")
    ben.add_argument("--s-sa", type=float, dest="s_sa")
    ben.add_argument("--guidance", type=float)
    ben.add_argument("--backend")
    ben.add_argument("--toy-grid", type=int, dest="toy_grid")
    ben.add_argument("--scorer")
    ben.add_argument("--scorer-protocol", dest="scorer_protocol")
    ben.add_argument("--size", type=int)
    ben.add_argument("--seeds", type=int)
    ben.add_argument("--workers", type=int)
    ben.add_argument("--sweep", action="store_true", default=None)
    ben.add_argument("--ablation-tokens", dest="ablation_tokens")
    ben.add_argument("--swap", action="store_true", default=None)
    ben.set_defaults(func=cmd_bench)

    rer = sub.add_parser("rerun", help="re-execute a manifest and verify hashes")
    rer.add_argument("manifest")
    rer.add_argument("--out")
    rer.set_defaults(func=cmd_rerun)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SemShieldError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
