"""``padim-ace`` command line: synth, extract, fit, signature, score, eval.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.  Option
values resolve as command-line flag > ``--config`` JSON file > default.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import pipeline
from .anomaly_map import to_pgm
from .bundle import load_bundle
from .errors import PadimAceError
from .metrics import aggregate_runs
from .synth import SceneParams, SplitConfig, generate_dataset, load_dataset

DEFAULTS: dict[str, dict[str, Any]] = {
    "synth": {
        "out": None, "n_normal": 80, "n_anomalous": 20, "seed": 7, "height": 64, "width": 64,
        "looks": 4, "contrast": 5.0, "targets": 2, "radius_min": 3.0, "radius_max": 7.0,
        "train_fraction": 0.8,
    },
    "extract": {"data": None, "out": None, "extractor_seed": 0, "split": "all"},
    "fit": {
        "data": None, "out": None, "features": None, "d": 100, "cov": "full", "agg": "mean-diagonal",
        "epsilon": 0.01, "seed": 0, "extractor_seed": 0,
    },
    "signature": {
        "bundle": None, "data": None, "features": None, "split": "val", "signature_mode": "global",
        "use_masks": False, "out": None,
    },
    "score": {
        "bundle": None, "data": None, "features": None, "split": "test", "detector": "ace",
        "sigma": 4.0, "out": None, "pgm_dir": None,
    },
    "eval": {
        "data": None, "results": None, "out": None, "seeds": None, "workdir": None, "features": None,
        "detector": "ace", "d": 100, "cov": "full", "agg": "mean-diagonal", "epsilon": 0.01,
        "sigma": 4.0, "extractor_seed": 0, "signature_mode": "global", "use_masks": False,
        "signature_split": "val", "split": "test",
    },
}

REQUIRED = {
    "synth": ("out",),
    "extract": ("data", "out"),
    "fit": ("data", "out"),
    "signature": ("bundle", "data"),
    "score": ("bundle", "data", "out"),
    "eval": ("data", "out"),
}


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, help="number of randomly kept embedding channels (default 100)")
    p.add_argument("--cov", choices=["full", "diagonal", "isotropic"], help="background covariance type")
    p.add_argument("--agg", choices=["mean-diagonal", "mean-full", "determinant", "trace"],
                   help="isotropic aggregation operation")
    p.add_argument("--epsilon", type=float, help="covariance ridge (default 0.01)")
    p.add_argument("--extractor-seed", type=int, help="toy extractor weight seed")


def _add_signature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--signature-mode", choices=["global", "per-location"])
    p.add_argument("--use-masks", action="store_true", default=argparse.SUPPRESS,
                   help="average only mask-positive patches")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="padim-ace", description=__doc__.splitlines()[0],
                                     argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with option defaults")
        return p

    p = command("synth", "generate a synthetic SAR dataset archive")
    p.add_argument("--out", help="dataset archive to write")
    p.add_argument("--n-normal", type=int)
    p.add_argument("--n-anomalous", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--looks", type=int, help="speckle looks L")
    p.add_argument("--contrast", type=float, help="target contrast c")
    p.add_argument("--targets", type=int, help="targets per anomalous scene")
    p.add_argument("--radius-min", type=float)
    p.add_argument("--radius-max", type=float)
    p.add_argument("--train-fraction", type=float)

    p = command("extract", "run the toy extractor and write a feature archive")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--extractor-seed", type=int)
    p.add_argument("--split", choices=["all", "train", "val", "test"])

    p = command("fit", "fit the per-location Gaussian background model")
    p.add_argument("--data")
    p.add_argument("--out", help="model bundle to write")
    p.add_argument("--features", help="pre-extracted feature archive")
    p.add_argument("--seed", type=int, help="channel-selection seed")
    _add_model_flags(p)

    p = command("signature", "build the target signature into a bundle")
    p.add_argument("--bundle")
    p.add_argument("--data")
    p.add_argument("--features")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--out", help="write to this bundle instead of replacing --bundle")
    _add_signature_flags(p)

    p = command("score", "score a dataset split and write a results archive")
    p.add_argument("--bundle")
    p.add_argument("--data")
    p.add_argument("--features")
    p.add_argument("--split", choices=["all", "train", "val", "test"])
    p.add_argument("--detector", choices=["ace", "mahalanobis"])
    p.add_argument("--sigma", type=float, help="Gaussian blur sigma in pixels (default 4)")
    p.add_argument("--out")
    p.add_argument("--pgm-dir", help="also export 8-bit PGM heatmaps here")

    p = command("eval", "compute AUROC for results, or run fit/signature/score/eval per seed")
    p.add_argument("--data")
    p.add_argument("--results", help="results archive from `score`")
    p.add_argument("--out", help="report JSON to write")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds for a multi-run evaluation")
    p.add_argument("--seed", type=lambda s: _seed_list(s), dest="seeds")
    p.add_argument("--workdir", help="directory for per-seed artifacts")
    p.add_argument("--features")
    p.add_argument("--detector", choices=["ace", "mahalanobis"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--split", choices=["val", "test"])
    p.add_argument("--signature-split", choices=["train", "val", "test"])
    _add_model_flags(p)
    _add_signature_flags(p)
    return parser


def resolve(parser: argparse.ArgumentParser, args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, config file and explicit flags for ``args.command``."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    given = vars(args)
    if "config" in given:
        try:
            file_cfg = json.loads(Path(given["config"]).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {given['config']}: {exc}")
        file_cfg = {**{k: v for k, v in file_cfg.items() if not isinstance(v, dict)}, **file_cfg.get(cmd, {})}
        for key, value in file_cfg.items():
            key = key.replace("-", "_")
            if key in cfg:
                cfg[key] = value
    for key, value in given.items():
        if key in cfg:
            cfg[key] = value
    missing = [k for k in REQUIRED[cmd] if cfg.get(k) is None]
    if missing:
        parser.error(f"{cmd}: missing required option(s) " + ", ".join("--" + m.replace("_", "-") for m in missing))
    if "d" in cfg and int(cfg["d"]) < 1:
        parser.error("--d must be >= 1")
    if cmd == "eval":
        if cfg["results"] is None and not cfg["seeds"]:
            parser.error("eval needs --results or --seeds")
        if cfg["seeds"] and cfg["workdir"] is None:
            parser.error("eval --seeds needs --workdir")
        if isinstance(cfg["seeds"], str):
            cfg["seeds"] = _seed_list(cfg["seeds"])
    return cfg


def _mode(name: str) -> str:
    return name.replace("-", "_")


def cmd_synth(cfg: dict[str, Any]) -> int:
    params = SceneParams(
        height=cfg["height"], width=cfg["width"], speckle_looks=cfg["looks"], target_count=cfg["targets"],
        target_contrast=cfg["contrast"], target_radii=(cfg["radius_min"], cfg["radius_max"]), seed=cfg["seed"],
    )
    manifest = generate_dataset(params, cfg["n_normal"], cfg["n_anomalous"],
                                SplitConfig(train_fraction=cfg["train_fraction"]), cfg["out"])
    for split, items in manifest.splits.items():
        n_anom = sum(it["label"] for it in items)
        print(f"{split}: {len(items) - n_anom} normal, {n_anom} anomalous")
    print(f"wrote {cfg['n_normal'] + cfg['n_anomalous']} images to {cfg['out']}")
    return 0


def cmd_extract(cfg: dict[str, Any]) -> int:
    ds = load_dataset(cfg["data"])
    items = ds.manifest.items(cfg["split"])
    pyramids = pipeline.extract_pyramids([ds.image(it) for it in items], cfg["extractor_seed"])
    pipeline.write_feature_archive(cfg["out"], [it["id"] for it in items], pyramids, cfg["extractor_seed"])
    print(f"extracted {len(items)} pyramids to {cfg['out']}")
    return 0


def _features(cfg: dict[str, Any]):
    return None if cfg.get("features") is None else pipeline.read_feature_archive(cfg["features"])


def cmd_fit(cfg: dict[str, Any]) -> int:
    ds = load_dataset(cfg["data"])
    items = ds.manifest.items("train")
    if not items:
        raise PadimAceError("train split is empty")
    feats = _features(cfg)
    pyramids = pipeline.pyramids_for(ds, items, cfg["extractor_seed"], feats)
    bundle = pipeline.fit_model(
        pyramids, ds.image(items[0]).shape, d=cfg["d"], cov_type=cfg["cov"], aggregation=_mode(cfg["agg"]),
        epsilon=cfg["epsilon"], seed=cfg["seed"], extractor_seed=cfg["extractor_seed"],
        features="toy" if feats is None else "external",
    )
    bundle.save(cfg["out"])
    print(f"fitted {bundle.field.cov_type} model on {len(items)} images, grid {bundle.field.grid}, d={bundle.d}")
    return 0


def cmd_signature(cfg: dict[str, Any]) -> int:
    bundle = load_bundle(cfg["bundle"])
    ds = load_dataset(cfg["data"])
    items = [it for it in ds.manifest.items(cfg["split"]) if it["label"] == 1]
    if not items:
        raise PadimAceError(f"no anomalous images in the {cfg['split']} split")
    pyramids = pipeline.pyramids_for(ds, items, bundle.extractor_seed, _features(cfg))
    masks = [ds.mask(it) for it in items] if cfg["use_masks"] else None
    sig = pipeline.build_signature(bundle, pyramids, masks, _mode(cfg["signature_mode"]))
    out = cfg["out"] or cfg["bundle"]
    bundle.with_signature(sig).save(out)
    print(f"{sig.mode} signature from {sig.source_count} patch embeddings written to {out}")
    return 0


def cmd_score(cfg: dict[str, Any]) -> int:
    bundle = load_bundle(cfg["bundle"])
    ds = load_dataset(cfg["data"])
    items = ds.manifest.items(cfg["split"])
    ids = [it["id"] for it in items]
    pyramids = pipeline.pyramids_for(ds, items, bundle.extractor_seed, _features(cfg))
    scored = pipeline.score_images(bundle, pyramids, ids, cfg["detector"], cfg["sigma"])
    meta = {"detector": cfg["detector"], "sigma": cfg["sigma"], "split": cfg["split"], "seed": bundle.seed,
            "cov_type": bundle.field.cov_type, "aggregation": bundle.field.aggregation}
    pipeline.write_results(cfg["out"], ids, scored, meta)
    if cfg.get("pgm_dir"):
        outdir = Path(cfg["pgm_dir"])
        outdir.mkdir(parents=True, exist_ok=True)
        for iid, (_, amap) in zip(ids, scored):
            (outdir / f"{iid}.pgm").write_bytes(to_pgm(amap.pixels))
    print(f"scored {len(ids)} images with {cfg['detector']} to {cfg['out']}")
    return 0


def _run_seed(cfg: dict[str, Any], seed: int, workdir: Path) -> dict[str, Any]:
    rundir = workdir / f"seed_{seed}"
    rundir.mkdir(parents=True, exist_ok=True)
    bundle, results = rundir / "bundle.zip", rundir / "results.npz"
    shared = {"data": cfg["data"], "features": cfg["features"]}
    cmd_fit({**shared, "out": str(bundle), "d": cfg["d"], "cov": cfg["cov"], "agg": cfg["agg"],
             "epsilon": cfg["epsilon"], "seed": seed, "extractor_seed": cfg["extractor_seed"]})
    if cfg["detector"] == "ace":
        cmd_signature({**shared, "bundle": str(bundle), "split": cfg["signature_split"],
                       "signature_mode": cfg["signature_mode"], "use_masks": cfg["use_masks"], "out": None})
    cmd_score({**shared, "bundle": str(bundle), "split": cfg["split"], "detector": cfg["detector"],
               "sigma": cfg["sigma"], "out": str(results), "pgm_dir": None})
    meta, entries = pipeline.read_results(results)
    run = pipeline.evaluate_results(meta, entries, load_dataset(cfg["data"]))
    run["seed"] = seed
    (rundir / "report.json").write_text(aggregate_runs([run], _echo(cfg)).to_json())
    return run


def _echo(cfg: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in sorted(cfg.items())}


def cmd_eval(cfg: dict[str, Any]) -> int:
    if cfg["seeds"]:
        workdir = Path(cfg["workdir"])
        runs = [_run_seed(cfg, seed, workdir) for seed in cfg["seeds"]]
    else:
        meta, entries = pipeline.read_results(cfg["results"])
        runs = [pipeline.evaluate_results(meta, entries, load_dataset(cfg["data"]))]
        # model settings come from the results archive, not this command's defaults
        cfg = {"data": cfg["data"], "results": cfg["results"], "out": cfg["out"],
               **{k: v for k, v in meta.items() if k != "ids"}}
    report = aggregate_runs(runs, _echo(cfg))
    Path(cfg["out"]).write_text(report.to_json())
    std_px = report.std["pixel_auroc"]
    print(f"image AUROC {report.mean['image_auroc']:.9f} ± {report.std['image_auroc']:.9f}; "
          f"pixel AUROC {report.mean['pixel_auroc']:.9f} ± {std_px:.9f} over {len(runs)} run(s)")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "fit": cmd_fit,
    "signature": cmd_signature,
    "score": cmd_score,
    "eval": cmd_eval,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(parser, args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        return COMMANDS[args.command](cfg)
    except (PadimAceError, ValueError, KeyError, OSError) as exc:
        print(f"padim-ace {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
