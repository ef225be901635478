"""Command-line entry point.

Every subcommand is driven by a JSON config file; --set key=value overrides
individual entries (dotted paths for nesting). The effective configuration is
echoed into the output directory so any artifact can be reproduced from its
own outputs. Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .classifier import TrainConfig
from .corpus import load_manifest
from .errors import DivmixError, ValidationError
from .experiment import (
    SweepConfig,
    descriptor_cache_path,
    run_diversity_comparison,
    run_mixture_sweep,
    write_embedding_csv,
    write_histogram_csv,
    write_report,
    write_spectrum_csv,
)
from .diversity import distance_histogram, mds_embed, pairwise_distances, pca_spectrum
from .gist import GistParams, batch_descriptors
from .partition import split_similar_diverse, write_partition_csv
from .synth import (
    VIEW_PRESETS,
    ObjectSpec,
    Part,
    ViewDistribution,
    builtin_object,
    generate_corpus,
)

log = logging.getLogger("divmix")

SUBCOMMANDS = ("synth", "gist", "diversity", "partition", "sweep", "compare")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbosity)
    try:
        config = _load_config(args.config)
        for item in args.set or []:
            _apply_override(config, item)
        if args.out is not None:
            config["out_dir"] = args.out
        if args.seed is not None:
            _apply_seed(config, args.command, args.seed)
        out_dir = Path(config.get("out_dir", "."))
        handler = _HANDLERS[args.command]
        handler(config, out_dir, args)
        _echo_config(config, out_dir)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivmixError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divmix",
        description="Diversity measurement and mixture curation for image corpora.",
    )
    parser.add_argument("--version", action="version", version=f"divmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "synth": "generate a synthetic rendered corpus",
        "gist": "extract descriptors for a manifest and write a cache",
        "diversity": "histogram / spectrum / embedding reports for one manifest",
        "partition": "similar-diverse partition CSV for a manifest",
        "sweep": "mixture sweep: train and evaluate over the (p, n, seed) grid",
        "compare": "diversity comparison between two manifests",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=descriptions[name])
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker pool width (default: available parallelism)")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("-v", dest="verbosity", action="count", default=0,
                       help="more logging")
        p.add_argument("-q", dest="verbosity", action="store_const", const=-1,
                       help="errors only")
    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    elif verbosity < 0:
        level = logging.ERROR
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("divmix").setLevel(level if verbosity != 0 else logging.INFO)


def _load_config(path: str) -> dict:
    config_path = Path(path)
    if not config_path.is_file():
        raise ValidationError(f"config file not found: {config_path}")
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {config_path}: invalid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ValidationError(f"config {config_path}: expected a JSON object")
    config["_config_dir"] = str(config_path.parent)
    return config


def _apply_override(config: dict, item: str) -> None:
    if "=" not in item:
        raise ValidationError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ValidationError(f"override {key!r}: no config section {part!r}")
        node = node[part]
    node[parts[-1]] = value


def _apply_seed(config: dict, command: str, seed: int) -> None:
    if command == "synth":
        config["seed"] = seed
    elif command == "sweep":
        config.setdefault("train", {})["seed"] = seed
    else:
        raise ValidationError(f"--seed is not applicable to {command!r}")


def _echo_config(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in config.items() if not k.startswith("_")}
    (out_dir / "config_echo.json").write_text(json.dumps(echo, indent=2),
                                              encoding="utf-8")


def _require(config: dict, key: str, where: str):
    if key not in config:
        raise ValidationError(f"{where}: missing config key {key!r}")
    return config[key]


def _resolve(config: dict, value: str) -> Path:
    path = Path(value)
    if not path.is_absolute():
        path = Path(config.get("_config_dir", ".")) / path
    return path


def _gist_params(config: dict) -> GistParams:
    raw = dict(config.get("params", {}))
    known = {"image_side", "orientations_per_scale", "blocks", "prefilter_cutoff"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown gist params keys: {sorted(unknown)}")
    if "orientations_per_scale" in raw:
        raw["orientations_per_scale"] = tuple(raw["orientations_per_scale"])
    return GistParams(**raw)


def _cache_dir(config: dict, out_dir: Path) -> Path:
    if "cache_dir" in config:
        return _resolve(config, str(config["cache_dir"]))
    env = os.environ.get("DIVMIX_CACHE_DIR")
    if env:
        return Path(env)
    return out_dir / "cache"


def _view_distribution(raw: dict) -> ViewDistribution:
    raw = dict(raw)
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in VIEW_PRESETS:
            raise ValidationError(
                f"unknown view preset {preset!r}; expected one of {sorted(VIEW_PRESETS)}"
            )
        base = asdict(VIEW_PRESETS[preset]())
        base.update(raw)
        raw = base
    try:
        return ViewDistribution(**raw)
    except TypeError as exc:
        raise ValidationError(f"bad view distribution: {exc}") from exc


def _object_specs(raw_objects) -> list[ObjectSpec]:
    objects = []
    for entry in raw_objects:
        if isinstance(entry, str):
            objects.append(builtin_object(entry))
            continue
        try:
            parts = tuple(
                Part(shape=p["shape"], center=tuple(p["center"]),
                     half_extents=tuple(p["half_extents"]), albedo=p["albedo"])
                for p in entry["parts"]
            )
            objects.append(ObjectSpec(name=entry["name"], parts=parts))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad object spec {entry!r}: {exc}") from exc
    return objects


def _progress_logger(what: str):
    def report(done: int, total: int) -> None:
        if done == total or done % 100 == 0:
            log.info("%s: %d/%d", what, done, total)
    return report


def _cmd_synth(config: dict, out_dir: Path, args) -> None:
    objects = _object_specs(_require(config, "objects", "synth"))
    raw_dists = _require(config, "distributions", "synth")
    dists = {split: _view_distribution(d) for split, d in raw_dists.items()}
    counts = {k: int(v) for k, v in _require(config, "counts", "synth").items()}
    seed = int(config.get("seed", 0))
    side = int(config.get("image_side", 128))
    manifest = generate_corpus(objects, dists, counts, out_dir, seed, image_side=side)
    log.info("wrote %d records to %s", len(manifest.records), out_dir / "manifest.jsonl")


def _cmd_gist(config: dict, out_dir: Path, args) -> None:
    manifest = load_manifest(_resolve(config, _require(config, "manifest", "gist")))
    params = _gist_params(config)
    cache_dir = _cache_dir(config, out_dir)
    cache = descriptor_cache_path(cache_dir, params, manifest)
    dset = batch_descriptors(manifest, params, cache,
                             progress=_progress_logger("descriptors"))
    log.info("descriptors: %d rows of dim %d cached at %s",
             len(dset), dset.matrix.shape[1], cache)


def _cmd_diversity(config: dict, out_dir: Path, args) -> None:
    manifest = load_manifest(_resolve(config, _require(config, "manifest", "diversity")))
    params = _gist_params(config)
    bins = int(config.get("bins", 30))
    top_k = int(config.get("top_k", 10))
    cache_dir = _cache_dir(config, out_dir)
    dset = batch_descriptors(manifest, params,
                             descriptor_cache_path(cache_dir, params, manifest),
                             progress=_progress_logger("descriptors"))
    dm = pairwise_distances(dset)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(distance_histogram(dm, bins), out_dir / "histogram.csv")
    write_spectrum_csv(pca_spectrum(dset, top_k), out_dir / "spectrum.csv")
    write_embedding_csv(mds_embed(dm, ids=dset.ids), manifest,
                        out_dir / "embedding.csv")
    log.info("diversity reports written to %s", out_dir)


def _cmd_partition(config: dict, out_dir: Path, args) -> None:
    manifest = load_manifest(_resolve(config, _require(config, "manifest", "partition")))
    params = _gist_params(config)
    cache_dir = _cache_dir(config, out_dir)
    dset = batch_descriptors(manifest, params,
                             descriptor_cache_path(cache_dir, params, manifest),
                             progress=_progress_logger("descriptors"))
    labels = split_similar_diverse(dset, manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_partition_csv(labels, manifest, out_dir / "partition.csv")
    log.info("partition written to %s", out_dir / "partition.csv")


def _cmd_sweep(config: dict, out_dir: Path, args) -> None:
    train_m = load_manifest(_resolve(config, _require(config, "train_manifest", "sweep")))
    test_m = load_manifest(_resolve(config, _require(config, "test_manifest", "sweep")))
    params = _gist_params(config)
    raw_sweep = dict(config.get("sweep", {}))
    for key in ("p_grid", "n_grid", "seeds"):
        if key in raw_sweep:
            raw_sweep[key] = tuple(raw_sweep[key])
    try:
        sweep = SweepConfig(**raw_sweep)
        train_cfg = TrainConfig(**config.get("train", {}))
    except TypeError as exc:
        raise ValidationError(f"bad sweep/train config: {exc}") from exc
    report = run_mixture_sweep(
        train_m, test_m, params, sweep, train_cfg,
        cache_dir=_cache_dir(config, out_dir), threads=args.threads,
        progress=_progress_logger("cells"),
    )
    paths = write_report(report, out_dir)
    log.info("sweep report written: %s", ", ".join(str(p) for p in paths.values()))


def _cmd_compare(config: dict, out_dir: Path, args) -> None:
    manifest_a = load_manifest(_resolve(config, _require(config, "manifest_a", "compare")))
    manifest_b = load_manifest(_resolve(config, _require(config, "manifest_b", "compare")))
    params = _gist_params(config)
    _, paths = run_diversity_comparison(
        manifest_a, manifest_b, params, out_dir,
        bins=int(config.get("bins", 30)), top_k=int(config.get("top_k", 10)),
        names=tuple(config.get("names", ("a", "b"))),
        cache_dir=_cache_dir(config, out_dir),
    )
    log.info("comparison written: %s", ", ".join(str(p) for p in paths.values()))


_HANDLERS = {
    "synth": _cmd_synth,
    "gist": _cmd_gist,
    "diversity": _cmd_diversity,
    "partition": _cmd_partition,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
}


if __name__ == "__main__":
    sys.exit(main())
