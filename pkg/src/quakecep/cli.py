"""Command-line entry point: synth -> extract -> train -> evaluate -> report.

Every subcommand works inside one workspace directory (``--out``)::

    <out>/data/manifest.json, records/*.csv        (synth)
    <out>/features/{mfb,mfcc}/*.qct, intensity.csv  (extract)
    <out>/models/<kind>/model.qnn, history.csv      (train)
    <out>/eval/<kind>/eval.json                     (evaluate)
    <out>/report/report.json, scatter_<kind>.*      (report)

Each of those directories also receives a ``config*.json`` sidecar holding
the fully resolved configuration, so any artifact can be regenerated.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import extract_dataset, load_features, load_manifest
from .errors import ConfigError, DataError, TrainingDivergence
from .features import FEATURE_KINDS, INTENSITY, FeatureConfig, normalize_kind
from .neural import load_checkpoint, save_checkpoint
from .synth import PierModel, SynthConfig, build_dataset, worker_count, write_dataset
from .training import (SplitPlan, TrainConfig, architecture_for, evaluate, split_by_ground_motion,
                       train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "synth.n_gms": 30,
    "synth.n_scales": 4,
    "synth.angles": [0, 60, 90, 120, 150],
    "synth.sr": 100.0,
    "synth.duration": 40.0,
    "synth.pga_min": 0.2,
    "synth.pga_max": 1.5,
    "synth.noise_std": 0.0,
    **{f"synth.pier.{f.name}": f.default for f in fields(PierModel)},
    "features.window_s": 1.0,
    "features.stride_s": 0.4,
    "features.n_fft": 512,
    "features.n_fl": 26,
    "features.n_keep": 8,
    "features.log_base": "10",
    "features.max_frames": 500,
    "split.train_frac": 0.8,
    "split.val_frac": 0.1,
    "train.batch_size": 64,
    "train.max_epochs": 60,
    "train.patience": 10,
    "train.min_delta": 0.0,
    "train.lr.mfb": 3e-5,
    "train.lr.mfcc": 3e-5,
    "train.lr.intensity": 1e-6,
    "eval.poly_degree": 3,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _coerce(key, value):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            return [float(v) for v in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot use {value!r}") from None


def resolve_config(path=None, seed=None, overrides=()) -> dict:
    """Defaults <- JSON file (flat dotted keys) <- ``--set`` pairs <- ``--seed``."""
    cfg = dict(DEFAULTS)
    updates = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        updates.update(raw)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            updates[key] = json.loads(text)
        except json.JSONDecodeError:
            updates[key] = text
    if seed is not None:
        updates["seed"] = seed
    unknown = sorted(set(updates) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    for key, value in updates.items():
        cfg[key] = _coerce(key, value)
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    return cfg


def synth_config(cfg: dict) -> SynthConfig:
    pier = PierModel(**{f.name: float(cfg[f"synth.pier.{f.name}"]) for f in fields(PierModel)})
    return SynthConfig(n_gms=cfg["synth.n_gms"], angles=tuple(cfg["synth.angles"]),
                       n_scales=cfg["synth.n_scales"], sr=cfg["synth.sr"],
                       duration=cfg["synth.duration"],
                       pga_range=(cfg["synth.pga_min"], cfg["synth.pga_max"]),
                       noise_std=cfg["synth.noise_std"], pier=pier)


def feature_config(cfg: dict) -> FeatureConfig:
    return FeatureConfig(window_len_s=cfg["features.window_s"], stride_s=cfg["features.stride_s"],
                         n_fft=cfg["features.n_fft"], n_fl=cfg["features.n_fl"],
                         n_keep=cfg["features.n_keep"], log_base=cfg["features.log_base"],
                         max_frames=cfg["features.max_frames"])


def train_config(cfg: dict, kind: str) -> TrainConfig:
    return TrainConfig(feature_kind=kind, batch_size=cfg["train.batch_size"],
                       lr=cfg[f"train.lr.{kind.lower()}"], patience=cfg["train.patience"],
                       max_epochs=cfg["train.max_epochs"], seed=cfg["seed"],
                       min_delta=cfg["train.min_delta"])


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(path, command: str, cfg: dict, **extra) -> None:
    _write_json(path, {"command": command, "version": __version__, "config": cfg, **extra})


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _kinds(arg) -> list[str]:
    return list(FEATURE_KINDS) if arg in (None, "all") else [normalize_kind(arg)]


def _manifest_path(args) -> Path:
    return Path(args.events) if args.events else Path(args.out) / "data" / "manifest.json"


# -- subcommands -------------------------------------------------------------------------

def cmd_synth(args, cfg) -> int:
    scfg = synth_config(cfg)
    manifest_path = _manifest_path(args)
    t0 = time.perf_counter()
    events = build_dataset(scfg, cfg["seed"], workers=worker_count())
    try:
        write_dataset(events, manifest_path.parent, manifest_path,
                      meta={"seed": cfg["seed"], "synth": scfg.to_dict()})
        _sidecar(manifest_path.parent / "config.json", "synth", cfg)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {manifest_path.parent}: {exc}") from exc
    drift = np.array([e.drift_ratio for e in events]) * 100
    print(f"synth: {len(events)} events from {scfg.n_gms} ground motions -> {manifest_path} "
          f"(drift {drift.min():.3f}-{drift.max():.3f}%, {time.perf_counter() - t0:.1f}s)")
    return EXIT_OK


def cmd_extract(args, cfg) -> int:
    manifest = load_manifest(_manifest_path(args))
    fcfg = feature_config(cfg)
    out = Path(args.out) / "features"
    status = EXIT_OK
    for kind in _kinds(args.feature):
        fs, failures = extract_dataset(
            manifest, kind, fcfg, out_dir=out,
            on_error=lambda eid, exc: _log(f"extract: {eid}: {exc}"))
        _sidecar(out / f"config_{kind.lower()}.json", "extract", cfg, feature_kind=kind,
                 manifest=str(manifest.path.resolve()))
        if kind == INTENSITY:
            shape = f"{fs.X.shape[1]}-wide vectors"
        else:
            n_valid = fs.mask.sum(axis=1)
            shape = (f"{fs.X.shape[1]}x{fs.X.shape[2]} tensors, "
                     f"valid frames {n_valid.min()}-{n_valid.max()}")
        print(f"extract {kind}: {len(fs)} events, {shape}, {len(failures)} failed")
        if failures:
            status = EXIT_DATA
    return status


def _split_for(manifest, cfg) -> SplitPlan:
    return split_by_ground_motion(manifest.gm_ids(), cfg["split.train_frac"],
                                  cfg["split.val_frac"], seed=cfg["seed"])


def cmd_train(args, cfg) -> int:
    manifest = load_manifest(_manifest_path(args))
    plan = _split_for(manifest, cfg)
    fcfg = feature_config(cfg)
    for kind in _kinds(args.feature):
        fs = load_features(manifest, kind, Path(args.out) / "features", fcfg)
        tr, va = fs.select_gms(plan.train_gm_ids), fs.select_gms(plan.val_gm_ids)
        tcfg = train_config(cfg, kind)
        mdir = Path(args.out) / "models" / kind.lower()
        mdir.mkdir(parents=True, exist_ok=True)
        _write_json(mdir / "split.json", plan.to_dict())
        _sidecar(mdir / "config.json", "train", cfg, feature_kind=kind)
        meta = {"feature_kind": kind, "seed": cfg["seed"]}
        arch = architecture_for(kind, fs.X.shape[-1])
        t0 = time.perf_counter()
        try:
            params, hist = train(tr, va, tcfg, arch=arch, log=_log)
        except TrainingDivergence as exc:
            if exc.last_good is not None:
                save_checkpoint(mdir / "model.last_good.qnn", exc.last_good, arch, meta)
            raise
        save_checkpoint(mdir / "model.qnn", params, arch,
                        {**meta, "best_epoch": hist.best_epoch})
        with (mdir / "history.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mae", "val_mae"])
            for e in hist.epochs:
                w.writerow([e["epoch"], repr(e["train_mae"]), repr(e["val_mae"])])
        best = hist.val_mae[hist.best_epoch - 1]
        print(f"train {kind}: {len(tr)} train / {len(va)} val events, "
              f"{len(hist.epochs)} epochs, best epoch {hist.best_epoch} "
              f"(val MAE {best * 10:.4f}%), {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    manifest = load_manifest(_manifest_path(args))
    fcfg = feature_config(cfg)
    kinds = _kinds(args.feature)
    if args.checkpoint and len(kinds) != 1:
        raise UsageError("--checkpoint needs an explicit --feature")
    for kind in kinds:
        mdir = Path(args.out) / "models" / kind.lower()
        ckpt = Path(args.checkpoint) if args.checkpoint else mdir / "model.qnn"
        if not ckpt.exists():
            raise DataError(f"no checkpoint at {ckpt}; run train first")
        params, arch, meta = load_checkpoint(ckpt)
        stored = meta.get("feature_kind")
        if stored is None or normalize_kind(stored) != kind:
            raise DataError(f"checkpoint {ckpt} was trained on {stored} features, not {kind}")
        split_path = mdir / "split.json"
        plan = (SplitPlan.from_dict(json.loads(split_path.read_text())) if split_path.exists()
                else _split_for(manifest, cfg))
        fs = load_features(manifest, kind, Path(args.out) / "features", fcfg)
        test = fs.select_gms(plan.test_gm_ids)
        if len(test) == 0:
            raise DataError(f"{kind}: the test split holds no events")
        if test.X.shape[-1] != arch.n_features:
            raise DataError(f"checkpoint expects {arch.n_features} features, data has {test.X.shape[-1]}")
        rep = evaluate(params, arch, test, degree=cfg["eval.poly_degree"])
        edir = Path(args.out) / "eval" / kind.lower()
        _write_json(edir / "eval.json", {
            **rep.to_dict(), "event_ids": rep.event_ids,
            "truth_percent": rep.truth_percent.tolist(), "pred_percent": rep.pred_percent.tolist(),
            "poly_coeffs": rep.poly_coeffs.tolist(), "checkpoint": str(ckpt)})
        _sidecar(edir / "config.json", "evaluate", cfg, feature_kind=kind)
        print(f"evaluate {kind}: {rep.n} test events, MAE {rep.mae_percent:.4f}% drift")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    from .report import build_report

    evaluations = {}
    for kind in FEATURE_KINDS:
        path = Path(args.out) / "eval" / kind.lower() / "eval.json"
        if not path.exists():
            raise DataError(f"missing evaluation for {kind} at {path}; run evaluate first")
        evaluations[kind] = json.loads(path.read_text())
    rdir = Path(args.out) / "report"
    report = build_report(evaluations, rdir, seed=cfg["seed"])
    _sidecar(rdir / "config.json", "report", cfg)
    for row in report["results"]:
        print(f"report {row['feature_kind']:>9}: test MAE {row['test_mae_percent']:.4f}% "
              f"({row['n_test']} events)")
    verdict = "yes" if report["mfb_vs_intensity"]["mfb_le_intensity"] else "no"
    print(f"report: MFB <= intensity baseline: {verdict} -> {rdir / 'report.json'}")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    """All stages in sequence; per-stage wall times go to report/runtime.json."""
    timings = {}
    args.feature = None
    for name, fn in (("synth", cmd_synth), ("extract", cmd_extract), ("train", cmd_train),
                     ("evaluate", cmd_evaluate), ("report", cmd_report)):
        t0 = time.perf_counter()
        code = fn(args, cfg)
        timings[name] = time.perf_counter() - t0
        if code != EXIT_OK:
            return code
    timings["total"] = sum(timings.values())
    _write_json(Path(args.out) / "report" / "runtime.json", timings)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "train": cmd_train,
            "evaluate": cmd_evaluate, "report": cmd_report, "run": cmd_run}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quakecep", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with flat dotted keys (see README)")
    common.add_argument("--seed", type=int, help="root seed (overrides the config file)")
    common.add_argument("--out", default="quakecep_run", help="workspace directory")
    common.add_argument("--events", help="manifest path (default <out>/data/manifest.json)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    kinds = ["mfb", "mfcc", "intensity", "all"]
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="simulate the synthetic event dataset")
    for name, text in (("extract", "compute feature files"), ("train", "fit one model per kind"),
                       ("evaluate", "score checkpoints on the test split")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--feature", type=str.lower, choices=kinds, default="all")
        if name == "evaluate":
            p.add_argument("--checkpoint", help="checkpoint path (default <out>/models/<kind>/model.qnn)")
    sub.add_parser("report", parents=[common], help="write report.json and scatter figures")
    p = sub.add_parser("run", parents=[common], help="synth, extract, train, evaluate and report")
    p.set_defaults(checkpoint=None)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args.config, args.seed, args.set)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
