"""Command-line pipeline: ingest -> train-ae -> archetypes -> train-hybrid -> evaluate -> report.

Every command reads one INI-style config (``--config``), applies
``--set section.key=value`` overrides and works inside one output
directory.  Artifacts are content-checksummed in ``manifest.json``; wall
clock timings go to ``timings.json`` so reruns leave the manifest and all
artifacts byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._npz import save_npz
from .archetypes import PatternCollisionError, PatternSet, centroid_checksum, extract_archetypes
from .dataset import EmptyDatasetError, RatingsMatrix, RatingsParseError, SplitSet, build_matrix, read_ratings, split
from .hybrid import HybridConfig, HybridModel, HybridTrainingError, default_noise_spec, evaluate, labels_for, train_hybrid
from .metrics import MetricsReport
from .nn import Autoencoder, AutoencoderConfig, TrainingError, load_network, save_network, train_autoencoder

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ORDER = 3
EXIT_REPORT = 4

BACKENDS = ("ideal", "noisy")

DEFAULTS = {
    "data": {"path": "data/ml-1m/ratings.dat", "min_ratings": 20, "ratio": 0.33, "split_seed": 0},
    "autoencoder": {
        "latent_dim": 8, "epochs": 35, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999,
        "batch_size": 64, "init_seed": 0, "masked": False,
    },
    "archetypes": {"k": 4, "kmeans_seed": 0, "max_iter": 300, "tol": 1e-6},
    "hybrid": {
        "epochs": 35, "lr": 0.01, "beta1": 0.9, "beta2": 0.999, "batch_size": 64,
        "init_seed": 0, "target_seed": 1, "eval_seed": 2, "fine_tune_encoder": False, "encoder_lr": 1e-4,
    },
    "noise": {"seed": 0},
    "evaluate": {"model": "same"},
    "run": {"backend": "ideal", "out": "runs/default"},
}

# stage -> files it writes (backend-specific names are filled in at run time)
STAGE_ARTIFACTS = {
    "ingest": ["matrix.npz", "splits.json"],
    "train-ae": ["autoencoder.npz", "ae_history.csv"],
    "archetypes": ["archetypes.json", "archetypes.npz", "labels.csv"],
}


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- config ------------------------------------------------------------------


def _coerce(default, raw: str, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise CommandError(EXIT_INPUT, f"{where}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def load_config(path=None, overrides=(), backend=None, out=None) -> dict:
    """Defaults <- config file <- ``--set`` overrides <- explicit flags."""
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    if path is not None:
        if not Path(path).is_file():
            raise CommandError(EXIT_INPUT, f"config file {path} not found")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise CommandError(EXIT_INPUT, f"{path}: {exc}") from None
        for sec in parser.sections():
            for key, raw in parser.items(sec):
                _set(cfg, sec, key, raw, f"{path} [{sec}] {key}")
    for item in overrides:
        name, sep, raw = item.partition("=")
        sec, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise CommandError(EXIT_INPUT, f"--set expects section.key=value, got {item!r}")
        _set(cfg, sec, key, raw, f"--set {name}")
    if backend is not None:
        cfg["run"]["backend"] = backend
    if out is not None:
        cfg["run"]["out"] = str(out)
    if cfg["run"]["backend"] not in BACKENDS:
        raise CommandError(EXIT_INPUT, f"backend must be one of {BACKENDS}")
    if cfg["evaluate"]["model"] not in ("same",) + BACKENDS:
        raise CommandError(EXIT_INPUT, "evaluate.model must be same, ideal or noisy")
    return cfg


def _set(cfg, sec, key, raw, where):
    if sec not in DEFAULTS or key not in DEFAULTS[sec]:
        raise CommandError(EXIT_INPUT, f"{where}: unknown setting {sec}.{key}")
    cfg[sec][key] = _coerce(DEFAULTS[sec][key], raw, where)


# -- artifact directory ------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDir:
    """Output directory with a lock, a content manifest and a timings file."""

    def __init__(self, root):
        self.root = Path(root)
        self.lock = self.root / ".lock"
        self.inputs = {}

    def __enter__(self):
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CommandError(EXIT_INPUT, f"{self.lock} exists: another command is using this directory") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)

    def path(self, name) -> Path:
        return self.root / name

    def _read(self, name) -> dict:
        p = self.path(name)
        return json.loads(p.read_text()) if p.exists() else {}

    def _write(self, name, data):
        p = self.path(name)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, p)

    @property
    def manifest(self) -> dict:
        return self._read("manifest.json")

    def record(self, stage: str, cfg: dict, files, seconds: float, extra: dict | None = None):
        m = self.manifest
        m["version"] = __version__
        m.setdefault("stages", {})[stage] = {
            "config": cfg,
            "artifacts": {f: sha256_file(self.path(f)) for f in files},
            "inputs": dict(sorted(self.inputs.items())),
            **(extra or {}),
        }
        self._write("manifest.json", m)
        t = self._read("timings.json")
        t[stage] = round(seconds, 3)
        self._write("timings.json", t)

    def require(self, stage: str):
        """Upstream stage must have run and its artifacts must be unchanged."""
        entry = self.manifest.get("stages", {}).get(stage)
        if entry is None:
            raise CommandError(EXIT_ORDER, f"missing artifacts from '{stage}'; run `qhamrec {stage}` first")
        for f, digest in entry["artifacts"].items():
            p = self.path(f)
            if not p.exists():
                raise CommandError(EXIT_ORDER, f"{p} is missing; run `qhamrec {stage}` first")
            if sha256_file(p) != digest:
                raise CommandError(EXIT_ORDER, f"{p} changed since it was written; rerun `qhamrec {stage}`")
            self.inputs[f] = digest
        for f, digest in entry.get("inputs", {}).items():
            p = self.path(f)
            if not p.exists() or sha256_file(p) != digest:
                raise CommandError(EXIT_ORDER, f"'{stage}' is stale: {f} was rewritten; rerun `qhamrec {stage}`")
        return entry


# -- stages ------------------------------------------------------------------


def _load_splits(run: RunDir):
    matrix = RatingsMatrix.load(run.path("matrix.npz"))
    manifest = json.loads(run.path("splits.json").read_text())
    return matrix, SplitSet.from_manifest(matrix, manifest)


def _load_labels(run: RunDir) -> dict:
    with open(run.path("labels.csv")) as fh:
        return {int(r["user_id"]): int(r["cluster"]) for r in csv.DictReader(fh)}


def cmd_ingest(cfg, run: RunDir) -> list:
    d = cfg["data"]
    run.inputs[str(Path(d["path"]).resolve())] = sha256_file(d["path"])
    records = read_ratings(d["path"])
    matrix = build_matrix(records, d["min_ratings"])
    splits = split(matrix, d["ratio"], d["split_seed"])
    matrix.save(run.path("matrix.npz"))
    splits.save_manifest(run.path("splits.json"))
    print(f"users={matrix.num_users}, movies={matrix.num_movies}, "
          f"train={splits.train.num_users}, validation={splits.validation.num_users}, test={splits.test.num_users}")
    return STAGE_ARTIFACTS["ingest"], {"summary": {"users": matrix.num_users, "movies": matrix.num_movies}}


def cmd_train_ae(cfg, run: RunDir) -> list:
    run.require("ingest")
    _, splits = _load_splits(run)
    a = cfg["autoencoder"]
    config = AutoencoderConfig(
        latent_dim=a["latent_dim"], epochs=a["epochs"], lr=a["lr"], betas=(a["beta1"], a["beta2"]),
        batch_size=a["batch_size"], seed=a["init_seed"], masked=a["masked"],
    )
    try:
        model, history = train_autoencoder(splits, config=config)
    except (TrainingError, FloatingPointError) as exc:
        raise CommandError(EXIT_INPUT, f"autoencoder training failed: {exc}") from None
    save_network(run.path("autoencoder.npz"), model)
    history.to_csv(run.path("ae_history.csv"))
    print(f"autoencoder test_mse={history.test_loss:.6f} after {config.epochs} epochs")
    return STAGE_ARTIFACTS["train-ae"], {"test_mse": history.test_loss}


def cmd_archetypes(cfg, run: RunDir) -> list:
    run.require("ingest")
    run.require("train-ae")
    matrix, _ = _load_splits(run)
    ae = load_network(run.path("autoencoder.npz"), Autoencoder)
    c = cfg["archetypes"]
    if c["k"] == 1:
        print("warning: k=1 makes the classification single-class and degenerate", file=sys.stderr)
    try:
        arch = extract_archetypes(matrix, ae.encoder, k=c["k"], seed=c["kmeans_seed"],
                                  max_iter=c["max_iter"], tol=c["tol"])
    except PatternCollisionError as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from None
    except ValueError as exc:
        raise CommandError(EXIT_INPUT, f"archetypes: {exc}") from None
    info = {
        "k": c["k"],
        "n": arch.patterns.n,
        "seed": c["kmeans_seed"],
        "patterns": arch.patterns.array.astype(int).tolist(),
        "centroid_checksums": [centroid_checksum(x) for x in arch.centroids],
        "inertia": arch.clusters.inertia,
        "iterations": arch.clusters.n_iter,
    }
    run.path("archetypes.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    save_npz(run.path("archetypes.npz"), patterns=arch.patterns.array, centroids=arch.centroids)
    with open(run.path("labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "cluster"])
        for u, lab in zip(matrix.user_ids.tolist(), arch.labels.tolist()):
            w.writerow([u, lab])
    sizes = np.bincount(arch.labels, minlength=c["k"]).tolist()
    print(f"archetypes k={c['k']} n={arch.patterns.n} cluster_sizes={sizes}")
    for row in info["patterns"]:
        print("  " + " ".join(f"{b:+d}" for b in row))
    return STAGE_ARTIFACTS["archetypes"], {}


def _noise_for(cfg, n):
    if cfg["run"]["backend"] == "ideal":
        return None
    return default_noise_spec(n, cfg["noise"]["seed"])


def _noise_extra(noise):
    return {"noise": noise.to_dict()} if noise is not None else {}


def cmd_train_hybrid(cfg, run: RunDir) -> list:
    for stage in ("ingest", "train-ae", "archetypes"):
        run.require(stage)
    _, splits = _load_splits(run)
    ae = load_network(run.path("autoencoder.npz"), Autoencoder)
    with np.load(run.path("archetypes.npz")) as f:
        patterns = PatternSet.from_array(f["patterns"])
    labels = _load_labels(run)
    h = cfg["hybrid"]
    backend = cfg["run"]["backend"]
    model = HybridModel.build(ae.encoder, patterns, seed=h["init_seed"])
    noise = _noise_for(cfg, model.n)
    config = HybridConfig(
        epochs=h["epochs"], lr=h["lr"], betas=(h["beta1"], h["beta2"]), batch_size=h["batch_size"],
        seed=h["init_seed"], target_seed=h["target_seed"], eval_seed=h["eval_seed"],
        fine_tune_encoder=h["fine_tune_encoder"], encoder_lr=h["encoder_lr"],
    )
    try:
        model, history = train_hybrid(model, splits, labels, noise=noise, config=config)
    except HybridTrainingError as exc:
        exc.last_good.save(run.path(f"hybrid_{backend}_last_good.npz"))
        raise CommandError(EXIT_INPUT, f"hybrid training diverged: {exc}; last good model saved") from None
    seeds = {k: h[k] for k in ("init_seed", "target_seed", "eval_seed")}
    seeds["noise_seed"] = cfg["noise"]["seed"]
    model.save(run.path(f"hybrid_{backend}.npz"), seeds=seeds, noise=noise)
    history.to_csv(run.path(f"hybrid_history_{backend}.csv"))
    last = history.extra["accuracy"][-1]
    print(f"hybrid[{backend}] epochs={config.epochs} final_loss={history.train_loss[-1]:.6f} val_accuracy={last:.4f}")
    return [f"hybrid_{backend}.npz", f"hybrid_history_{backend}.csv"], _noise_extra(noise)


def cmd_evaluate(cfg, run: RunDir) -> list:
    backend = cfg["run"]["backend"]
    source = cfg["evaluate"]["model"]
    source = backend if source == "same" else source
    for stage in ("ingest", "archetypes"):
        run.require(stage)
    if f"train-hybrid:{source}" not in run.manifest.get("stages", {}):
        raise CommandError(EXIT_ORDER, f"no {source} hybrid model; run `qhamrec train-hybrid --backend {source}` first")
    run.require(f"train-hybrid:{source}")
    _, splits = _load_splits(run)
    labels = _load_labels(run)
    model, meta = HybridModel.load(run.path(f"hybrid_{source}.npz"))
    noise = _noise_for(cfg, model.n)
    report = evaluate(model, splits.test.values, labels_for(splits.test, labels), noise,
                      seed=cfg["hybrid"]["eval_seed"], environment=backend)
    report.to_json(run.path(f"metrics_{backend}.json"))
    report.to_csv(run.path(f"metrics_{backend}.csv"))
    print(f"{backend} (model trained {source}): mse={report.mse:.4f} roc_auc={report.roc_auc:.4f} "
          f"f1={report.f1:.4f} accuracy={report.accuracy:.4f}")
    return [f"metrics_{backend}.json", f"metrics_{backend}.csv"], {"model": source, **_noise_extra(noise)}


def cmd_report(cfg, run: RunDir) -> list:
    reports = []
    for backend in BACKENDS:
        p = run.path(f"metrics_{backend}.json")
        if p.exists():
            try:
                reports.append(MetricsReport.from_json(p))
            except (json.JSONDecodeError, TypeError) as exc:
                raise CommandError(EXIT_REPORT, f"cannot parse {p}: {exc}") from None
    if not reports:
        raise CommandError(EXIT_REPORT, f"no metrics_*.json in {run.root}; run `qhamrec evaluate` first")
    fields = ["mse", "roc_auc", "f1", "accuracy"]
    with open(run.path("report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["environment"] + fields)
        for r in reports:
            w.writerow([r.environment] + [f"{getattr(r, f):.4f}" for f in fields])
    lines = [f"{'Environment':<12}" + "".join(f"{f.upper():>10}" for f in fields)]
    lines += [f"{r.environment.capitalize():<12}" + "".join(f"{getattr(r, f):>10.4f}" for f in fields)
              for r in reports]
    text = "\n".join(lines) + "\n"
    run.path("report.txt").write_text(text)
    print(text, end="")
    return ["report.csv", "report.txt"], {}


COMMANDS = {
    "ingest": cmd_ingest,
    "train-ae": cmd_train_ae,
    "archetypes": cmd_archetypes,
    "train-hybrid": cmd_train_hybrid,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _stage_key(command, cfg):
    # backend-specific stages keep separate manifest entries
    if command in ("train-hybrid", "evaluate"):
        return f"{command}:{cfg['run']['backend']}"
    return command


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qhamrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with [data], [autoencoder], [archetypes], [hybrid], [noise] sections")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", dest="overrides")
        p.add_argument("--backend", choices=BACKENDS)
        p.add_argument("--out", help="artifact directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.backend, args.out)
        if args.command == "ingest" and not Path(cfg["data"]["path"]).is_file():
            raise CommandError(EXIT_INPUT, f"ratings file {cfg['data']['path']} not found")
        with RunDir(cfg["run"]["out"]) as run:
            start = time.perf_counter()
            try:
                files, extra = COMMANDS[args.command](cfg, run)
            except (RatingsParseError, EmptyDatasetError) as exc:
                raise CommandError(EXIT_INPUT, f"{cfg['data']['path']}: {exc}") from None
            if args.command != "report":
                run.record(_stage_key(args.command, cfg), cfg, files, time.perf_counter() - start, extra)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
