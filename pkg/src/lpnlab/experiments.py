"""Declarative experiment runner: a JSON config picks one experiment kind,
the runner executes its trial/sweep cells (optionally in parallel), writes
CSVs and images atomically, and finishes with a manifest describing every
artifact and summary statistic.

Re-running a config with the same master seed reproduces every output file
byte for byte, at any worker count: each cell derives its own seeds from
(master seed, cell key) and owns its output files, and aggregation happens
in sorted cell order after all cells finish.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import render
from .metrics import representation_snapshot, save_snapshot_csv, silhouette
from .models import NormConfig, build_poc, build_probe, save_checkpoint
from .synthetic import bayes_deviation, bayes_predict, poc_spec, sample
from .training import TrainConfig, train, write_run_csv

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Manifest",
    "parse_config",
    "run_experiment",
    "derive_seed",
]

KINDS = (
    "boundary",
    "bayes-dim",
    "p-sweep",
    "alpha-sweep",
    "probe-silhouette",
    "projection",
)

NORM_SETTINGS = ("none", "1", "2", "inf", "learnable")

# full schema with defaults; parsing is strict, unknown keys are fatal
_DEFAULTS = {
    "kind": None,  # required
    "trials": 5,
    "seed": 42,
    "data": {"n_per_class": 250, "seed": 7, "val_seed": 8},
    "model": {"d": 2, "dims": [2, 4, 8, 16]},
    "train": {
        "epochs": 500,
        "lr": 1e-3,
        "optimizer": "adam",
        "batch_size": 32,
        "shuffle": True,
        "eval_epochs": [100, 250, 500],
    },
    "norm": {"enabled": True, "p": "2", "alpha": 1.0},
    "bayes": {"samples": 100000, "seed": 5, "every": 0},
    "grid": {"bounds": [-5.0, 5.0, -5.0, 5.0], "resolution": 256},
    "probe": {"hiddens": [0, 128, 512, 2048, 4096]},
    "sweep": {
        "settings": list(NORM_SETTINGS),
        "p_values": ["1", "2", "inf", "learnable"],
        "alpha_values": [1.0, "learnable"],
        "alpha_p_values": ["2", "learnable"],
        "projection_p_values": ["1", "2", "inf"],
    },
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending key."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully defaulted, validated experiment description."""

    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    def digest(self) -> str:
        payload = json.dumps(self.raw, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        merged = json.loads(json.dumps(self.raw))
        merged["seed"] = int(seed)
        return ExperimentConfig(merged)


def _merge_strict(defaults, supplied, path=""):
    if not isinstance(supplied, dict):
        raise ConfigError(f"section {path or '<root>'} must be an object")
    merged = {}
    for key, default in defaults.items():
        full = f"{path}.{key}" if path else key
        if key in supplied:
            value = supplied[key]
            if isinstance(default, dict):
                merged[key] = _merge_strict(default, value, full)
            else:
                merged[key] = value
        else:
            merged[key] = json.loads(json.dumps(default))
    for key in supplied:
        if key not in defaults:
            full = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key {full}")
    return merged


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _validate(cfg: dict) -> None:
    _require(cfg["kind"] in KINDS,
             f"kind must be one of {KINDS}, got {cfg['kind']!r}")
    _require(isinstance(cfg["trials"], int) and cfg["trials"] >= 1,
             "trials must be an integer >= 1")
    _require(isinstance(cfg["seed"], int), "seed must be an integer")
    data = cfg["data"]
    _require(isinstance(data["n_per_class"], int) and data["n_per_class"] > 0,
             "data.n_per_class must be a positive integer")
    train_cfg = cfg["train"]
    _require(isinstance(train_cfg["epochs"], int) and train_cfg["epochs"] >= 1,
             "train.epochs must be an integer >= 1")
    _require(train_cfg["lr"] > 0, "train.lr must be positive")
    _require(train_cfg["optimizer"] in ("adam", "sgd"),
             "train.optimizer must be adam or sgd")
    batch = train_cfg["batch_size"]
    _require(batch is None or (isinstance(batch, int) and batch >= 1),
             "train.batch_size must be null (full batch) or an integer >= 1")
    for epoch in train_cfg["eval_epochs"]:
        _require(isinstance(epoch, int) and 1 <= epoch <= train_cfg["epochs"],
                 f"train.eval_epochs entry {epoch} outside [1, epochs]")
    _require(isinstance(cfg["norm"]["enabled"], bool),
             "norm.enabled must be a boolean")
    _validate_norm_value("norm.p", cfg["norm"]["p"], allow_inf=True)
    _validate_norm_value("norm.alpha", cfg["norm"]["alpha"], allow_inf=False)
    bayes = cfg["bayes"]
    _require(isinstance(bayes["samples"], int) and bayes["samples"] >= 1000,
             "bayes.samples must be an integer >= 1000")
    _require(isinstance(bayes["every"], int) and bayes["every"] >= 0,
             "bayes.every must be a nonnegative integer (0 = checkpoints only)")
    grid = cfg["grid"]
    _require(len(grid["bounds"]) == 4, "grid.bounds must be [xmin,xmax,ymin,ymax]")
    _require(isinstance(grid["resolution"], int) and grid["resolution"] >= 2,
             "grid.resolution must be an integer >= 2")
    _require(cfg["model"]["d"] >= 1, "model.d must be >= 1")
    for d in cfg["model"]["dims"]:
        _require(isinstance(d, int) and d >= 1, "model.dims must be positive integers")
    for h in cfg["probe"]["hiddens"]:
        _require(isinstance(h, int) and h >= 0,
                 "probe.hiddens must be nonnegative integers")
    sweep = cfg["sweep"]
    for setting in sweep["settings"]:
        _require(setting in NORM_SETTINGS,
                 f"sweep.settings entry {setting!r} not one of {NORM_SETTINGS}")
    for key in ("p_values", "alpha_p_values", "projection_p_values"):
        for value in sweep[key]:
            _validate_norm_value(f"sweep.{key}", value, allow_inf=True)
    for value in sweep["alpha_values"]:
        _validate_norm_value("sweep.alpha_values", value, allow_inf=False)


def _validate_norm_value(key, value, allow_inf):
    if value == "learnable":
        return
    if allow_inf and value == "inf":
        return
    if isinstance(value, (int, float)) and not isinstance(value, bool) \
            and math.isfinite(value) and value > 0:
        return
    inf_part = '"inf", ' if allow_inf else ""
    raise ConfigError(f'{key} must be a positive number, {inf_part}'
                      f'or "learnable"; got {value!r}')


def parse_config(path) -> ExperimentConfig:
    """Load, default-fill, and strictly validate an experiment config."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            supplied = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config syntax error at {path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(supplied, dict) or "kind" not in supplied:
        raise ConfigError("config must be an object with a 'kind' key")
    merged = _merge_strict(_DEFAULTS, supplied)
    _validate(merged)
    return ExperimentConfig(merged)


def derive_seed(master: int, *parts) -> int:
    """Stable per-cell seed from the master seed and a cell key."""
    payload = ":".join([str(master), *map(str, parts)])
    digest = hashlib.sha256(payload.encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class Manifest:
    config: dict
    config_hash: str
    trial_seeds: list[int]
    files: list[str]
    summary: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "trial_seeds": self.trial_seeds,
            "files": self.files,
            "summary": self.summary,
        }


@contextmanager
def _atomic(path):
    """Write to a sibling temp file, fsync-free rename on success."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _write_csv(path, header, rows):
    with _atomic(path) as tmp:
        with open(tmp, "w", encoding="ascii", newline="\n") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(_csv_field(v) for v in row) + "\n")


def _csv_field(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _norm_for_setting(setting: str, alpha) -> NormConfig:
    if setting == "none":
        return NormConfig(enabled=False)
    return NormConfig(enabled=True, p=setting, alpha=alpha)


def _setting_label(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _mean_ci(values) -> dict:
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if len(values) > 1:
        ci = float(1.96 * values.std(ddof=1) / math.sqrt(len(values)))
    else:
        ci = 0.0
    return {"mean": mean, "ci95": ci, "trials": int(len(values))}


def _train_config(cfg: ExperimentConfig, trial_seed: int,
                  eval_epochs=None, epochs=None) -> TrainConfig:
    section = cfg["train"]
    return TrainConfig(
        epochs=epochs if epochs is not None else section["epochs"],
        lr=float(section["lr"]),
        optimizer=section["optimizer"],
        batch_size=section["batch_size"],
        seed=trial_seed,
        eval_epochs=tuple(eval_epochs if eval_epochs is not None
                          else section["eval_epochs"]),
        shuffle=bool(section["shuffle"]),
    )


def _deviation_fn(cfg: ExperimentConfig, spec):
    section = cfg["bayes"]
    return lambda clf: bayes_deviation(
        spec, clf.predict, n_samples=section["samples"],
        seed=section["seed"])


def _run_cells(cells, jobs: int):
    """Execute cell callables, possibly in parallel; results come back in
    cell order regardless of completion order."""
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(cell) for cell in cells]
            return [f.result() for f in futures]
    return [cell() for cell in cells]


# --- experiment kinds ------------------------------------------------------


def _boundary_cell(cfg, out_dir, spec, data, val_data, bayes_grid,
                   trial, setting):
    trial_seed = derive_seed(cfg["seed"], "trial", trial)
    alpha = cfg["norm"]["alpha"]
    classifier = build_poc(cfg["model"]["d"],
                           _norm_for_setting(setting, alpha), trial_seed)
    bounds = tuple(cfg["grid"]["bounds"])
    resolution = cfg["grid"]["resolution"]
    deviation = _deviation_fn(cfg, spec)

    files = []
    disagreement_at = {}

    def on_checkpoint(epoch, clf):
        grid = render.decision_grid(clf, bounds, resolution)
        name = f"grid_{setting}_trial{trial}_epoch{epoch}.pgm"
        with _atomic(os.path.join(out_dir, name)) as tmp:
            render.write_pgm(grid, tmp, num_classes=clf.spec.num_classes)
        files.append(name)
        disagreement_at[epoch] = float(np.mean(grid != bayes_grid))

    record = train(classifier, data, _train_config(cfg, trial_seed),
                   val_data=val_data, deviation_fn=deviation,
                   on_checkpoint=on_checkpoint)
    rows = [
        (setting, trial, epoch, disagreement_at[epoch],
         probe.bayes_deviation, probe.bayes_std_error)
        for epoch, probe in sorted(record.checkpoints.items())
    ]

    checkpoint_name = f"model_{setting}_trial{trial}.lpn"
    with _atomic(os.path.join(out_dir, checkpoint_name)) as tmp:
        save_checkpoint(classifier, tmp)
    files.append(checkpoint_name)
    return rows, files, record


def _run_boundary(cfg: ExperimentConfig, out_dir: str, jobs: int):
    spec = poc_spec()
    data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["seed"])
    val_data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["val_seed"])
    bayes_grid = render.decision_grid(
        partial(bayes_predict, spec), tuple(cfg["grid"]["bounds"]),
        cfg["grid"]["resolution"])

    settings = cfg["sweep"]["settings"]
    cells = [
        partial(_boundary_cell, cfg, out_dir, spec, data, val_data,
                bayes_grid, trial, setting)
        for trial in range(cfg["trials"])
        for setting in settings
    ]
    results = _run_cells(cells, jobs)

    rows, files = [], []
    final_dev = {s: [] for s in settings}
    final_dis = {s: [] for s in settings}
    for (cell_rows, cell_files, _), cell in zip(results, cells):
        rows.extend(cell_rows)
        files.extend(cell_files)
        setting = cell_rows[-1][0]
        final_dev[setting].append(cell_rows[-1][4])
        final_dis[setting].append(cell_rows[-1][3])

    _write_csv(os.path.join(out_dir, "boundary.csv"),
               "setting,trial,epoch,grid_disagreement,bayes_dev,bayes_se",
               rows)
    files.append("boundary.csv")
    summary = {}
    for setting in settings:
        summary[f"final_bayes_dev[{setting}]"] = _mean_ci(final_dev[setting])
        summary[f"final_grid_disagreement[{setting}]"] = _mean_ci(final_dis[setting])
    return files, summary


def _bayes_dim_cell(cfg, spec, data, val_data, trial, d, setting):
    trial_seed = derive_seed(cfg["seed"], "trial", trial)
    alpha = cfg["norm"]["alpha"]
    classifier = build_poc(d, _norm_for_setting(setting, alpha), trial_seed)
    epochs = cfg["train"]["epochs"]
    every = cfg["bayes"]["every"] or 0
    if every > 0:
        eval_epochs = sorted(set(range(every, epochs + 1, every)) | {epochs})
    else:
        eval_epochs = list(cfg["train"]["eval_epochs"])
    record = train(classifier, data, _train_config(cfg, trial_seed,
                                                   eval_epochs=eval_epochs),
                   val_data=val_data, deviation_fn=_deviation_fn(cfg, spec))
    rows = [
        (d, setting, trial, epoch, probe.bayes_deviation, probe.bayes_std_error)
        for epoch, probe in sorted(record.checkpoints.items())
    ]
    return rows, [], record


def _run_bayes_dim(cfg: ExperimentConfig, out_dir: str, jobs: int):
    spec = poc_spec()
    data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["seed"])
    val_data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["val_seed"])
    settings = cfg["sweep"]["settings"]
    dims = cfg["model"]["dims"]
    cells = [
        partial(_bayes_dim_cell, cfg, spec, data, val_data, trial, d, setting)
        for trial in range(cfg["trials"])
        for d in dims
        for setting in settings
    ]
    results = _run_cells(cells, jobs)

    rows, files = [], []
    final = {}
    for cell_rows, _, _ in results:
        rows.extend(cell_rows)
        d, setting = cell_rows[-1][0], cell_rows[-1][1]
        final.setdefault((d, setting), []).append(cell_rows[-1][4])
    _write_csv(os.path.join(out_dir, "bayes_dim.csv"),
               "d,setting,trial,epoch,bayes_dev,bayes_se", rows)
    files.append("bayes_dim.csv")
    summary = {
        f"final_bayes_dev[d={d},{setting}]": _mean_ci(values)
        for (d, setting), values in sorted(final.items())
    }
    return files, summary


def _sweep_cell(cfg, spec, data, val_data, trial, label, norm):
    trial_seed = derive_seed(cfg["seed"], "trial", trial)
    classifier = build_poc(cfg["model"]["d"], norm, trial_seed)
    epochs = cfg["train"]["epochs"]
    eval_epochs = sorted(set(cfg["train"]["eval_epochs"]) | {epochs})
    record = train(classifier, data, _train_config(cfg, trial_seed,
                                                   eval_epochs=eval_epochs),
                   val_data=val_data, deviation_fn=_deviation_fn(cfg, spec))
    return record, label


def _run_value_sweep(cfg: ExperimentConfig, out_dir: str, jobs: int,
                     combos: list[tuple[str, NormConfig]]):
    spec = poc_spec()
    data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["seed"])
    val_data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["val_seed"])
    cells = [
        partial(_sweep_cell, cfg, spec, data, val_data, trial, label, norm)
        for trial in range(cfg["trials"])
        for label, norm in combos
    ]
    results = _run_cells(cells, jobs)

    files = []
    final_acc, final_dev = {}, {}
    index = 0
    for trial in range(cfg["trials"]):
        for label, _ in combos:
            record, _ = results[index]
            index += 1
            name = f"run_{label}_trial{trial}.csv"
            with _atomic(os.path.join(out_dir, name)) as tmp:
                write_run_csv(record, tmp)
            files.append(name)
            final_acc.setdefault(label, []).append(record.val_acc[-1])
            last_probe = record.checkpoints[max(record.checkpoints)]
            if last_probe.bayes_deviation is not None:
                final_dev.setdefault(label, []).append(
                    last_probe.bayes_deviation)
    summary = {}
    for label, values in final_acc.items():
        summary[f"final_val_acc[{label}]"] = _mean_ci(values)
    for label, values in final_dev.items():
        summary[f"final_bayes_dev[{label}]"] = _mean_ci(values)
    return files, summary


def _run_p_sweep(cfg, out_dir, jobs):
    alpha = cfg["norm"]["alpha"]
    combos = [
        (f"p{_setting_label(p)}", NormConfig(enabled=True, p=p, alpha=alpha))
        for p in cfg["sweep"]["p_values"]
    ]
    return _run_value_sweep(cfg, out_dir, jobs, combos)


def _run_alpha_sweep(cfg, out_dir, jobs):
    combos = [
        (f"p{_setting_label(p)}_a{_setting_label(alpha)}",
         NormConfig(enabled=True, p=p, alpha=alpha))
        for p in cfg["sweep"]["alpha_p_values"]
        for alpha in cfg["sweep"]["alpha_values"]
    ]
    return _run_value_sweep(cfg, out_dir, jobs, combos)


def _probe_cell(cfg, spec, data, trial, hidden):
    trial_seed = derive_seed(cfg["seed"], "trial", trial)
    norm = NormConfig(enabled=True, p=cfg["norm"]["p"],
                      alpha=cfg["norm"]["alpha"])
    classifier = build_probe(hidden, encoder_dim=spec.dim, norm=norm,
                             seed=trial_seed)
    record = train(classifier, data, _train_config(cfg, trial_seed,
                                                   eval_epochs=()))
    raw, normalized, labels = representation_snapshot(classifier, data)
    sil_norm = silhouette(normalized, labels).overall
    sil_raw = silhouette(raw, labels).overall
    return (hidden, trial, sil_norm, sil_raw,
            record.train_acc[-1]), [], record


def _run_probe_silhouette(cfg: ExperimentConfig, out_dir: str, jobs: int):
    spec = poc_spec()
    data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["seed"])
    hiddens = cfg["probe"]["hiddens"]
    cells = [
        partial(_probe_cell, cfg, spec, data, trial, hidden)
        for trial in range(cfg["trials"])
        for hidden in hiddens
    ]
    results = _run_cells(cells, jobs)

    rows = [r for r, _, _ in results]
    _write_csv(os.path.join(out_dir, "probe_silhouette.csv"),
               "hidden,trial,silhouette_norm,silhouette_raw,train_acc", rows)
    files = ["probe_silhouette.csv"]
    summary = {}
    for hidden in hiddens:
        values = [r[2] for r in rows if r[0] == hidden]
        summary[f"silhouette_norm[hidden={hidden}]"] = _mean_ci(values)
    return files, summary


def _projection_cell(cfg, out_dir, spec, data, trial, p):
    trial_seed = derive_seed(cfg["seed"], "trial", trial)
    label = _setting_label(p)
    norm = NormConfig(enabled=True, p=p, alpha=cfg["norm"]["alpha"])
    classifier = build_poc(cfg["model"]["d"], norm, trial_seed)
    train(classifier, data, _train_config(cfg, trial_seed, eval_epochs=()))

    raw, normalized, labels = representation_snapshot(classifier, data)
    files = []
    for kind, block in (("raw", raw), ("norm", normalized)):
        name = f"proj_p{label}_trial{trial}_{kind}.ppm"
        with _atomic(os.path.join(out_dir, name)) as tmp:
            render.write_scatter_ppm(block, labels, tmp)
        files.append(name)
    snapshot_name = f"proj_p{label}_trial{trial}_points.csv"
    with _atomic(os.path.join(out_dir, snapshot_name)) as tmp:
        save_snapshot_csv(raw, normalized, labels, tmp)
    files.append(snapshot_name)

    checkpoint_name = f"model_p{label}_trial{trial}.lpn"
    with _atomic(os.path.join(out_dir, checkpoint_name)) as tmp:
        save_checkpoint(classifier, tmp)
    files.append(checkpoint_name)

    mean_radius = float(np.linalg.norm(normalized, axis=1).mean())
    return (label, trial, mean_radius), files, None


def _run_projection(cfg: ExperimentConfig, out_dir: str, jobs: int):
    spec = poc_spec()
    data = sample(spec, cfg["data"]["n_per_class"], cfg["data"]["seed"])
    cells = [
        partial(_projection_cell, cfg, out_dir, spec, data, trial, p)
        for trial in range(cfg["trials"])
        for p in cfg["sweep"]["projection_p_values"]
    ]
    results = _run_cells(cells, jobs)
    rows, files = [], []
    radius = {}
    for row, cell_files, _ in results:
        rows.append(row)
        files.extend(cell_files)
        radius.setdefault(row[0], []).append(row[2])
    _write_csv(os.path.join(out_dir, "projection.csv"),
               "p,trial,mean_l2_radius", rows)
    files.append("projection.csv")
    summary = {
        f"mean_l2_radius[p={label}]": _mean_ci(values)
        for label, values in sorted(radius.items())
    }
    return files, summary


_RUNNERS = {
    "boundary": _run_boundary,
    "bayes-dim": _run_bayes_dim,
    "p-sweep": _run_p_sweep,
    "alpha-sweep": _run_alpha_sweep,
    "probe-silhouette": _run_probe_silhouette,
    "projection": _run_projection,
}


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> Manifest:
    """Execute the configured experiment into out_dir; returns the manifest
    (also written there, last, as manifest.json)."""
    out_dir = os.path.abspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    files, summary = _RUNNERS[cfg.kind](cfg, out_dir, max(1, jobs))
    manifest = Manifest(
        config=cfg.raw,
        config_hash=cfg.digest(),
        trial_seeds=[derive_seed(cfg["seed"], "trial", t)
                     for t in range(cfg["trials"])],
        files=sorted(files),
        summary=summary,
    )
    with _atomic(os.path.join(out_dir, "manifest.json")) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return manifest
