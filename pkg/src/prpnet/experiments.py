"""Experiment registry, two-stage runner, result files and reports."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import data as data_mod
from .data import FULL_BATCH, Dataset
from .metrics import bes, chance_baseline
from .models import ModelKind, Sequential, build_architecture, load_checkpoint, save_checkpoint
from .projections import InitScheme
from .training import Loss, TrainConfig, aggregate, evaluate, lr_range_test, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SYNTHETIC_GAMMA = 0.9999
DEFAULT_GAMMA = 0.95
DEFAULT_BATCH = 256
DEFAULT_SEEDS = (0, 1, 2)
DEFAULT_LR_RANGE = (1e-4, 10.0)


@dataclass(frozen=True)
class ExperimentDefaults:
    dataset: str
    architecture: str
    task: str
    loss: Loss
    epochs: int
    batch_size: int | str
    gamma: float
    models: tuple[str, ...]
    init_scheme: str = InitScheme.GAUSSIAN.value
    range_steps: int = 100
    train_subset: int | None = None
    image_dir: str | None = None


def _synthetic(name, epochs, loss=Loss.BCE_WITH_LOGITS, task="binary"):
    return ExperimentDefaults(name, name, task, loss, epochs, FULL_BATCH, SYNTHETIC_GAMMA, ("prp", "dense"))


def _image(dataset, arch, epochs, task="multiclass", loss=Loss.CROSS_ENTROPY, scheme=InitScheme.GAUSSIAN.value):
    return ExperimentDefaults(
        dataset, arch, task, loss, epochs, DEFAULT_BATCH, DEFAULT_GAMMA,
        ("prp", "dense", "lowrank"), scheme, range_steps=200, image_dir=dataset,
    )


EXPERIMENTS: dict[str, ExperimentDefaults] = {
    "linear": _synthetic("linear", 100),
    "xor": _synthetic("xor", 3000),
    "circles": _synthetic("circles", 3000),
    "checkerboard": _synthetic("checkerboard", 3000),
    "polynomial": _synthetic("polynomial", 4000, Loss.MSE, "regression"),
    "mnist_mlp": _image("mnist", "mnist_mlp", 10),
    "fmnist_mlp": _image("fashion", "fmnist_mlp", 20),
    "autoencoder": _image("mnist", "autoencoder", 20, "reconstruction", Loss.MSE, InitScheme.ORTHOGONAL.value),
}

# Reduced protocols; keys override the registry defaults.
PROFILES: dict[str, dict[str, dict]] = {
    "ci": {
        "mnist_mlp": {"epochs": 2, "train_subset": 10000, "batch_size": 16},
        "fmnist_mlp": {"epochs": 2, "train_subset": 10000, "batch_size": 16},
        "autoencoder": {"epochs": 2, "train_subset": 10000, "batch_size": 16},
    },
}


@dataclass
class ExperimentSpec:
    experiment: str
    models: list[str]
    dataset: str
    architecture: str
    task: str
    loss: str
    epochs: int
    batch_size: int | str
    gamma: float
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    lr: float | None = None
    lr_min: float = DEFAULT_LR_RANGE[0]
    lr_max: float = DEFAULT_LR_RANGE[1]
    range_steps: int = 100
    init_scheme: str = InitScheme.GAUSSIAN.value
    train_subset: int | None = None
    data_dir: str | None = None
    out_dir: str = "results"
    profile: str | None = None
    save_checkpoints: bool = True

    def validate(self) -> None:
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        if not self.models:
            raise ValueError("at least one model kind is required")
        for m in self.models:
            ModelKind.parse(m)
        InitScheme.parse(self.init_scheme)
        Loss(self.loss)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr is None and not 0 < self.lr_min < self.lr_max:
            raise ValueError("lr range needs 0 < lr_min < lr_max")

    def echo(self) -> dict:
        """Fields that determine the numbers; paths and output options are left out."""
        d = dataclasses.asdict(self)
        for k in ("data_dir", "out_dir", "save_checkpoints"):
            d.pop(k)
        return d

    def content_hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def resolve_spec(experiment: str, profile: str | None = None, **overrides) -> ExperimentSpec:
    """Registry defaults, then the profile, then non-None overrides."""
    try:
        base = EXPERIMENTS[experiment]
    except KeyError:
        raise ValueError(f"unknown experiment {experiment!r}; registered: {', '.join(EXPERIMENTS)}") from None
    fields = {
        "experiment": experiment,
        "models": list(base.models),
        "dataset": base.dataset,
        "architecture": base.architecture,
        "task": base.task,
        "loss": base.loss.value,
        "epochs": base.epochs,
        "batch_size": base.batch_size,
        "gamma": base.gamma,
        "range_steps": base.range_steps,
        "init_scheme": base.init_scheme,
        "train_subset": base.train_subset,
        "profile": profile,
    }
    if profile is not None:
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}")
        fields.update(PROFILES[profile].get(experiment, {}))
    known = {f.name for f in dataclasses.fields(ExperimentSpec)}
    for key, value in overrides.items():
        if key not in known:
            raise ValueError(f"unknown spec field {key!r}")
        if value is not None:
            fields[key] = value
    spec = ExperimentSpec(**fields)
    spec.seeds = [int(s) for s in spec.seeds]
    spec.models = [ModelKind.parse(m).value for m in spec.models]
    spec.init_scheme = InitScheme.parse(spec.init_scheme).value
    spec.validate()
    return spec


def load_spec_file(path, **overrides) -> ExperimentSpec:
    """Read a YAML experiment file; keys mirror ``ExperimentSpec`` fields.

    ``experiment`` is required; ``profile`` is optional; every other key
    overrides the registry default. Non-None ``overrides`` (e.g. CLI flags)
    win over the file.
    """
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if "experiment" not in cfg:
        raise ValueError(f"{path}: missing 'experiment' key")
    name = cfg.pop("experiment")
    profile = cfg.pop("profile", None)
    if overrides.get("profile") is not None:
        profile = overrides.pop("profile")
    overrides.pop("profile", None)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return resolve_spec(name, profile=profile, **cfg)


def registry_self_check() -> list[str]:
    """Compare registry entries against the published protocol; return mismatches."""
    expected = {
        "linear": (100, FULL_BATCH, 0.9999),
        "xor": (3000, FULL_BATCH, 0.9999),
        "circles": (3000, FULL_BATCH, 0.9999),
        "checkerboard": (3000, FULL_BATCH, 0.9999),
        "polynomial": (4000, FULL_BATCH, 0.9999),
        "mnist_mlp": (10, 256, 0.95),
        "fmnist_mlp": (20, 256, 0.95),
        "autoencoder": (20, 256, 0.95),
    }
    problems = []
    for name, (epochs, batch, gamma) in expected.items():
        e = EXPERIMENTS[name]
        if (e.epochs, e.batch_size, e.gamma) != (epochs, batch, gamma):
            problems.append(f"{name}: {(e.epochs, e.batch_size, e.gamma)} != {(epochs, batch, gamma)}")
    return problems


def load_data(spec: ExperimentSpec, seed: int) -> tuple[Dataset, Dataset | None]:
    """Training set and held-out set (None for synthetic tasks)."""
    if spec.dataset in data_mod.GENERATORS:
        n = data_mod.SYNTHETIC_CONFIG[spec.dataset]["n"]
        return data_mod.GENERATORS[spec.dataset](n, seed), None
    root = Path(spec.data_dir) if spec.data_dir else data_mod.default_data_dir()
    directory = root / spec.dataset
    if not directory.exists():
        directory = root
    train_set, test_set = data_mod.load_image_dataset(directory, spec.dataset, task=spec.task)
    if spec.train_subset:
        train_set = data_mod.subset(train_set, spec.train_subset, seed=0)
    return train_set, test_set


class _DataCache:
    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self._image = None

    def get(self, seed: int):
        if self.spec.dataset in data_mod.GENERATORS:
            return load_data(self.spec, seed)
        if self._image is None:
            self._image = load_data(self.spec, seed)
        return self._image


def build_model(spec: ExperimentSpec, kind: str, seed: int) -> Sequential:
    return build_architecture(spec.architecture, kind, seed, scheme=InitScheme.parse(spec.init_scheme))


def _run_seed(spec: ExperimentSpec, kind: str, seed: int, lr: float, train_set, test_set, ckpt_dir):
    model = build_model(spec, kind, seed)
    cfg = TrainConfig(spec.epochs, spec.batch_size, lr, spec.gamma, spec.loss, seed)
    outcome = train(model, train_set, cfg, test_set)
    eval_set = test_set if test_set is not None else train_set
    record = {
        "seed": seed,
        "status": "ok" if outcome.ok else "aborted",
        "aborted_epoch": outcome.aborted_epoch,
        "abort_reason": outcome.abort_reason,
        "train_curve": outcome.train_losses,
        "test_curve": outcome.test_losses,
        "projections": [p.descriptor() for p in model.projections()],
        "metrics": {},
    }
    if outcome.ok:
        test_loss, report = evaluate(model, eval_set, spec.loss)
        metrics = report.as_dict()
        metrics["test_loss"] = test_loss
        if outcome.train_losses:
            metrics["train_loss"] = outcome.train_losses[-1]
            metrics["best_test_loss"] = min(outcome.test_losses)
        record["metrics"] = metrics
        if ckpt_dir is not None:
            path = Path(ckpt_dir) / f"{kind}-seed{seed}.npz"
            save_checkpoint(model, path)
            record["checkpoint"] = path.name
    return record


def _bes_for(spec: ExperimentSpec, train_set: Dataset, params: int, mean_acc: float) -> float | None:
    if spec.task not in ("binary", "multiclass") or params < 2:
        return None
    return bes(mean_acc, chance_baseline(train_set.n_classes), len(train_set), train_set.d_in, params)


def _unique_path(directory: Path, stem: str, suffix: str) -> Path:
    path = directory / f"{stem}{suffix}"
    k = 1
    while path.exists():
        path = directory / f"{stem}.{k}{suffix}"
        k += 1
    return path


def run_experiment(spec: ExperimentSpec, write: bool = True) -> list[dict]:
    """Stage 1: LR range test per model kind. Stage 2: one run per seed at that LR.

    Returns one result record per model kind; with ``write`` each record is
    stored as JSON under ``<out_dir>/<experiment>-<spec hash>/``.
    """
    spec.validate()
    run_dir = Path(spec.out_dir) / f"{spec.experiment}-{spec.content_hash()}"
    ckpt_dir = None
    if write:
        run_dir.mkdir(parents=True, exist_ok=True)
        if spec.save_checkpoints:
            ckpt_dir = run_dir / "checkpoints"
            ckpt_dir.mkdir(exist_ok=True)
    cache = _DataCache(spec)
    results = []
    for kind in spec.models:
        started = time.perf_counter()
        range_seed = spec.seeds[0]
        range_result = None
        if spec.lr is not None:
            lr = float(spec.lr)
        else:
            train_set, _ = cache.get(range_seed)
            batch = spec.batch_size
            range_result = lr_range_test(
                lambda: build_model(spec, kind, range_seed), train_set, spec.lr_min, spec.lr_max,
                spec.range_steps, range_seed, spec.loss, batch,
            )
            lr = range_result.chosen_lr
        log.info("%s/%s: learning rate %.4g", spec.experiment, kind, lr)
        per_seed = []
        for seed in spec.seeds:
            train_set, test_set = cache.get(seed)
            rec = _run_seed(spec, kind, seed, lr, train_set, test_set, ckpt_dir)
            log.info("%s/%s seed %d: %s %s", spec.experiment, kind, seed, rec["status"], rec["metrics"])
            per_seed.append(rec)
        ok = [r["metrics"] for r in per_seed if r["status"] == "ok"]
        agg = aggregate(ok) if ok else {"mean": {}, "std": {}, "n_runs": 0, "single_run": False}
        params = build_model(spec, kind, spec.seeds[0]).param_count()
        train_set, _ = cache.get(spec.seeds[0])
        bes_value = _bes_for(spec, train_set, params, agg["mean"]["accuracy"]) if "accuracy" in agg["mean"] else None
        result = {
            "schema_version": SCHEMA_VERSION,
            "spec": spec.echo(),
            "spec_hash": spec.content_hash(),
            "model_kind": kind,
            "param_count": params,
            "learning_rate": lr,
            "range_test": range_result.as_dict() if range_result else None,
            "per_seed": per_seed,
            "aggregate": agg,
            "bes": bes_value,
            "failed_seeds": [r["seed"] for r in per_seed if r["status"] != "ok"],
            "duration_seconds": time.perf_counter() - started,
        }
        if write:
            path = _unique_path(run_dir, kind, ".json")
            path.write_text(json.dumps(result, indent=1, sort_keys=True))
            result["_path"] = str(path)
        results.append(result)
    return results


def numeric_content(result: dict) -> dict:
    """Result without wall-clock and file-location fields, for reproducibility diffs."""
    out = {k: v for k, v in result.items() if k not in ("duration_seconds", "_path")}
    if "per_seed" in out:
        out["per_seed"] = [{k: v for k, v in rec.items() if k != "checkpoint"} for rec in out["per_seed"]]
    return out


# ---------------------------------------------------------------- reporting

CLASSIFICATION_ROWS = [
    ("Parameters", None),
    ("Accuracy (%)", "accuracy"),
    ("Macro-F1", "macro_f1"),
    ("Train Loss", "train_loss"),
    ("Test Loss (Final)", "test_loss"),
    ("Best Test Loss", "best_test_loss"),
]
REGRESSION_ROWS = [("Parameters", None), ("MSE (Loss)", "mse"), ("MAE", "mae"), ("R2", "r2")]
RECONSTRUCTION_ROWS = [
    ("Parameters", None),
    ("MSE", "mse"),
    ("MAE", "mae"),
    ("Test Loss", "test_loss"),
    ("Best Test Loss", "best_test_loss"),
]
SINGLE_RUN_NOTE = "Note: evaluated in a single run; standard deviation is not reported."
MODEL_ORDER = {"prp": 0, "dense": 1, "lowrank": 2}
MODEL_LABEL = {"prp": "PRP", "dense": "Standard (FC)", "lowrank": "Low-Rank (FC)"}


def load_results(results_dir) -> tuple[list[dict], list[str]]:
    """All result JSON files under ``results_dir``; unreadable ones are reported and skipped."""
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise FileNotFoundError(f"{results_dir} is not a directory")
    found, skipped = [], []
    for path in sorted(results_dir.rglob("*.json")):
        try:
            res = json.loads(path.read_text())
            if res.get("schema_version") != SCHEMA_VERSION or "aggregate" not in res:
                raise ValueError("not a run result")
        except (ValueError, UnicodeDecodeError) as exc:
            skipped.append(f"{path}: {exc}")
            continue
        res["_path"] = str(path)
        found.append(res)
    if not found:
        raise FileNotFoundError(f"no run results found in {results_dir}")
    return found, skipped


def _fmt(value: float, std: float, key: str, single: bool) -> str:
    scale = 100.0 if key == "accuracy" else 1.0
    digits = {"accuracy": 2, "macro_f1": 3, "mse": 4, "mae": 4, "r2": 5}.get(key, 3)
    if single:
        return f"{value * scale:.{digits}f}"
    return f"{value * scale:.{digits}f} ± {std * scale:.{digits}f}"


def build_tables(results: list[dict]) -> dict[str, dict]:
    """Per experiment: header, rows and BES rows, ready for text/CSV rendering."""
    by_exp: dict[str, list[dict]] = {}
    for r in results:
        by_exp.setdefault(r["spec"]["experiment"], []).append(r)
    tables = {}
    for exp, runs in sorted(by_exp.items()):
        runs = sorted(runs, key=lambda r: MODEL_ORDER.get(r["model_kind"], 9))
        task = runs[0]["spec"]["task"]
        rows_def = {"binary": CLASSIFICATION_ROWS, "multiclass": CLASSIFICATION_ROWS,
                    "regression": REGRESSION_ROWS}.get(task, RECONSTRUCTION_ROWS)
        header = ["Metric"] + [MODEL_LABEL.get(r["model_kind"], r["model_kind"]) for r in runs]
        rows = []
        for label, key in rows_def:
            row = [label]
            for r in runs:
                agg = r["aggregate"]
                if key is None:
                    row.append(f"{r['param_count']:,}")
                elif key in agg["mean"]:
                    row.append(_fmt(agg["mean"][key], agg["std"][key], key, agg["single_run"]))
                else:
                    row.append("n/a")
            rows.append(row)
        bes_rows = [
            [MODEL_LABEL.get(r["model_kind"], r["model_kind"]), f"{r['param_count']:,}", f"{r['bes']:.2f}"]
            for r in runs if r.get("bes") is not None
        ]
        tables[exp] = {
            "header": header,
            "rows": rows,
            "bes": bes_rows,
            "single_run": any(r["aggregate"]["single_run"] for r in runs),
        }
    return tables


def report(results_dir, csv_path=None) -> str:
    """Render comparison tables as text; optionally write the same cells as CSV."""
    results, skipped = load_results(results_dir)
    tables = build_tables(results)
    lines = []
    csv_rows = []
    for exp, t in tables.items():
        lines.append(f"== {exp} ==")
        widths = [max(len(str(row[i])) for row in [t["header"]] + t["rows"]) for i in range(len(t["header"]))]
        for row in [t["header"]] + t["rows"]:
            lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
            csv_rows.append([exp] + row)
        if t["single_run"]:
            lines.append(SINGLE_RUN_NOTE)
        if t["bes"]:
            lines.append("Bit Efficiency Score")
            for row in t["bes"]:
                lines.append(f"  {row[0]:<15} params={row[1]:>10}  BES={row[2]}")
                csv_rows.append([exp, "BES"] + row)
        lines.append("")
    for s in skipped:
        lines.append(f"skipped corrupt result: {s}")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh).writerows(csv_rows)
    return "\n".join(lines)


CURVE_HEADER = ["epoch", "train_loss", "test_loss"]


def export_curves(result: dict, path, seed_index: int = 0) -> Path:
    """Write one seed's per-epoch losses as CSV; floats use ``repr`` so they parse back exactly."""
    rec = result["per_seed"][seed_index]
    train_c, test_c = rec["train_curve"], rec["test_curve"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for epoch, tl in enumerate(train_c):
        w.writerow([epoch + 1, repr(float(tl)), repr(float(test_c[epoch])) if epoch < len(test_c) else ""])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def read_curves(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != CURVE_HEADER:
            raise ValueError(f"{path}: unexpected header")
        return [(int(e), float(a), float(b)) for e, a, b in reader]


# ------------------------------------------------------------ reconstructions

def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def reconstruct_samples(models: dict, dataset: Dataset, n: int, path=None, side: int = 28):
    """Grid of originals (first column) and each model's reconstructions.

    ``models`` maps a label to anything with ``predict(x) -> [0, 1] pixels``.
    Returns ``(grid, mse_by_model)`` where MSE is over the ``n`` samples.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    x = dataset.inputs[:n]
    originals = data_mod.denormalize_pixels(x)
    columns = [originals]
    mse = {}
    for label, model in models.items():
        out = np.asarray(model.predict(x), dtype=np.float64)
        mse[label] = float(np.mean((out - dataset.targets[:n]) ** 2))
        columns.append(np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8))
    grid = np.zeros((n * side, len(columns) * side), dtype=np.uint8)
    for c, col in enumerate(columns):
        for r in range(n):
            grid[r * side:(r + 1) * side, c * side:(c + 1) * side] = col[r].reshape(side, side)
    if path is not None:
        write_pgm(path, grid)
    return grid, mse


def load_result_checkpoint(result: dict, seed_index: int = 0) -> Sequential:
    rec = result["per_seed"][seed_index]
    if "checkpoint" not in rec:
        raise FileNotFoundError(f"result for {result['model_kind']} has no checkpoint")
    path = Path(result["_path"]).parent / "checkpoints" / rec["checkpoint"]
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}")
    return load_checkpoint(path)
