"""Losses, Adam, exponential LR decay, the LR range test and the training loop."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .data import FULL_BATCH, Dataset, batch_iter
from .linalg import checksum64, derive_seed
from .metrics import MetricReport, accuracy, macro_f1, regression_metrics
from .models import Sequential, sigmoid


class Loss(str, enum.Enum):
    BCE_WITH_LOGITS = "bce_with_logits"
    CROSS_ENTROPY = "cross_entropy"
    MSE = "mse"


def loss_forward_backward(loss, predictions, targets) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its exact gradient w.r.t. ``predictions``.

    BCE takes logits and {0, 1} targets of the same shape, cross-entropy
    takes logits of shape (n, C) and integer class indices of shape (n,),
    MSE averages over every element.
    """
    loss = Loss(loss)
    z = np.asarray(predictions, dtype=np.float64)
    if loss is Loss.CROSS_ENTROPY:
        t = np.asarray(targets)
        if z.ndim != 2 or t.shape != (z.shape[0],):
            raise ValueError(f"cross-entropy needs logits (n, C) and labels (n,), got {z.shape} and {t.shape}")
        t = t.astype(np.int64)
        if t.size and (t.min() < 0 or t.max() >= z.shape[1]):
            raise ValueError(f"class index out of range [0, {z.shape[1]})")
        n = z.shape[0]
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(n)
        value = float(np.mean(lse - shifted[rows, t]))
        grad = np.exp(shifted - lse[:, None])
        grad[rows, t] -= 1.0
        return value, grad / n
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != z.shape:
        raise ValueError(f"prediction shape {z.shape} != target shape {t.shape}")
    if loss is Loss.BCE_WITH_LOGITS:
        value = float(np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))))
        return value, (sigmoid(z) - t) / z.size
    diff = z - t
    return float(np.mean(diff * diff)), 2.0 * diff / z.size


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class Adam:
    """Bias-corrected Adam updating a dict of arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self._buf = {k: np.empty_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        for name, g in grads.items():
            if name not in self.params:
                raise KeyError(f"gradient for unknown parameter {name!r}")
            if g.shape != self.params[name].shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {self.params[name].shape}")
            # one reduction: NaN/inf propagate; a finite sum overflowing would blow up v anyway
            if not np.isfinite(np.add.reduce(g, axis=None)):
                raise NonFiniteGradient(name)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        root_bc2 = np.sqrt(1.0 - self.beta2 ** self.t)
        # lr * m̂ / (sqrt(v̂) + eps) with the corrections folded into scalars
        step_size = lr * root_bc2 / bc1
        eps_hat = self.eps * root_bc2
        for name, g in grads.items():
            m, v, buf = self.m[name], self.v[name], self._buf[name]
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=buf)
            m += buf
            v *= self.beta2
            np.multiply(g, g, out=buf)
            buf *= 1.0 - self.beta2
            v += buf
            np.sqrt(v, out=buf)
            buf += eps_hat
            np.divide(m, buf, out=buf)
            buf *= step_size
            self.params[name] -= buf


def adam_step(state: Adam, params, grads, lr: float):
    """Functional wrapper: ``state`` must own ``params``."""
    if state.params is not params:
        raise ValueError("optimizer state was created for a different parameter set")
    state.step(grads, lr)
    return params


@dataclass(frozen=True)
class LrSchedule:
    """``lr0 * gamma ** epoch``."""

    lr0: float
    gamma: float = 1.0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    def lr(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        return self.lr0 * self.gamma ** epoch


def schedule_lr(s: LrSchedule, epoch: int) -> float:
    return s.lr(epoch)


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int | str = FULL_BATCH
    lr0: float = 1e-3
    gamma: float = 1.0
    loss: Loss = Loss.MSE
    seed: int = 0
    eval_every_epoch: bool = True

    def __post_init__(self):
        self.loss = Loss(self.loss)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size != FULL_BATCH and int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1 or 'full'")


@dataclass
class TrainResult:
    model: Sequential
    train_losses: list[float] = field(default_factory=list)
    test_losses: list[float] = field(default_factory=list)
    aborted_epoch: int | None = None
    abort_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.aborted_epoch is None


def _projection_fingerprint(model: Sequential) -> list[str]:
    return [checksum64(p.p) for p in model.projections()]


def evaluate_loss(model: Sequential, dataset: Dataset, loss, batch_size: int = 2048) -> float:
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        sl = slice(start, start + batch_size)
        out = model.predict(dataset.inputs[sl], batch_size=batch_size)
        value, _ = loss_forward_backward(loss, out, dataset.targets[sl])
        total += value * out.shape[0]
    return total / len(dataset)


def train(model: Sequential, dataset: Dataset, cfg: TrainConfig, test: Dataset | None = None) -> TrainResult:
    """Run exactly ``cfg.epochs`` epochs of Adam with per-epoch exponential decay.

    The train curve records the sample-weighted mean of mini-batch losses of
    each epoch; the test curve evaluates ``test`` (or ``dataset`` when there
    is no held-out split) after each epoch. A non-finite loss stops the run
    and is reported in the result.
    """
    result = TrainResult(model)
    if cfg.epochs == 0:
        return result
    schedule = LrSchedule(cfg.lr0, cfg.gamma)
    params = model.named_parameters()
    opt = Adam(params)
    fingerprint = _projection_fingerprint(model)
    eval_set = test if test is not None else dataset
    n = len(dataset)
    for epoch in range(cfg.epochs):
        lr = schedule.lr(epoch)
        running = 0.0
        for idx in batch_iter(n, cfg.batch_size, cfg.seed, epoch):
            x = dataset.inputs[idx]
            out = model.forward(x)
            value, dout = loss_forward_backward(cfg.loss, out, dataset.targets[idx])
            if not math.isfinite(value):
                result.aborted_epoch = epoch
                result.abort_reason = "non-finite training loss"
                return result
            grads = Sequential.flatten_grads(model.backward(dout))
            try:
                opt.step(grads, lr)
            except NonFiniteGradient as exc:
                result.aborted_epoch = epoch
                result.abort_reason = str(exc)
                return result
            running += value * len(idx)
        result.train_losses.append(running / n)
        if cfg.eval_every_epoch or epoch == cfg.epochs - 1:
            test_loss = evaluate_loss(model, eval_set, cfg.loss)
            result.test_losses.append(test_loss)
            if not math.isfinite(test_loss):
                result.aborted_epoch = epoch
                result.abort_reason = "non-finite evaluation loss"
                return result
    if _projection_fingerprint(model) != fingerprint:
        raise RuntimeError("a fixed projection matrix changed during training")
    return result


def evaluate(model: Sequential, dataset: Dataset, loss) -> tuple[float, MetricReport]:
    """Loss plus the task-appropriate metrics on ``dataset``."""
    loss = Loss(loss)
    out = model.predict(dataset.inputs)
    value, _ = loss_forward_backward(loss, out, dataset.targets)
    if dataset.task == "binary":
        pred = (out[:, 0] > 0).astype(np.int64)
        true = dataset.targets[:, 0].astype(np.int64)
        return value, MetricReport(accuracy=accuracy(pred, true), macro_f1=macro_f1(pred, true, 2))
    if dataset.task == "multiclass":
        pred = np.argmax(out, axis=1)
        return value, MetricReport(
            accuracy=accuracy(pred, dataset.targets),
            macro_f1=macro_f1(pred, dataset.targets, dataset.n_classes),
        )
    mse, mae, r2 = regression_metrics(out, dataset.targets)
    if dataset.task == "reconstruction":
        return value, MetricReport(mse=mse, mae=mae)
    return value, MetricReport(mse=mse, mae=mae, r2=r2)


@dataclass
class RangeTestResult:
    chosen_lr: float
    lrs: list[float]
    smoothed_losses: list[float]
    raw_losses: list[float]
    truncated_at: int | None = None

    def as_dict(self) -> dict:
        return {
            "chosen_lr": self.chosen_lr,
            "lrs": self.lrs,
            "smoothed_losses": self.smoothed_losses,
            "raw_losses": self.raw_losses,
            "truncated_at": self.truncated_at,
        }


class RangeTestDiverged(RuntimeError):
    pass


RANGE_SMOOTHING = 0.98
RANGE_DIVERGENCE_FACTOR = 4.0
RANGE_DIVISOR = 10.0


def select_lr(lrs, smoothed) -> float:
    """LR at the minimum smoothed loss, divided by 10."""
    return float(lrs[int(np.argmin(smoothed))]) / RANGE_DIVISOR


def lr_range_test(model_factory, data: Dataset, lr_min: float, lr_max: float, steps: int,
                  seed: int, loss, batch_size=FULL_BATCH) -> RangeTestResult:
    """Train a fresh model while the LR grows geometrically from ``lr_min`` to ``lr_max``.

    The loss is smoothed by a bias-corrected exponential moving average; the
    sweep stops once the smoothed loss exceeds four times its best value.
    """
    if not 0 < lr_min < lr_max:
        raise ValueError(f"need 0 < lr_min < lr_max, got {lr_min} and {lr_max}")
    if steps < 10:
        raise ValueError("range test needs at least 10 steps")
    model = model_factory()
    opt = Adam(model.named_parameters())
    lrs = [lr_min * (lr_max / lr_min) ** (k / (steps - 1)) for k in range(steps)]
    smoothed, raw = [], []
    avg, best = 0.0, math.inf
    truncated = None

    def batches():
        epoch = 0
        while True:
            yield from batch_iter(len(data), batch_size, derive_seed(seed, 0xA7), epoch)
            epoch += 1

    stream = batches()
    for k, lr in enumerate(lrs):
        idx = next(stream)
        out = model.forward(data.inputs[idx])
        value, dout = loss_forward_backward(loss, out, data.targets[idx])
        if not math.isfinite(value):
            truncated = k
            break
        avg = RANGE_SMOOTHING * avg + (1.0 - RANGE_SMOOTHING) * value
        s = avg / (1.0 - RANGE_SMOOTHING ** (k + 1))
        if k > 0 and s > RANGE_DIVERGENCE_FACTOR * best:
            truncated = k
            break
        raw.append(value)
        smoothed.append(s)
        best = min(best, s)
        try:
            opt.step(Sequential.flatten_grads(model.backward(dout)), lr)
        except NonFiniteGradient:
            truncated = k + 1
            break
    if len(smoothed) < 2:
        raise RangeTestDiverged(
            f"range test diverged immediately at lr_min={lr_min:g}; try a smaller lr_min"
        )
    return RangeTestResult(select_lr(lrs[: len(smoothed)], smoothed), lrs[: len(smoothed)], smoothed, raw, truncated)


def aggregate(per_seed: list[dict]) -> dict:
    """Mean and sample standard deviation (n - 1) per metric; a single run gets std 0."""
    if not per_seed:
        raise ValueError("need at least one run to aggregate")
    keys = [k for k in per_seed[0] if all(isinstance(r.get(k), (int, float)) for r in per_seed)]
    mean, std = {}, {}
    for k in keys:
        vals = np.array([float(r[k]) for r in per_seed])
        mean[k] = float(vals.mean())
        std[k] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return {"mean": mean, "std": std, "n_runs": len(per_seed), "single_run": len(per_seed) == 1}


def multi_seed(run, seeds) -> dict:
    """Call ``run(seed) -> dict of metrics`` for every seed and aggregate."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    per_seed = [run(s) for s in seeds]
    agg = aggregate(per_seed)
    agg["per_seed"] = per_seed
    agg["seeds"] = seeds
    return agg
