"""Trainable layers with hand-written backward passes.

Every layer works on batches (one sample per row) and also accepts a single
1-d sample. ``backward`` expects the gradient of a scalar loss with respect
to the layer output and returns parameter gradients summed over the batch,
so a loss that averages over the batch yields batch-mean gradients.
"""
from __future__ import annotations

import math

import numpy as np

from .linalg import SeededRng, ShapeError, rng_standard_normal
from .projections import ProjectionMatrix

GradientSet = dict  # parameter name -> gradient array, same shape as the parameter


class BackwardBeforeForward(RuntimeError):
    pass


def _as_batch(x, d_in: int, who: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d_in:
        raise ShapeError(f"{who}: expected input width {d_in}, got shape {x.shape}")
    return x, single


def init_modulation(d_in: int, d_out: int, seed: int | None = None, perturb: bool = False):
    """Initial ``(alpha, w, b)``: ones, ones, zeros.

    With ``perturb=True`` each vector gets seeded Gaussian noise of variance
    0.01 (std 0.1).
    """
    if d_in < 1 or d_out < 1:
        raise ValueError("dims must be >= 1")
    alpha, w, b = np.ones(d_in), np.ones(d_out), np.zeros(d_out)
    if perturb:
        if seed is None:
            raise ValueError("perturbed init needs a seed")
        noise = 0.1 * rng_standard_normal(SeededRng(seed), d_in + 2 * d_out)
        alpha += noise[:d_in]
        w += noise[d_in:d_in + d_out]
        b += noise[d_in + d_out:]
    return alpha, w, b


class PRPLayer:
    """``y = (P^T (x * alpha)) * w + b`` with P fixed."""

    kind = "prp"

    def __init__(self, proj: ProjectionMatrix, alpha=None, w=None, b=None):
        self.proj = proj
        a0, w0, b0 = init_modulation(proj.d_in, proj.d_out)
        self.params = {
            "alpha": a0 if alpha is None else np.array(alpha, dtype=np.float64),
            "w": w0 if w is None else np.array(w, dtype=np.float64),
            "b": b0 if b is None else np.array(b, dtype=np.float64),
        }
        expected = {"alpha": (proj.d_in,), "w": (proj.d_out,), "b": (proj.d_out,)}
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.params[name].shape}, expected {shape}")
        self._cache = None

    @property
    def d_in(self) -> int:
        return self.proj.d_in

    @property
    def d_out(self) -> int:
        return self.proj.d_out

    def forward(self, x) -> np.ndarray:
        x, single = _as_batch(x, self.d_in, "PRP forward")
        u = x * self.params["alpha"]
        z = u @ self.proj.p
        y = z * self.params["w"] + self.params["b"]
        self._cache = (x, z)
        return y[0] if single else y

    def backward(self, dy) -> tuple[GradientSet, np.ndarray]:
        if self._cache is None:
            raise BackwardBeforeForward("PRP backward called before forward")
        x, z = self._cache
        dy = np.asarray(dy, dtype=np.float64)
        single = dy.ndim == 1
        if single:
            dy = dy[None, :]
        if dy.shape != z.shape:
            raise ShapeError(f"PRP backward: upstream gradient {dy.shape} != output {z.shape}")
        dz = dy * self.params["w"]
        du = dz @ self.proj.p.T
        grads = {
            "alpha": np.einsum("ij,ij->j", du, x),
            "w": np.einsum("ij,ij->j", dy, z),
            "b": dy.sum(axis=0),
        }
        dx = du * self.params["alpha"]
        return grads, (dx[0] if single else dx)

    def effective_matrix(self) -> np.ndarray:
        """``diag(w) P^T diag(alpha)`` as a ``d_out x d_in`` matrix."""
        return self.params["w"][:, None] * self.proj.p.T * self.params["alpha"][None, :]

    def param_count(self) -> int:
        return self.d_in + 2 * self.d_out


class DenseLayer:
    """``y = W x + b`` with ``W`` of shape ``(d_out, d_in)``."""

    kind = "dense"

    def __init__(self, weight, b):
        weight = np.array(weight, dtype=np.float64)
        b = np.array(b, dtype=np.float64)
        if weight.ndim != 2 or b.shape != (weight.shape[0],):
            raise ShapeError(f"weight {weight.shape} and bias {b.shape} are incompatible")
        self.params = {"weight": weight, "b": b}
        self._cache = None

    @classmethod
    def init(cls, d_in: int, d_out: int, seed: int) -> "DenseLayer":
        """Uniform(-1/sqrt(d_in), 1/sqrt(d_in)) for weights and bias, weights drawn first."""
        bound = 1.0 / math.sqrt(d_in)
        u = SeededRng(seed).uniform(d_in * d_out + d_out)
        vals = (2.0 * u - 1.0) * bound
        return cls(vals[: d_in * d_out].reshape(d_out, d_in), vals[d_in * d_out:])

    @property
    def d_in(self) -> int:
        return self.params["weight"].shape[1]

    @property
    def d_out(self) -> int:
        return self.params["weight"].shape[0]

    def forward(self, x) -> np.ndarray:
        x, single = _as_batch(x, self.d_in, "dense forward")
        y = x @ self.params["weight"].T + self.params["b"]
        self._cache = x
        return y[0] if single else y

    def backward(self, dy) -> tuple[GradientSet, np.ndarray]:
        if self._cache is None:
            raise BackwardBeforeForward("dense backward called before forward")
        x = self._cache
        dy = np.asarray(dy, dtype=np.float64)
        single = dy.ndim == 1
        if single:
            dy = dy[None, :]
        if dy.shape != (x.shape[0], self.d_out):
            raise ShapeError(f"dense backward: upstream gradient {dy.shape} != output shape")
        grads = {"weight": dy.T @ x, "b": dy.sum(axis=0)}
        dx = dy @ self.params["weight"]
        return grads, (dx[0] if single else dx)

    def param_count(self) -> int:
        return self.d_in * self.d_out + self.d_out


def prp_forward(layer: PRPLayer, x) -> np.ndarray:
    return layer.forward(x)


def prp_backward(layer: PRPLayer, dy):
    return layer.backward(dy)


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    return layer.forward(x)


def dense_backward(layer: DenseLayer, dy):
    return layer.backward(dy)


def effective_matrix(layer: PRPLayer) -> np.ndarray:
    return layer.effective_matrix()


def param_count(layer) -> int:
    """Trainable parameters of a layer or model; fixed projections are excluded."""
    return layer.param_count()
