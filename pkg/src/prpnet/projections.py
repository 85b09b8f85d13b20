"""Fixed random projection matrices and their seed-based regeneration."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import SeededRng, checksum64, qr_orthonormal_columns, rng_standard_normal


class InitScheme(str, enum.Enum):
    GAUSSIAN = "gaussian"
    SPARSE_TERNARY = "ternary"
    # non-default: P(+-a) = 1/6 each, P(0) = 2/3, unit-scaled variance 1/d_in
    SPARSE_TERNARY_ACHLIOPTAS = "ternary-achlioptas"
    ORTHOGONAL = "orthogonal"

    @classmethod
    def parse(cls, value: "InitScheme | str") -> "InitScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown init scheme {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class ProjectionMatrix:
    """Non-trainable ``d_in x d_out`` matrix plus the recipe that produced it.

    ``transposed`` marks a view onto another projection's transpose (the tied
    autoencoder decoder); ``scheme``/``seed`` then describe the source matrix
    and ``d_in``/``d_out`` are those of the view.
    """

    p: np.ndarray = field(repr=False, compare=False)
    scheme: InitScheme
    seed: int
    d_in: int
    d_out: int
    transposed: bool = False

    def __post_init__(self):
        if self.p.shape != (self.d_in, self.d_out):
            raise ValueError(f"projection shape {self.p.shape} != ({self.d_in}, {self.d_out})")
        self.p.flags.writeable = False

    @property
    def checksum(self) -> str:
        return checksum64(self.p)

    def T(self) -> "ProjectionMatrix":
        """Transposed view sharing storage with this matrix."""
        return ProjectionMatrix(
            self.p.T, self.scheme, self.seed, self.d_out, self.d_in, not self.transposed
        )

    def descriptor(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "seed": self.seed,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "transposed": self.transposed,
            "checksum": self.checksum,
        }


def _check_dims(d_in: int, d_out: int) -> None:
    if d_in < 1 or d_out < 1:
        raise ValueError(f"projection dims must be positive, got {d_in}x{d_out}")


def init_gaussian(d_in: int, d_out: int, seed: int) -> ProjectionMatrix:
    """Entries N(0, 1/d_in), drawn row-major from ``SeededRng(seed)``."""
    _check_dims(d_in, d_out)
    z = rng_standard_normal(SeededRng(seed), d_in * d_out).reshape(d_in, d_out)
    return ProjectionMatrix(z / math.sqrt(d_in), InitScheme.GAUSSIAN, seed, d_in, d_out)


def _ternary(d_in: int, d_out: int, seed: int, p_nonzero: float, scheme: InitScheme):
    _check_dims(d_in, d_out)
    mag = math.sqrt(3.0 / d_in)
    u = SeededRng(seed).uniform(d_in * d_out)
    half = p_nonzero / 2.0
    vals = np.where(u < half, -mag, np.where(u < p_nonzero, mag, 0.0))
    return ProjectionMatrix(vals.reshape(d_in, d_out), scheme, seed, d_in, d_out)


def init_sparse_ternary(d_in: int, d_out: int, seed: int) -> ProjectionMatrix:
    """Entries in {-sqrt(3/d_in), 0, +sqrt(3/d_in)}, each with probability 1/3.

    Entry variance is 2/d_in, twice that of the Gaussian scheme.
    """
    return _ternary(d_in, d_out, seed, 2.0 / 3.0, InitScheme.SPARSE_TERNARY)


def init_sparse_ternary_achlioptas(d_in: int, d_out: int, seed: int) -> ProjectionMatrix:
    return _ternary(d_in, d_out, seed, 1.0 / 3.0, InitScheme.SPARSE_TERNARY_ACHLIOPTAS)


def init_orthogonal(d_in: int, d_out: int, seed: int) -> ProjectionMatrix:
    """Orthonormal columns from Householder QR of a seeded Gaussian matrix."""
    _check_dims(d_in, d_out)
    if d_out > d_in:
        raise ValueError(
            f"orthogonal projection needs d_out <= d_in, got d_in={d_in}, d_out={d_out}"
        )
    g = rng_standard_normal(SeededRng(seed), d_in * d_out).reshape(d_in, d_out)
    return ProjectionMatrix(
        qr_orthonormal_columns(g), InitScheme.ORTHOGONAL, seed, d_in, d_out
    )


_BUILDERS = {
    InitScheme.GAUSSIAN: init_gaussian,
    InitScheme.SPARSE_TERNARY: init_sparse_ternary,
    InitScheme.SPARSE_TERNARY_ACHLIOPTAS: init_sparse_ternary_achlioptas,
    InitScheme.ORTHOGONAL: init_orthogonal,
}


def make_projection(scheme, d_in: int, d_out: int, seed: int) -> ProjectionMatrix:
    return _BUILDERS[InitScheme.parse(scheme)](d_in, d_out, seed)


def regenerate(scheme, seed: int, d_in: int, d_out: int) -> ProjectionMatrix:
    return make_projection(scheme, d_in, d_out, seed)


def from_descriptor(desc: dict, verify: bool = True) -> ProjectionMatrix:
    """Rebuild a projection from its stored descriptor and check it.

    Raises ``ValueError`` if the rebuilt dims or checksum differ from the
    stored values.
    """
    d_in, d_out = int(desc["d_in"]), int(desc["d_out"])
    transposed = bool(desc.get("transposed", False))
    src_in, src_out = (d_out, d_in) if transposed else (d_in, d_out)
    proj = regenerate(desc["scheme"], int(desc["seed"]), src_in, src_out)
    if transposed:
        proj = proj.T()
    if (proj.d_in, proj.d_out) != (d_in, d_out):
        raise ValueError(f"regenerated dims {proj.d_in}x{proj.d_out} != stored {d_in}x{d_out}")
    if verify and "checksum" in desc and proj.checksum != desc["checksum"]:
        raise ValueError(
            f"checksum mismatch for {desc['scheme']} seed {desc['seed']}: "
            f"stored {desc['checksum']}, regenerated {proj.checksum}"
        )
    return proj


def verify_against(proj: ProjectionMatrix, desc: dict) -> None:
    """Raise if ``proj`` does not match stored metadata (dims, scheme, checksum)."""
    if (proj.d_in, proj.d_out) != (int(desc["d_in"]), int(desc["d_out"])):
        raise ValueError(
            f"dims {proj.d_in}x{proj.d_out} do not match stored {desc['d_in']}x{desc['d_out']}"
        )
    if proj.scheme != InitScheme.parse(desc["scheme"]) or proj.seed != int(desc["seed"]):
        raise ValueError("scheme/seed do not match stored metadata")
    if "checksum" in desc and proj.checksum != desc["checksum"]:
        raise ValueError("checksum does not match stored metadata")


@dataclass
class DistortionSummary:
    max_distortion: float
    mean_distortion: float
    pairs_used: int
    skipped_pairs: list[tuple[int, int]]


def expected_gain(proj: ProjectionMatrix) -> float:
    """``E |P^T u|^2 / |u|^2`` for a fixed ``u``: ``d_out`` times the entry variance.

    The equal-probability ternary scheme has twice the variance of the others.
    For a square orthogonal matrix the gain is exactly 1.
    """
    var = 2.0 / proj.d_in if proj.scheme is InitScheme.SPARSE_TERNARY else 1.0 / proj.d_in
    if proj.transposed:
        var = 1.0 / proj.d_out if proj.scheme is not InitScheme.SPARSE_TERNARY else 2.0 / proj.d_out
    return proj.d_out * var


def jl_distortion_stats(proj: ProjectionMatrix, points, pairs: int, seed: int,
                        normalize: bool = True) -> DistortionSummary:
    """Squared-distance distortion ``| |P^T(u-v)|^2 / (g |u-v|^2) - 1 |`` over random pairs.

    ``g`` is :func:`expected_gain` (the usual Johnson-Lindenstrauss rescaling)
    or 1 when ``normalize`` is False. Pairs ``(i, j)`` with ``i != j`` are
    drawn from ``SeededRng(seed)``; zero-distance pairs are skipped and listed
    in the summary.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != proj.d_in:
        raise ValueError(f"points must be an (n, {proj.d_in}) array, got {pts.shape}")
    n = pts.shape[0]
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    if n < 2:
        raise ValueError("need at least two points")
    rng = SeededRng(seed)
    i = (rng.uniform(pairs) * n).astype(np.int64)
    j = (rng.uniform(pairs) * (n - 1)).astype(np.int64)
    j = np.where(j >= i, j + 1, j)
    diff = pts[i] - pts[j]
    orig = np.einsum("ij,ij->i", diff, diff)
    keep = orig > 0.0
    skipped = [(int(a), int(b)) for a, b in zip(i[~keep], j[~keep])]
    if not keep.any():
        return DistortionSummary(float("nan"), float("nan"), 0, skipped)
    proj_diff = diff[keep] @ proj.p
    gain = expected_gain(proj) if normalize else 1.0
    ratio = np.einsum("ij,ij->i", proj_diff, proj_diff) / (gain * orig[keep])
    dist = np.abs(ratio - 1.0)
    return DistortionSummary(float(dist.max()), float(dist.mean()), int(keep.sum()), skipped)
