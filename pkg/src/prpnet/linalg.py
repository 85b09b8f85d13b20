"""Dense float64 linear algebra and a portable seeded random number generator.

Matrices and vectors are plain ``numpy.ndarray`` objects (float64, C order).
The helpers here add shape checking with readable errors on top of numpy and
provide the pieces numpy does not pin down across versions: a fixed
counter-based generator (SplitMix64), a Box-Muller normal transform and a
Householder QR with a deterministic sign convention.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_POW_M53 = 2.0 ** -53


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class RankDeficientError(ValueError):
    def __init__(self, column: int, message: str):
        super().__init__(message)
        self.column = column


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def as_vector(v) -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got shape {x.shape}")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}: "
            f"inner dimensions {a.shape[1]} and {b.shape[0]} differ"
        )
    return a @ b


def matvec_transposed(p, x) -> np.ndarray:
    """Return ``P^T x`` without forming the transpose.

    Accepts a single vector of length ``p.rows`` or a batch with one sample
    per row; for a batch the result is ``X @ P``.
    """
    p = as_matrix(p)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.shape[0]:
        raise ShapeError(f"input length {x.shape[-1]} does not match {p.shape[0]} rows of P")
    return x @ p


def elementwise_mul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product of shapes {a.shape} and {b.shape}")
    return a * b


def householder_qr(g) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of a tall matrix by Householder reflections.

    Returns ``(Q, R)`` with ``Q`` of shape (m, n) having orthonormal columns
    and ``R`` upper triangular with a nonnegative diagonal.
    """
    a = np.array(as_matrix(g), dtype=np.float64, copy=True)
    m, n = a.shape
    if m < n:
        raise ShapeError(f"QR needs rows >= cols, got {m}x{n}")
    vs = []
    for k in range(n):
        x = a[k:, k]
        norm_x = np.sqrt(x @ x)
        v = x.copy()
        if norm_x == 0.0:
            vs.append(None)
            continue
        # reflect onto -sign(x0)*|x| e1 to avoid cancellation
        alpha = -norm_x if x[0] >= 0 else norm_x
        v[0] -= alpha
        vnorm = np.sqrt(v @ v)
        if vnorm == 0.0:
            vs.append(None)
            continue
        v /= vnorm
        a[k:, k:] -= 2.0 * np.outer(v, v @ a[k:, k:])
        vs.append(v)
    r = np.triu(a[:n, :])
    q = np.zeros((m, n))
    q[:n, :n] = np.eye(n)
    for k in range(n - 1, -1, -1):
        v = vs[k]
        if v is None:
            continue
        q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def qr_orthonormal_columns(g, rtol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis for the column span of ``g`` (nonnegative R diagonal)."""
    q, r = householder_qr(g)
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    bad = np.flatnonzero(diag <= rtol * scale) if scale > 0 else np.arange(diag.size)
    if bad.size:
        col = int(bad[0])
        raise RankDeficientError(
            col, f"matrix is rank deficient: column {col} is linearly dependent on earlier columns"
        )
    return q


def splitmix64(x: int) -> int:
    """SplitMix64 output function applied to a 64-bit integer."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Hash a master seed and integer keys into an independent 64-bit seed.

    ``h = splitmix64(master)``, then for every key ``h = splitmix64(h ^ splitmix64(key + 1))``.
    """
    h = splitmix64(int(master) & MASK64)
    for key in keys:
        h = splitmix64(h ^ splitmix64((int(key) + 1) & MASK64))
    return h


class SeededRng:
    """SplitMix64 generator, counter based so blocks of draws vectorize.

    Output ``i`` (0-based) is ``splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15)``
    with wrapping 64-bit arithmetic, which is the reference SplitMix64
    sequence. The stream is identical on every platform.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be nonnegative")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + idx * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) from the top 53 bits of each output."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def uniform_open(self, n: int) -> np.ndarray:
        """``n`` doubles in (0, 1]."""
        return ((self.next_u64(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_M53

    def standard_normal(self, n: int) -> np.ndarray:
        return rng_standard_normal(self, n)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")


def rng_standard_normal(rng: SeededRng, n: int) -> np.ndarray:
    """Box-Muller on pairs of uniforms; the sine half of a trailing pair is dropped.

    Pair ``k`` uses outputs ``2k`` (radius, mapped to (0, 1]) and ``2k + 1``
    (angle, mapped to [0, 1)).
    """
    if n <= 0:
        raise ValueError(f"need a positive sample count, got {n}")
    pairs = (n + 1) // 2
    raw = rng.next_u64(2 * pairs)
    u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_M53
    u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(theta)
    out[1::2] = radius * np.sin(theta)
    return out[:n]


def checksum64(a: np.ndarray) -> str:
    """BLAKE2b-64 of the little-endian float64 row-major bytes, as 16 hex digits."""
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return hashlib.blake2b(data, digest_size=8).hexdigest()
