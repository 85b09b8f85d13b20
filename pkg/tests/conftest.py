import numpy as np
import pytest

from prpnet.linalg import SeededRng, rng_standard_normal


def gauss(seed, *shape):
    n = int(np.prod(shape))
    return rng_standard_normal(SeededRng(seed), n).reshape(shape)


def central_diff(f, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def data_dir():
    import os
    from pathlib import Path

    root = Path(os.environ.get("PRP_DATA_DIR", "/root/data"))
    if not (root / "mnist").exists():
        pytest.skip(f"MNIST IDX files not found under {root}")
    return root
