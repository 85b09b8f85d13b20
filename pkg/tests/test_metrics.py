from fractions import Fraction

import numpy as np
import pytest

from prpnet.metrics import (
    MetricReport,
    accuracy,
    bes,
    chance_baseline,
    macro_f1,
    regression_metrics,
)

N_MNIST, D_MNIST = 60_000, 784
N_CIFAR, D_CIFAR = 50_000, 3072


def brute_macro_f1(pred, true, n_classes):
    scores = []
    for c in range(n_classes):
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        if tp == 0:
            scores.append(Fraction(0))
            continue
        prec = Fraction(tp, tp + fp)
        rec = Fraction(tp, tp + fn)
        scores.append(2 * prec * rec / (prec + rec))
    return sum(scores) / n_classes


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_half(self):
        assert accuracy([0, 1, 0, 1], [0, 1, 1, 0]) == 0.5

    def test_uniform_random_near_chance(self):
        rng = np.random.default_rng(0)
        true = np.repeat(np.arange(10), 1000)
        assert abs(accuracy(rng.integers(0, 10, 10_000), true) - 0.1) <= 0.02

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy([], [])


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2], [0, 1, 2], 3) == 1.0

    def test_hand_two_class(self):
        assert macro_f1([0, 0], [0, 1], 2) == pytest.approx(1 / 3, abs=1e-15)

    def test_absent_class_counts_as_zero(self):
        assert macro_f1([0, 1], [0, 1], 3) == pytest.approx(2 / 3, abs=1e-15)

    @pytest.mark.parametrize("seed", range(200))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 6))
        n = int(rng.integers(1, 30))
        pred = rng.integers(0, k, n).tolist()
        true = rng.integers(0, k, n).tolist()
        assert macro_f1(pred, true, k) == pytest.approx(float(brute_macro_f1(pred, true, k)), abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            macro_f1([0, 3], [0, 1], 3)


class TestRegression:
    def test_perfect(self):
        assert regression_metrics([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == (0.0, 0.0, 1.0)

    def test_mean_prediction(self):
        target = np.array([1.0, 2.0, 6.0])
        _, _, r2 = regression_metrics(np.full(3, target.mean()), target)
        assert r2 == pytest.approx(0.0, abs=1e-15)

    def test_hand_example(self):
        mse, mae, r2 = regression_metrics([1.0, 2.0], [2.0, 4.0])
        assert (mse, mae, r2) == (2.5, 1.5, -1.5)

    def test_constant_target(self):
        with pytest.raises(ValueError, match="undefined"):
            regression_metrics([1.0, 2.0], [3.0, 3.0])

    @pytest.mark.parametrize("seed", range(20))
    def test_jensen(self, seed):
        rng = np.random.default_rng(seed)
        p, t = rng.normal(size=50), rng.normal(size=50)
        mse, mae, _ = regression_metrics(p, t)
        assert mae ** 2 <= mse + 1e-15


class TestBES:
    @pytest.mark.parametrize("acc,params,n,d,expected", [
        (0.9779, 535_818, N_MNIST, D_MNIST, 1.18),
        (0.5578, 6_990, N_MNIST, D_MNIST, 0.91),
        (0.9166, 3_108, N_MNIST, D_MNIST, 1.79),
        (0.8933, 535_818, N_MNIST, D_MNIST, 1.06),
        (0.8259, 6_990, N_MNIST, D_MNIST, 1.45),
        (0.8378, 3_108, N_MNIST, D_MNIST, 1.62),
        (0.8621, 1_470_890, N_CIFAR, D_CIFAR, 1.01),
        (0.8740, 292_276, N_CIFAR, D_CIFAR, 1.16),
    ])
    def test_published_rows(self, acc, params, n, d, expected):
        assert abs(bes(acc, chance_baseline(10), n, d, params) - expected) <= 0.01

    def test_mnist_rows_tight(self):
        assert abs(bes(0.9779, 0.1, N_MNIST, D_MNIST, 535_818) - 1.18) <= 0.005
        assert abs(bes(0.9166, 0.1, N_MNIST, D_MNIST, 3_108) - 1.79) <= 0.005

    def test_chance_gives_zero(self):
        assert bes(0.1, 0.1, 100, 10, 500) == 0.0

    def test_monotonicity(self):
        base = bes(0.8, 0.1, 1000, 10, 500)
        assert bes(0.81, 0.1, 1000, 10, 500) > base
        assert bes(0.8, 0.1, 1000, 10, 501) < base

    def test_single_parameter_rejected(self):
        with pytest.raises(ValueError):
            bes(0.9, 0.1, 100, 10, 1)


def test_report_only_populated_fields():
    assert MetricReport(accuracy=0.5, macro_f1=0.4).as_dict() == {"accuracy": 0.5, "macro_f1": 0.4}
