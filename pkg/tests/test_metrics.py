import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gemid.errors import GemidError
from gemid.metrics import (ConfusionMatrix, ScoreReport, accuracy, kappa,
                           macro_f1, per_class_scores, time_inference)


def cm(counts, classes=None):
    counts = np.asarray(counts, dtype=np.int64)
    classes = classes or tuple(f"c{i}" for i in range(counts.shape[0]))
    return ConfusionMatrix(tuple(classes), counts)


def test_kappa_hand_case():
    assert kappa(cm([[40, 10], [20, 30]])) == pytest.approx(0.4, abs=1e-9)


def test_kappa_perfect_and_empty():
    assert kappa(cm([[7, 0], [0, 9]])) == 1.0
    with pytest.raises(GemidError):
        kappa(cm([[0, 0], [0, 0]]))


def test_kappa_degenerate_single_class():
    assert kappa(cm([[10, 0], [0, 0]])) == 0.0


def test_kappa_chance_level():
    rng = np.random.default_rng(0)
    true = rng.integers(0, 4, 20000)
    pred = rng.integers(0, 4, 20000)
    counts = np.zeros((4, 4), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    assert abs(kappa(cm(counts))) < 0.02


def test_macro_f1_hand_case():
    # both classes have support; the never-predicted one contributes F1=0
    assert macro_f1(cm([[5, 0], [5, 0]])) == pytest.approx(1 / 3, abs=1e-9)


def test_macro_f1_perfect():
    assert macro_f1(cm([[3, 0], [0, 4]])) == 1.0


def test_macro_f1_class_permutation_invariant():
    counts = np.array([[5, 1, 0], [2, 7, 1], [0, 3, 9]])
    base = macro_f1(cm(counts))
    perm = [2, 0, 1]
    permuted = counts[np.ix_(perm, perm)]
    assert macro_f1(cm(permuted)) == pytest.approx(base, abs=1e-12)


def test_macro_f1_zero_support_excluded_by_default():
    counts = [[5, 0, 0], [1, 4, 0], [0, 0, 0]]
    without = macro_f1(cm(counts))
    with_zero = macro_f1(cm(counts), include_zero_support=True)
    assert without > with_zero
    per = per_class_scores(cm(counts))
    assert per["c2"]["support"] == 0


def test_accuracy_is_trace_over_total():
    counts = [[5, 2], [3, 10]]
    assert accuracy(cm(counts)) == pytest.approx(15 / 20, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31))
def test_kappa_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    counts = rng.integers(0, 50, size=(k, k))
    counts[0, 0] += 1  # non-empty
    perm = rng.permutation(k)
    permuted = counts[np.ix_(perm, perm)]
    assert kappa(cm(permuted)) == pytest.approx(kappa(cm(counts)), abs=1e-9)


def test_zero_denominator_conventions():
    per = per_class_scores(cm([[0, 5], [0, 5]]))
    assert per["c0"] == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "support": 5}


class _SleepModel:
    def __init__(self, cost=0.0):
        self.cost = cost

    def predict(self, X):
        import time

        if self.cost:
            time.sleep(self.cost)
        return [0] * len(X)


def test_time_inference_empty_errors():
    with pytest.raises(GemidError):
        time_inference(_SleepModel(), [], repetitions=3)


def test_time_inference_reports_median_and_reps():
    out = time_inference(_SleepModel(0.001), list(range(100)), repetitions=3)
    assert out["repetitions"] == 3
    assert out["seconds_per_1k_median"] > 0


def test_score_report_serializable():
    report = ScoreReport.from_matrix(cm([[5, 1], [2, 9]]))
    doc = report.to_dict()
    assert set(doc) == {"accuracy", "kappa", "macro_f1", "per_class"}
