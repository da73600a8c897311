import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxyplan.distributions import (
    D_MAX, DISTANCE_SUPPORT, N_BINS, OVERFLOW, VALUE_SUPPORT, Histogram, expectation,
    finite_distance_batch, project, project_batch, shift_distances, transplant_discount,
)


def dist_hist(mass: dict) -> Histogram:
    p = np.zeros(N_BINS)
    for d, w in mass.items():
        p[OVERFLOW if d == "overflow" else d - 1] = w
    return Histogram(DISTANCE_SUPPORT, p)


def test_supports():
    assert len(VALUE_SUPPORT) == len(DISTANCE_SUPPORT) == 16
    assert VALUE_SUPPORT[0] == 0 and VALUE_SUPPORT[-1] == 1
    assert list(DISTANCE_SUPPORT[:15]) == list(range(1, 16)) and np.isinf(DISTANCE_SUPPORT[OVERFLOW])


def test_histogram_validation():
    with pytest.raises(ValueError):
        Histogram(VALUE_SUPPORT, np.full(16, 0.1))
    with pytest.raises(ValueError):
        Histogram(VALUE_SUPPORT[::-1], np.full(16, 1 / 16))
    with pytest.raises(ValueError):
        Histogram(VALUE_SUPPORT, np.r_[-0.5, 1.5, np.zeros(14)])


def test_project_on_bin_center():
    h = project([VALUE_SUPPORT[5]], [1.0], VALUE_SUPPORT)
    assert h.probs[5] == pytest.approx(1.0)


def test_project_midpoint_splits_evenly():
    mid = 0.5 * (VALUE_SUPPORT[3] + VALUE_SUPPORT[4])
    h = project([mid], [1.0], VALUE_SUPPORT)
    assert h.probs[3] == pytest.approx(0.5) and h.probs[4] == pytest.approx(0.5)


def test_project_clamps_outside():
    h = project([-3.0, 7.0], [0.25, 0.75], VALUE_SUPPORT)
    assert h.probs[0] == pytest.approx(0.25) and h.probs[-1] == pytest.approx(0.75)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.5, 1.5), st.floats(0.01, 1.0)), min_size=1, max_size=20))
def test_project_preserves_mass_and_clamped_mean(atoms):
    x = np.array([a for a, _ in atoms])
    p = np.array([w for _, w in atoms])
    p /= p.sum()
    h = project(x, p, VALUE_SUPPORT)
    assert h.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(h.probs >= 0)
    assert h.probs @ VALUE_SUPPORT == pytest.approx(np.clip(x, 0, 1) @ p, abs=1e-6)


def test_project_batch_rows_independent():
    atoms = np.array([[0.1, 0.2], [0.9, 0.95]])
    probs = np.array([[0.5, 0.5], [1.0, 0.0]])
    out = project_batch(atoms, probs, VALUE_SUPPORT)
    for i in range(2):
        assert np.allclose(out[i], project(atoms[i], probs[i], VALUE_SUPPORT).probs)


@pytest.mark.parametrize("d", range(1, 16))
def test_transplant_point_mass_exact(d):
    assert abs(transplant_discount(dist_hist({d: 1.0}), 0.99) - 0.99 ** d) <= 1e-12


def test_transplant_examples():
    assert transplant_discount(dist_hist({4: 1.0}), 0.99) == pytest.approx(0.960596, abs=1e-6)
    jensen = transplant_discount(dist_hist({1: 0.5, 3: 0.5}), 0.9)
    assert abs(jensen - 0.8145) <= 1e-12
    assert abs(0.9 ** expectation(dist_hist({1: 0.5, 3: 0.5})) - 0.81) <= 1e-12
    assert jensen != 0.81
    assert transplant_discount(dist_hist({"overflow": 1.0}), 0.99) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=16, max_size=16), st.integers(0, 14), st.floats(0.5, 0.999))
def test_transplant_monotone_under_shift_right(w, b, gamma):
    p = np.array(w) + 1e-3
    p /= p.sum()
    q = p.copy()
    moved = q[b] / 2
    q[b] -= moved
    q[b + 1] += moved  # first-order dominance: mass pushed to a longer distance
    hp, hq = Histogram(DISTANCE_SUPPORT, p), Histogram(DISTANCE_SUPPORT, q)
    assert transplant_discount(hq, gamma) <= transplant_discount(hp, gamma) + 1e-15


def test_expectation_examples(rng):
    assert expectation(Histogram.point_mass(VALUE_SUPPORT, VALUE_SUPPORT[7])) == pytest.approx(VALUE_SUPPORT[7])
    assert expectation(dist_hist({1: 0.25, 2: 0.25, 3: 0.25, 4: 0.25})) == pytest.approx(2.5)
    for _ in range(20):
        p = rng.dirichlet(np.ones(16))
        assert expectation(Histogram(VALUE_SUPPORT, p)) == pytest.approx(float(sum(p * VALUE_SUPPORT)))


def test_expectation_overflow_handling():
    h = dist_hist({2: 0.5, "overflow": 0.5})
    assert np.isinf(expectation(h))
    assert expectation(h, overflow=D_MAX) == pytest.approx(8.5)
    assert finite_distance_batch(h.probs) == pytest.approx(8.5)
    assert finite_distance_batch(h.probs, 30.0) == pytest.approx(16.0)


def test_shift_distances_folds_into_overflow():
    p = np.zeros(16)
    p[0], p[14], p[15] = 0.5, 0.25, 0.25
    out = shift_distances(p)
    assert out[1] == 0.5 and out[OVERFLOW] == 0.5 and out.sum() == pytest.approx(1.0)
