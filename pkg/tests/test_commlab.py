import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdeform.commlab import (
    MatrixPair,
    conjugate_series,
    contour_derivatives,
    exponential_conjugation,
    gaussian_regularize,
    ladder,
    pauli_pair,
    random_pair,
    sector_bound_finite,
    w_theta_bound,
)
from specdeform.errors import RadiusExceeded


class TestLadder:
    def test_identity_commutes(self):
        pair = MatrixPair(h=np.diag([1.0, 2.0, 3.0]).astype(complex),
                          a=np.eye(3, dtype=complex))
        lad = ladder(pair, 5)
        for k in range(1, 6):
            assert np.max(np.abs(lad.ad[k])) == 0.0

    def test_commuting_pair(self):
        h = np.diag([1.0, 2.0, 3.0]).astype(complex)
        a = np.diag([5.0, -1.0, 0.5]).astype(complex)
        lad = ladder(MatrixPair(h=h, a=a), 4)
        for k in range(1, 5):
            assert np.max(np.abs(lad.ad[k])) == 0.0

    def test_pauli_hand_values(self):
        # oracle by direct multiplication: ad_1 = sx sz - sz sx = -2i sy,
        # ad_2 = [ad_1, sz] = 4 sx; norms follow the 2^k pattern
        pair = pauli_pair()
        lad = ladder(pair, 6)
        sy = np.array([[0, -1j], [1j, 0]])
        sx = pair.h
        assert np.array_equal(lad.ad[1], sx @ pair.a - pair.a @ sx)
        assert np.max(np.abs(lad.ad[1] - (-2j) * sy)) == 0.0
        assert np.max(np.abs(lad.ad[2] - 4 * sx)) == 0.0
        for k in range(5):
            assert np.linalg.norm(lad.ad[k], 2) == pytest.approx(2.0**k)

    def test_alternating_hermiticity(self, rng):
        pair = random_pair(20, 11)
        lad = ladder(pair, 6)
        for k, ad in enumerate(lad.ad):
            m = (1j**k) * ad
            assert np.max(np.abs(m - m.conj().T)) <= 1e-12 * np.linalg.norm(m, 2)


class TestSeries:
    def test_theta_zero(self):
        pair = random_pair(15, 2)
        total, tail = conjugate_series(pair, 0.0, 10)
        assert np.array_equal(total, pair.h)

    def test_pauli_vs_exponential_oracle(self):
        pair = pauli_pair()
        lad = ladder(pair, 40)
        theta = 0.1
        series, _ = conjugate_series(pair, theta, 40, lad)
        oracle = exponential_conjugation(pair, theta)
        assert np.max(np.abs(series - oracle)) <= 1e-12

    def test_random_pair_within_radius(self):
        pair = random_pair(40, 5)
        lad = ladder(pair, 60)
        theta = 0.5 * lad.radius * (1 + 1j) / np.sqrt(2)
        series, tail = conjugate_series(pair, theta, 60, lad)
        oracle = exponential_conjugation(pair, theta)
        rel = np.linalg.norm(series - oracle, 2) / np.linalg.norm(oracle, 2)
        assert rel <= 1e-10
        assert np.linalg.norm(series - oracle, 2) <= tail + 1e-10

    def test_radius_guard(self):
        pair = random_pair(10, 1)
        lad = ladder(pair, 30)
        with pytest.raises(RadiusExceeded):
            conjugate_series(pair, 1.1 * lad.radius, 30, lad)

    def test_adjoint_identity(self):
        pair = random_pair(30, 9)
        lad = ladder(pair, 50)
        theta = 0.4j * lad.radius
        s1, _ = conjugate_series(pair, theta, 50, lad)
        s2, _ = conjugate_series(pair, np.conj(theta), 50, lad)
        assert np.max(np.abs(s1.conj().T - s2)) <= 1e-12 * np.linalg.norm(s1, 2)

    def test_graph_norm_equivalence(self, rng):
        pair = random_pair(40, 21)
        lad = ladder(pair, 60)
        theta = 0.9 * lad.radius
        h_theta = exponential_conjugation(pair, theta)
        eye = np.eye(pair.n)
        for _ in range(20):
            psi = rng.standard_normal(pair.n) + 1j * rng.standard_normal(pair.n)
            psi /= np.linalg.norm(psi)
            num = np.linalg.norm((h_theta + 1j * eye) @ psi)
            den = np.linalg.norm((pair.h + 1j * eye) @ psi)
            assert 0.5 - 1e-8 <= num / den <= 2.0 + 1e-8


class TestWThetaBound:
    def test_zero(self):
        pair = random_pair(20, 3)
        out = w_theta_bound(pair, 0.0)
        assert out["observed"] == 0.0

    def test_pauli(self):
        pair = pauli_pair()
        out = w_theta_bound(pair, 0.1)
        assert out["passed"]
        assert 0 < out["observed"] <= out["bound"]

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_bound_tightness_batch(self, seed):
        pair = random_pair(25, seed)
        lad = ladder(pair, 40)
        out = w_theta_bound(pair, 0.5 * lad.radius, lad=lad)
        assert out["passed"]
        assert 0 < out["observed"] / out["bound"] <= 1.0


class TestSectorFinite:
    def test_theta_zero(self):
        pair = random_pair(20, 7)
        lad = ladder(pair, 40)
        out = sector_bound_finite(pair, 0.0, lad.growth_constant)
        assert out["violations"] == 0

    def test_seeded_pass_and_negative_control(self):
        pair = random_pair(30, 13)
        lad = ladder(pair, 50)
        theta = 0.9j * lad.radius
        assert sector_bound_finite(pair, theta, lad.growth_constant)["violations"] == 0
        # the exact conjugation is a similarity, so its spectrum stays real
        # and first-order imaginary motion cancels by the virial identity;
        # the control shrinks C below the truncation floor of a low-order
        # partial sum, whose eigenvalues move off the axis at second order
        truncated, _ = conjugate_series(pair, theta, 1, lad)
        assert sector_bound_finite(pair, theta, lad.growth_constant,
                                   matrix=truncated)["violations"] == 0
        wt = np.linalg.eigvals(truncated)
        j = np.argmax(np.abs(wt.imag))
        floor = abs(wt[j].imag)
        assert floor > 1e-6
        # bound at the widest eigenvalue now sits at half its |Im|
        shrunk = floor / (8.0 * abs(theta) * (abs(wt[j].real) + 1.0))
        assert sector_bound_finite(pair, theta, shrunk,
                                   matrix=truncated)["violations"] > 0


class TestRegularize:
    def test_diagonal_calculus(self):
        a = np.diag([1.0, -2.0, 0.5]).astype(complex)
        pair = MatrixPair(h=np.eye(3, dtype=complex), a=a)
        psi = np.array([1.0, 2.0, -1.0], dtype=complex)
        m, theta = 7, 0.3
        got = gaussian_regularize(pair, psi, m, theta)
        diag = np.exp(-np.diag(a) ** 2 / (2 * m) + 1j * theta * np.diag(a))
        assert np.allclose(got, diag * psi, atol=1e-14)

    def test_convergence_to_group_action(self, rng):
        pair = random_pair(30, 17)
        psi = rng.standard_normal(30).astype(complex)
        psi /= np.linalg.norm(psi)
        w, u = np.linalg.eigh(pair.a)
        target = u @ (np.exp(1j * 0.4 * w) * (u.conj().T @ psi))
        ms = (100, 1000, 10000)
        errs = [np.linalg.norm(gaussian_regularize(pair, psi, m, 0.4) - target)
                for m in ms]
        assert errs[0] > errs[1] > errs[2]
        # slope vs 1/m close to linear on log-log
        slope = np.polyfit(np.log(ms), np.log(errs), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.1)


def test_contour_derivative_consistency():
    # the lab oracle is entire in theta, so the Cauchy radius may exceed the
    # abstract series radius; the coefficients do not depend on it, and the
    # larger contour tames the r^{-k} roundoff amplification
    pair = random_pair(40, 7)
    lad = ladder(pair, 60)
    ders = contour_derivatives(pair, 6, 2.0 * lad.radius, nodes=64)
    for k in range(7):
        target = (1j**k) * ((-1.0) ** k) * lad.ad[k]
        scale = max(np.linalg.norm(target, 2), 1.0)
        assert np.linalg.norm(ders[k] - target, 2) / scale <= 1e-8
