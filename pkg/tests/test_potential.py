import numpy as np
import pytest

from specdeform.errors import GridTooCoarse, StripViolation
from specdeform.potential import (
    PotentialSpec,
    bump_profile,
    certify_decay,
    construct_embedded,
    embedded_residual,
    evaluate,
    fourier_dk,
    fourier_factorized,
    fourier_transform,
    load_constructed,
    quadrature_rule,
    save_constructed,
    _leggauss,
)


def test_gaussian_closed_form():
    # V(x) = e^{-x^2/2} has Vhat(k) = e^{-k^2/2} in the unitary convention
    spec = PotentialSpec("gaussian", amplitude=1.0, width=0.5)
    k = np.linspace(-6, 6, 25)
    assert np.allclose(fourier_transform(spec, k.astype(complex)),
                       np.exp(-(k**2) / 2), atol=1e-15)


def test_gaussian_quadrature_cross_check(rng):
    closed = PotentialSpec("gaussian", amplitude=0.7, width=0.5)
    quad = PotentialSpec("gaussian", amplitude=0.7, width=0.5,
                         fourier_method="quadrature")
    k = rng.uniform(-8, 8, 100)
    a = fourier_transform(closed, k.astype(complex))
    b = fourier_transform(quad, k.astype(complex))
    assert np.max(np.abs(a - b)) <= 1e-10


def test_zero_potential():
    spec = PotentialSpec("gaussian", amplitude=0.0, width=0.5)
    assert spec.is_zero
    assert np.all(fourier_transform(spec, np.array([0.3 + 0.1j])) == 0.0)


def test_real_even_transform_real_even(rng):
    spec = PotentialSpec("bump", amplitude=1.3, support_radius=1.5)
    k = rng.uniform(-5, 5, 40)
    vhat = fourier_transform(spec, k.astype(complex))
    assert np.max(np.abs(vhat.imag)) <= 1e-15
    vhat_neg = fourier_transform(spec, -k.astype(complex))
    assert np.allclose(vhat, vhat_neg)


def test_reality_conjugate_symmetry(rng):
    spec = PotentialSpec("gaussian", amplitude=0.5, width=0.5, center=0.3)
    k = rng.uniform(-5, 5, 30)
    assert np.allclose(fourier_transform(spec, -k.astype(complex)),
                       np.conj(fourier_transform(spec, k.astype(complex))))


def test_transform_strip_guard():
    spec = PotentialSpec("bump", decay_rate=2.0)  # a' = 1
    with pytest.raises(StripViolation):
        fourier_transform(spec, np.array([0.0 + 1.5j]))


def test_fourier_dk_matches_finite_difference():
    spec = PotentialSpec("bump", amplitude=0.8, support_radius=1.0)
    for k in (0.3, 1.5 + 0.2j, -2.0 - 0.3j):
        h = 1e-6
        fd = (fourier_transform(spec, np.array([k + h]), check_strip=False)[0]
              - fourier_transform(spec, np.array([k - h]), check_strip=False)[0]) / (2 * h)
        got = fourier_dk(spec, np.array([k]), check_strip=False)[0]
        assert got == pytest.approx(fd, abs=1e-9)


def test_factorized_kernel_matches_direct(rng):
    spec = PotentialSpec("bump", amplitude=1.0, support_radius=2.0)
    left = rng.uniform(-3, 3, 8) + 0.02j * rng.standard_normal(8)
    right = rng.uniform(-3, 3, 6) + 0.02j * rng.standard_normal(6)
    direct = fourier_transform(spec, right[None, :] - left[:, None],
                               check_strip=False)
    assert np.max(np.abs(direct - fourier_factorized(spec, left, right))) <= 1e-13


def test_decay_certificate_zero():
    spec = PotentialSpec("gaussian", amplitude=0.0, width=0.5)
    assert certify_decay(spec).decay_constant == 0.0


def test_decay_certificate_holds_on_fresh_sample(rng):
    spec = PotentialSpec("gaussian", amplitude=1.0, width=0.5, a_prime=0.5,
                         smoothness_order=4)
    kernel = certify_decay(spec, seed=0)
    assert np.isfinite(kernel.decay_constant)
    fresh = rng.uniform(-40, 40, 1000) + 1j * rng.uniform(-0.5, 0.5, 1000) * 0.999
    vals = np.abs(fourier_transform(spec, fresh, check_strip=False))
    assert np.all(vals <= kernel.envelope(fresh) + 1e-15)


def test_decay_certificate_linearity():
    base = certify_decay(PotentialSpec("gaussian", amplitude=1.0, width=0.5))
    doubled = certify_decay(PotentialSpec("gaussian", amplitude=2.0, width=0.5))
    assert doubled.decay_constant == pytest.approx(2 * base.decay_constant)


def test_bump_profile_derivatives():
    t = np.linspace(-0.95, 0.95, 41)
    h = 1e-6
    d1 = (bump_profile(t + h) - bump_profile(t - h)) / (2 * h)
    assert np.max(np.abs(d1 - bump_profile(t, 1))) <= 1e-7
    d2 = (bump_profile(t + h, 1) - bump_profile(t - h, 1)) / (2 * h)
    assert np.max(np.abs(d2 - bump_profile(t, 2))) <= 1e-6
    assert np.all(bump_profile(np.array([1.0, -1.0, 2.0])) == 0.0)


class TestConstructEmbedded:
    def test_zero_source(self):
        f = PotentialSpec("bump", amplitude=0.0, support_radius=1.0)
        spec = construct_embedded(1.0, f)
        assert np.all(spec.values == 0.0)
        assert embedded_residual(spec) == 0.0

    def test_residual_contract(self, embedded_pot):
        assert embedded_residual(embedded_pot) <= 1e-6

    def test_support_containment(self, embedded_pot):
        x, v = embedded_pot.x_grid, embedded_pot.values
        assert np.all(v[np.abs(x) >= embedded_pot.support_radius] == 0.0)

    def test_u_positive_and_even(self, embedded_pot):
        assert np.min(embedded_pot.u_values) > 0.0
        assert embedded_pot.is_even

    def test_u_matches_green_function_oracle(self, embedded_pot):
        # independent route: u(x) = int e^{-sqrt(xi0)|x-y|}/(2 sqrt(xi0)) f(y) dy
        # with the integral split at the kink
        rho = embedded_pot.support_radius
        f = PotentialSpec("bump", amplitude=1.0, support_radius=rho)
        yq, wq = _leggauss(200)
        for xq in (0.0, 0.5, 1.2, 3.0, 8.0):
            total = 0.0
            for lo, hi in ((-rho, min(xq, rho)), (max(xq, -rho), rho)):
                if hi <= lo:
                    continue
                y = 0.5 * (hi - lo) * yq + 0.5 * (hi + lo)
                w = 0.5 * (hi - lo) * wq
                total += np.sum(np.exp(-np.abs(xq - y)) / 2.0 * evaluate(f, y) * w)
            ui = np.interp(xq, embedded_pot.x_grid, embedded_pot.u_values)
            assert ui == pytest.approx(total, abs=5e-9)

    def test_rejects_coarse_grid(self):
        f = PotentialSpec("bump", amplitude=1.0, support_radius=1.0)
        with pytest.raises(GridTooCoarse):
            construct_embedded(1.0, f, half_width=30.0, step=0.2)

    def test_quadrature_rule_covers_support(self, embedded_pot):
        x, w = quadrature_rule(embedded_pot)
        assert np.min(x) <= -embedded_pot.support_radius
        assert np.max(x) >= embedded_pot.support_radius
        assert np.all(w >= 0)


def test_persist_reload_bit_exact(embedded_pot, tmp_path):
    save_constructed(embedded_pot, tmp_path)
    back = load_constructed(tmp_path)
    assert np.array_equal(back.x_grid, embedded_pot.x_grid)
    assert np.array_equal(back.values, embedded_pot.values)
    assert np.array_equal(back.u_values, embedded_pot.u_values)
    assert back.xi0 == embedded_pot.xi0
