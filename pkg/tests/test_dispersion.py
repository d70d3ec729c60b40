import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdeform.dispersion import (
    DispersionSpec,
    certify_bounds,
    certify_growth,
    divergence_v,
    eval_omega,
    grad_omega,
    grad_omega_xi,
    jacobian_v,
    omega_xi,
    vector_field,
)
from specdeform.errors import StripViolation


def test_quartic_at_zero(quartic):
    assert eval_omega(quartic, 0.0) == 0.0


def test_even_polynomial_direct(ksq):
    assert eval_omega(ksq, 2.0) == pytest.approx(4.0)


def test_relativistic_principal_branch(relativistic):
    # independent high-precision oracle for (1 + k^2)^{1/2} at k = 0.3i
    expected = complex(mpmath.power(1 + mpmath.mpc(0, 0.3) ** 2, mpmath.mpf(1) / 2))
    got = complex(eval_omega(relativistic, 0.3j))
    assert got == pytest.approx(expected, abs=1e-14)


def test_relativistic_strip_condition():
    with pytest.raises(ValueError):
        DispersionSpec("relativistic", exponent=0.5, strip_radius=0.6)


def test_strip_violation(ksq):
    with pytest.raises(StripViolation):
        eval_omega(ksq, 0.0 + 1.1j)


def test_omega_xi_values(ksq):
    assert omega_xi(ksq, ksq, 0.0, 1.0) == pytest.approx(2.0)
    assert omega_xi(ksq, ksq, 2.0, 1.0) == pytest.approx(2.0)  # (2-1)^2 + 1
    # critical value xi^2/2 at k = xi/2
    assert omega_xi(ksq, ksq, 1.0, 0.5) == pytest.approx(0.5)


def test_grad_closed_form(ksq, quartic, zero_disp):
    xi, k = 1.3, -0.4
    assert grad_omega_xi(ksq, ksq, xi, k) == pytest.approx(4 * k - 2 * xi)
    assert grad_omega_xi(zero_disp, quartic, 0.0, 1.0) == pytest.approx(4.0)
    # critical point of the fibered symbol
    assert grad_omega_xi(ksq, ksq, 0.8, 0.4) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("family", ["ksq", "quartic", "relativistic"])
def test_gradient_matches_finite_differences(family, ksq, quartic, relativistic, rng):
    spec = {"ksq": ksq, "quartic": quartic, "relativistic": relativistic}[family]
    h = 1e-5
    pts = rng.uniform(-3.0, 3.0, 100)
    g = np.asarray(grad_omega(spec, pts.astype(complex)))
    fd = (np.asarray(eval_omega(spec, pts + h)) - np.asarray(eval_omega(spec, pts - h))) / (2 * h)
    scale = np.maximum(np.abs(fd), 1.0)
    assert np.max(np.abs(g - fd) / scale) <= 1e-7


def test_vector_field_values(ksq):
    assert vector_field(ksq, ksq, 0.0, 0.0) == pytest.approx(0.0)
    k = np.linspace(-3, 3, 13)
    v = np.asarray(vector_field(ksq, ksq, 0.0, k.astype(complex)))
    assert np.allclose(v, 4 * k * np.exp(-(k**2)), atol=1e-14)


def test_divergence_values(ksq):
    assert divergence_v(ksq, ksq, 0.0, 0.0) == pytest.approx(4.0)
    assert divergence_v(ksq, ksq, 0.0, 1 / np.sqrt(2)) == pytest.approx(0.0, abs=1e-14)


def test_divergence_matches_finite_differences(ksq, quartic, rng):
    h = 1e-5
    for s1, s2 in ((ksq, ksq), (ksq, quartic)):
        pts = rng.uniform(-2.0, 2.0, 50)
        xi = 0.7
        div = np.asarray(divergence_v(s1, s2, xi, pts.astype(complex)))
        fd = (np.asarray(vector_field(s1, s2, xi, pts + h))
              - np.asarray(vector_field(s1, s2, xi, pts - h))) / (2 * h)
        assert np.max(np.abs(div - fd) / np.maximum(np.abs(fd), 1.0)) <= 1e-8


def test_jacobian_consistent_with_divergence(ksq, rng):
    pts = rng.uniform(-2, 2, 20)
    dv = jacobian_v(ksq, ksq, 0.3, pts.astype(complex))
    div = np.asarray(divergence_v(ksq, ksq, 0.3, pts.astype(complex)))
    assert np.allclose(np.trace(dv, axis1=-2, axis2=-1), div)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-4, 4), y=st.floats(-0.9, 0.9))
def test_schwarz_reflection(x, y):
    spec = DispersionSpec("even_polynomial", coefficients=(0.0, 1.0, 0.25))
    k = complex(x, y * 2 * spec.strip_radius * 0.98)
    assert complex(eval_omega(spec, np.conj(k))) == pytest.approx(
        np.conj(complex(eval_omega(spec, k))), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-6, 6))
def test_reality_on_axis(x):
    spec = DispersionSpec("quartic", coefficients=(0.5, -1.0))
    assert complex(eval_omega(spec, complex(x))).imag == 0.0


def test_growth_certificate(ksq, quartic, relativistic):
    for spec in (ksq, quartic, relativistic):
        c = certify_growth(spec, k_extent=8.0, resolution=0.05)
        s = spec.growth_exponent
        kk = np.linspace(-7.5, 7.5, 301) + 0.2j
        jap = (1.0 + np.abs(kk) ** 2) ** (s / 2.0)
        w = np.abs(np.asarray(eval_omega(spec, kk)))
        g = np.abs(np.asarray(grad_omega(spec, kk)))
        assert np.all(w <= c * jap + 1e-12)
        assert np.all(g <= c * jap + 1e-12)
        assert np.all(w >= jap / c - c - 1e-12)


def test_certify_bounds_reference(ksq):
    b = certify_bounds(ksq, ksq, (0.0, 0.0), strip=0.0, resolution=0.01)
    # sup over the real line of |4k e^{-k^2}| at k = 1/sqrt(2)
    assert b.raw_c_omega == pytest.approx(4 / np.sqrt(2) * np.exp(-0.5), abs=1e-4)
    assert b.c_omega >= 1.7155


def test_certify_bounds_zero_field(zero_disp):
    b = certify_bounds(zero_disp, zero_disp, (-1.0, 1.0), strip=0.2, resolution=0.1)
    assert b.c_omega == 0.0
    assert b.c_omega_prime == 0.0


def test_bounds_monotone_in_strip(ksq):
    b1 = certify_bounds(ksq, ksq, (-1.0, 1.0), strip=0.1, resolution=0.05)
    b2 = certify_bounds(ksq, ksq, (-1.0, 1.0), strip=0.25, resolution=0.05)
    assert b2.c_omega >= b1.c_omega
    assert b2.c_omega_prime >= b1.c_omega_prime


def test_bounds_reject_oversized_strip(ksq):
    with pytest.raises(StripViolation):
        certify_bounds(ksq, ksq, (-1.0, 1.0), strip=0.6, resolution=0.1)
