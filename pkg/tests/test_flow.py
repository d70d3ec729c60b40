import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdeform.dispersion import DispersionSpec, certify_bounds
from specdeform.errors import StripViolation
from specdeform.flow import (
    ComplexTime,
    build_flow_table,
    check_group_and_inverse,
    continue_complex,
    flow_table_from_csv,
    flow_table_to_csv,
    integrate_real,
    separation_lower_bound,
    variational_determinant,
)
from specdeform.grids import MomentumGrid


def test_equilibrium_stays_fixed(ksq):
    gamma, jac = integrate_real(ksq, ksq, 0.0, 0.0, 1.7)
    assert gamma == pytest.approx(0.0, abs=1e-12)


def test_fixed_point_jacobian(ksq):
    # div v = 4 at the fixed point, so J = e^{4 t}
    gamma, jac = integrate_real(ksq, ksq, 0.0, 0.0, 0.25)
    assert gamma == pytest.approx(0.0, abs=1e-12)
    assert jac == pytest.approx(np.e, rel=1e-10)


def test_fixed_point_complex(ksq):
    gamma, jac, arg = continue_complex(ksq, ksq, 0.0, 0.0, 0.1j)
    assert abs(gamma) <= 1e-12
    assert jac == pytest.approx(np.exp(0.4j), abs=1e-10)
    assert arg == pytest.approx(0.4, abs=1e-10)


def test_theta_zero_trivial(ksq):
    gamma, jac, arg = continue_complex(ksq, ksq, 0.3, 0.8, 0.0)
    assert gamma == pytest.approx(0.8)
    assert jac == 1.0 and arg == 0.0


def test_real_theta_agrees_with_integrate_real(ksq):
    g1, j1 = integrate_real(ksq, ksq, 0.2, 0.7, 0.3)
    g2, j2, arg = continue_complex(ksq, ksq, 0.2, 0.7, 0.3 + 0.0j)
    assert complex(g2) == pytest.approx(g1, abs=1e-11)
    assert j2 == pytest.approx(j1, rel=1e-10)
    assert arg == 0.0


@settings(max_examples=25, deadline=None)
@given(k=st.floats(-1, 1), t=st.floats(-1, 1))
def test_reversibility(k, t):
    spec = DispersionSpec("even_polynomial", coefficients=(0.0, 1.0))
    g1, j1 = integrate_real(spec, spec, 0.0, k, t)
    g2, j2 = integrate_real(spec, spec, 0.0, g1, -t)
    assert abs(g2 - k) <= 1e-10
    assert abs(j1 * j2 - 1.0) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(k=st.floats(-1, 1), t=st.floats(-1, 1), s=st.floats(-1, 1))
def test_group_law_and_j_inverse(k, t, s):
    spec = DispersionSpec("even_polynomial", coefficients=(0.0, 1.0))
    out = check_group_and_inverse(spec, spec, 0.2, k, t, s, tol=1e-12)
    assert out["dev_group"] <= 1e-9
    assert out["dev_jinv"] <= 1e-9


def test_trivial_group_law(ksq):
    out = check_group_and_inverse(ksq, ksq, 0.0, 0.4, 0.0, 0.0)
    assert out["dev_group"] == 0.0


def test_flow_table_invariants(ksq, ref_bounds, small_grid):
    table = build_flow_table(small_grid, ksq, ksq, 0.0, 0.1j, ref_bounds)
    m = table.margins
    assert m["move"]["observed"] <= ref_bounds.c_omega * 0.1
    assert m["im_gamma"]["observed"] <= ref_bounds.c_omega * 0.1
    assert m["jac_arg"]["observed"] <= ref_bounds.c_omega_prime * 0.1
    assert np.all(np.abs(table.jac) <= np.exp(ref_bounds.c_omega_prime * 0.1) + 1e-9)


def test_flow_table_zero_field(zero_disp, small_grid):
    bounds = certify_bounds(zero_disp, zero_disp, (-1.0, 1.0), strip=0.2,
                            resolution=0.1)
    table = build_flow_table(small_grid, zero_disp, zero_disp, 0.0, 0.1j, bounds)
    assert np.array_equal(table.gamma.real, small_grid.nodes())
    assert np.all(table.gamma.imag == 0.0)
    assert np.all(table.jac == 1.0)


def test_flow_table_reflection(ksq, ref_bounds, small_grid):
    t1 = build_flow_table(small_grid, ksq, ksq, 0.0, 0.07j, ref_bounds)
    t2 = build_flow_table(small_grid, ksq, ksq, 0.0, -0.07j, ref_bounds)
    assert np.array_equal(t2.gamma, np.conj(t1.gamma))
    assert np.array_equal(t2.jac, np.conj(t1.jac))


def test_equilibrium_nodes_under_any_theta(ksq, ref_bounds):
    grid = MomentumGrid(8.0, 101)
    table = build_flow_table(grid, ksq, ksq, 0.0, 0.05 + 0.08j, ref_bounds,
                             tol=1e-12)
    nodes = grid.nodes()[:, 0]
    still = np.abs(np.asarray(
        [4 * k * np.exp(-k**2) for k in nodes])) < 1e-14
    assert np.all(np.abs(table.gamma[still, 0] - nodes[still]) < 1e-11)


def test_separation_lower_bound(ksq, ref_bounds, rng):
    assert separation_lower_bound(0.4, 0.4, 0.1j, ref_bounds) == 0.0
    assert separation_lower_bound(0.1, 0.9, 0.0, ref_bounds) == pytest.approx(0.8)
    for _ in range(25):
        k, kp = sorted(rng.uniform(-2, 2, 2))
        if kp - k < 1e-3:
            continue
        g1, _, _ = continue_complex(ksq, ksq, 0.0, k, 0.1j)
        g2, _, _ = continue_complex(ksq, ksq, 0.0, kp, 0.1j)
        assert abs(g2 - g1) >= separation_lower_bound(k, kp, 0.1j, ref_bounds)


def test_variational_determinant_oracle(ksq, rng):
    for _ in range(20):
        k = rng.uniform(-2, 2)
        theta = complex(rng.uniform(-0.1, 0.1), rng.uniform(-0.08, 0.08))
        det = variational_determinant(ksq, ksq, 0.3, k, theta)
        _, jac, _ = continue_complex(ksq, ksq, 0.3, k, theta)
        assert abs(det - jac) / abs(jac) <= 1e-6


def test_complex_time_admissibility(ksq, ref_bounds):
    ct = ComplexTime.from_bounds(0.2j, 0.5, ref_bounds)
    with pytest.raises(StripViolation):
        ct.require_admissible()
    ok = ComplexTime.from_bounds(0.05j, 0.5, ref_bounds)
    ok.require_admissible()


def test_csv_roundtrip(ksq, ref_bounds, small_grid, tmp_path):
    table = build_flow_table(small_grid, ksq, ksq, 0.0, 0.1j, ref_bounds)
    path = tmp_path / "table.csv"
    flow_table_to_csv(table, path)
    back = flow_table_from_csv(path)
    assert np.array_equal(back["k"], table.k)
    assert np.array_equal(back["gamma"], table.gamma)
    assert np.array_equal(back["jac"], table.jac)
    assert np.array_equal(back["jac_arg"], table.jac_arg)
