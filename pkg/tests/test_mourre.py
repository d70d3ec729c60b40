from dataclasses import replace

import numpy as np
import pytest

from specdeform.errors import SpecdeformError, ThresholdTooClose
from specdeform.bands import threshold_set
from specdeform.grids import MomentumGrid
from specdeform.mourre import (
    assemble_commutator,
    commutator_fd_oracle,
    default_rectangle,
    extract_constants,
    mourre_inequality_check,
    virial_check,
)
from specdeform.operators import assemble_H
from specdeform.potential import PotentialSpec


@pytest.fixture(scope="module")
def zero_pot():
    return PotentialSpec("gaussian", amplitude=0.0, width=0.5)


@pytest.fixture(scope="module")
def thresholds_ref(ksq):
    return threshold_set(ksq, ksq, 0.0)


def test_free_commutator_is_symbol_diagonal(ksq, mid_grid, zero_pot):
    comm = assemble_commutator(mid_grid, ksq, ksq, zero_pot, 0.0, 0.0)
    k = mid_grid.axis
    expected = np.exp(-(k**2)) * (4 * k) ** 2
    assert np.max(np.abs(comm.mult_diag.real - expected)) <= 1e-13
    assert np.max(np.abs(comm.potential_part)) == 0.0


def test_commutator_hermitian(ksq, gaussian_pot, mid_grid):
    comm = assemble_commutator(mid_grid, ksq, ksq, gaussian_pot, 0.0, 0.0)
    defect = np.max(np.abs(comm.matrix - comm.matrix.conj().T))
    assert defect <= 1e-12 * comm.norm_estimate


def test_commutator_hermitian_uneven_potential(ksq, mid_grid):
    uneven = PotentialSpec("gaussian", amplitude=0.4, width=0.5, center=0.3)
    comm = assemble_commutator(mid_grid, ksq, ksq, uneven, 0.0, 0.0)
    defect = np.max(np.abs(comm.matrix - comm.matrix.conj().T))
    assert defect <= 1e-12 * comm.norm_estimate


def test_fd_oracle_first_order(ksq, gaussian_pot, mid_grid, ref_bounds):
    comm = assemble_commutator(mid_grid, ksq, ksq, gaussian_pot, 0.0, 0.0)
    errs = {}
    for h in (1e-3, 1e-4):
        oracle = commutator_fd_oracle(mid_grid, ksq, ksq, gaussian_pot,
                                      0.0, 0.0, h, ref_bounds)
        errs[h] = np.max(np.abs(oracle - comm.matrix))
    assert errs[1e-4] <= 0.02 * comm.norm_estimate
    ratio = errs[1e-3] / errs[1e-4]
    assert 5.0 <= ratio <= 20.0  # first-order decay


class TestExtractConstants:
    def test_reference_shell(self, ksq, gaussian_pot, mid_grid, thresholds_ref):
        rep = extract_constants(mid_grid, ksq, ksq, gaussian_pot, 1.0, 0.0,
                                thresholds_ref)
        assert rep.kappa == pytest.approx(0.25)
        # 1-d minimization oracle on the shell 2k^2 in [0.5, 1.5]; the
        # sampled infimum sits just inside the shell boundary
        kk = np.linspace(np.sqrt(0.25), np.sqrt(0.75), 20001)
        oracle = np.min(16 * kk**2 * np.exp(-(kk**2)))
        assert oracle - 1e-9 <= rep.e <= oracle + 0.1
        assert rep.c_upper == pytest.approx(16 / np.e, rel=1e-3)
        assert rep.e <= rep.c_upper
        assert abs(rep.shell_argmin) == pytest.approx(0.5, abs=1e-2)

    def test_threshold_too_close(self, ksq, gaussian_pot, mid_grid,
                                 thresholds_ref):
        with pytest.raises(ThresholdTooClose):
            extract_constants(mid_grid, ksq, ksq, gaussian_pot, 0.0, 0.0,
                              thresholds_ref)

    def test_shrinking_kappa_never_decreases_e(self, ksq, gaussian_pot,
                                               mid_grid, thresholds_ref):
        es = []
        for factor in (4.0, 6.0, 10.0):
            rep = extract_constants(mid_grid, ksq, ksq, gaussian_pot, 1.0, 0.0,
                                    thresholds_ref, kappa_factor=factor)
            es.append(rep.e)
        assert es[0] <= es[1] <= es[2]

    def test_default_rectangle(self, ksq, gaussian_pot, mid_grid, thresholds_ref):
        rep = extract_constants(mid_grid, ksq, ksq, gaussian_pot, 1.0, 0.0,
                                thresholds_ref)
        rect = default_rectangle(rep)
        expected = min(1.0, rep.e * rep.kappa / (16 * rep.c_upper * np.sqrt(2.0)))
        assert rect.half_width == pytest.approx(expected)
        assert rect.depth_slope == pytest.approx(rep.e / 2)


class TestInequality:
    def test_free_margin_nonnegative(self, ksq, mid_grid, zero_pot,
                                     thresholds_ref):
        comm = assemble_commutator(mid_grid, ksq, ksq, zero_pot, 0.0, 0.0)
        h0 = assemble_H(mid_grid, ksq, ksq, zero_pot, 0.0)
        rep = extract_constants(mid_grid, ksq, ksq, zero_pot, 1.0, 0.0,
                                thresholds_ref)
        out = mourre_inequality_check(comm, h0.matrix, rep, include_p0=False)
        assert out["margin"] >= -1e-10

    def test_inflated_e_negative_control(self, ksq, mid_grid, zero_pot,
                                         thresholds_ref):
        comm = assemble_commutator(mid_grid, ksq, ksq, zero_pot, 0.0, 0.0)
        h0 = assemble_H(mid_grid, ksq, ksq, zero_pot, 0.0)
        rep = extract_constants(mid_grid, ksq, ksq, zero_pot, 1.0, 0.0,
                                thresholds_ref)
        bad = replace(rep, e=rep.e * 10, c_upper=rep.e * 10)
        out = mourre_inequality_check(comm, h0.matrix, bad, include_p0=False)
        assert out["margin"] < -1.0

    def test_oversized_kappa_rejected(self, ksq, mid_grid, zero_pot,
                                      thresholds_ref):
        comm = assemble_commutator(mid_grid, ksq, ksq, zero_pot, 0.0, 0.0)
        h0 = assemble_H(mid_grid, ksq, ksq, zero_pot, 0.0)
        rep = extract_constants(mid_grid, ksq, ksq, zero_pot, 1.0, 0.0,
                                thresholds_ref)
        bad = replace(rep, kappa=1e6)
        with pytest.raises(SpecdeformError):
            mourre_inequality_check(comm, h0.matrix, bad)

    def test_interacting_margin(self, ksq, gaussian_pot, mid_grid,
                                thresholds_ref):
        # K = 0 path: lambda = 1 is not an eigenvalue of the reference H
        comm = assemble_commutator(mid_grid, ksq, ksq, gaussian_pot, 0.0, 0.0)
        h0 = assemble_H(mid_grid, ksq, ksq, gaussian_pot, 0.0)
        rep = extract_constants(mid_grid, ksq, ksq, gaussian_pot, 1.0, 0.0,
                                thresholds_ref, commutator=comm)
        out = mourre_inequality_check(comm, h0.matrix, rep, include_p0=False)
        assert out["margin"] >= -1e-8


def test_virial(ksq, gaussian_pot, thresholds_ref):
    grid = MomentumGrid(12.0, 401)
    comm = assemble_commutator(grid, ksq, ksq, gaussian_pot, 0.0, 0.0)
    h0 = assemble_H(grid, ksq, ksq, gaussian_pot, 0.0)
    w, v = np.linalg.eigh(h0.matrix.real)
    assert w[0] < 0
    vir = virial_check(comm, v[:, :1].astype(complex))
    assert abs(vir[0]) <= 1e-6 * comm.norm_estimate
    rng = np.random.default_rng(3)
    rand = virial_check(comm, rng.standard_normal(grid.points).astype(complex))
    assert abs(rand[0]) >= 1e-2 * comm.norm_estimate / 100


def test_virial_zero_commutator(zero_disp, mid_grid, zero_pot, rng):
    comm = assemble_commutator(mid_grid, zero_disp, zero_disp, zero_pot, 0.0, 0.0)
    psi = rng.standard_normal(mid_grid.points).astype(complex)
    assert virial_check(comm, psi)[0] == 0.0
