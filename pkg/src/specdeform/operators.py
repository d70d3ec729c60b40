"""Dense discretization of the fiber Hamiltonian H(xi) = M_{omega_xi} + T_V
and of its spectral deformation H_theta(xi).

The deformed operator at parameter theta is the analytic continuation of the
unitary dilation conjugation of H.  Its matrix uses the flow evaluated at
time -theta:

    H_theta = diag(omega_xi(gamma^{-theta}(k_i)))
              + dk^d sqrt(J_i) Vhat(gamma_j - gamma_i) sqrt(J_j),

with all gamma/J entries drawn from the (-theta)-flow table.  This
orientation makes the deformed continuum descend into the lower half-plane
for Im theta > 0, which the commutator positivity (the multiplication symbol
v_xi . grad omega_xi >= 0 on the real grid) forces; the raw (+theta) table
would sweep it upward.  Flow tables themselves are unchanged.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import scipy.integrate

from .dispersion import DispersionSpec, FieldBounds, omega_xi
from .errors import BranchFailure, GridTooCoarse, NotApplicable, StripViolation
from .flow import FlowTable, build_flow_table
from .grids import MomentumGrid
from .potential import FourierKernel, PotentialSpec, fourier_factorized, fourier_transform

_MAGIC = b"FIBOPER1"


@dataclass(frozen=True)
class DeformationParams:
    """Admissible deformation disc radius min{r, a'/(C_omega+1), pi/(d C'_omega+1)}."""

    theta: complex
    admissible_R: float

    @classmethod
    def compute(cls, theta: complex, strip_radius: float, a_prime: float,
                bounds: FieldBounds, dim: int) -> "DeformationParams":
        r = strip_radius / (bounds.c_omega + 1.0)
        radius = min(r, a_prime / (bounds.c_omega + 1.0),
                     np.pi / (dim * bounds.c_omega_prime + 1.0))
        return cls(complex(theta), float(radius))

    def require_admissible(self):
        if abs(self.theta) >= self.admissible_R:
            raise StripViolation(
                f"|theta| = {abs(self.theta):.6g} is not below the admissible "
                f"deformation radius {self.admissible_R:.6g}"
            )


@dataclass(frozen=True, eq=False)
class FiberOperator:
    """Dense matrix of H_theta(xi) with assembly provenance."""

    matrix: np.ndarray
    xi: object
    theta: complex
    grid: MomentumGrid
    potential_id: str
    kinetic_diag: np.ndarray
    norm_estimate: float
    assembly_tolerances: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def potential_part(self) -> np.ndarray:
        return self.matrix - np.diag(self.kinetic_diag)


def potential_id(potential: PotentialSpec) -> str:
    if potential.family == "constructed":
        h = hashlib.sha256(np.ascontiguousarray(potential.values).tobytes()).hexdigest()[:12]
        return f"constructed_{h}"
    return (f"{potential.family}_a{potential.amplitude:g}_w{potential.width:g}"
            f"_c{potential.center:g}_r{potential.support_radius:g}")


def _node_args(grid: MomentumGrid, pts: np.ndarray):
    return pts[:, 0] if grid.dim == 1 else pts


def _tail_check(potential: PotentialSpec, grid: MomentumGrid, kernel_max: float,
                tail_tol: float):
    """Refuse grids whose maximal resolved transfer 2K carries kernel weight
    above tail_tol relative to the kernel's peak."""
    edge = 2.0 * grid.cutoff
    if potential.dim == 1:
        probes = np.array([-edge, edge], dtype=complex)
    else:
        probes = edge * np.eye(grid.dim, dtype=complex)
    tail = float(np.max(np.abs(fourier_transform(potential, probes, check_strip=False))))
    if kernel_max > 0 and tail > tail_tol * kernel_max:
        raise GridTooCoarse(
            f"|Vhat(2K)| = {tail:.3e} exceeds tail tolerance "
            f"{tail_tol:.1e} x max|Vhat| = {tail_tol * kernel_max:.3e}; "
            f"enlarge the cutoff or declare a looser tail_tol"
        )


def kernel_weight(grid: MomentumGrid) -> float:
    """Quadrature weight per node for the convolution T_V: the rectangle rule
    dk^d together with the unitary-convolution normalization (2 pi)^{-d/2},
    so that T_V represents multiplication by V itself."""
    return grid.cell_volume * (2.0 * np.pi) ** (-grid.dim / 2.0)


def _toeplitz_kernel(potential: PotentialSpec, grid: MomentumGrid) -> np.ndarray:
    """Kernel matrix of T_V on the undeformed dim-1 grid via the difference table."""
    n = grid.points
    ax = grid.axis
    diffs = np.concatenate([ax - ax[-1], (ax - ax[0])[1:]])  # length 2n-1, ascending
    vhat = fourier_transform(potential, diffs.astype(complex), check_strip=False)
    idx = np.arange(n)
    return kernel_weight(grid) * vhat[(n - 1) + (idx[None, :] - idx[:, None])]


def _kernel_matrix_dim2(potential: PotentialSpec, grid: MomentumGrid) -> np.ndarray:
    n = grid.points
    ax = grid.axis
    diffs = np.concatenate([ax - ax[-1], (ax - ax[0])[1:]])
    pts = np.stack(np.meshgrid(diffs, diffs, indexing="ij"), axis=-1).astype(complex)
    vhat = fourier_transform(potential, pts, check_strip=False)
    idx = np.arange(n)
    ix = idx[:, None, None, None] - idx[None, None, :, None]
    iy = idx[None, :, None, None] - idx[None, None, None, :]
    kern = vhat[(n - 1) - ix, (n - 1) - iy]
    m = n * n
    return kernel_weight(grid) * kern.reshape(m, m)


def assemble_H(grid: MomentumGrid, spec1: DispersionSpec, spec2: DispersionSpec,
               potential: PotentialSpec, xi, tail_tol: float = 1e-10) -> FiberOperator:
    """Undeformed fiber operator diag(omega_xi) + dk^d Vcheck(k_i - k_j)."""
    nodes = grid.nodes()
    diag = np.asarray(omega_xi(spec1, spec2, xi, _node_args(grid, nodes.astype(complex))))
    diag = diag.reshape(grid.size)
    if potential.is_zero:
        kernel = np.zeros((grid.size, grid.size), dtype=complex)
    elif grid.dim == 1:
        kernel = _toeplitz_kernel(potential, grid)
    else:
        kernel = _kernel_matrix_dim2(potential, grid)
    if not potential.is_zero:
        _tail_check(potential, grid, float(np.max(np.abs(kernel))) / kernel_weight(grid), tail_tol)
    matrix = kernel
    matrix[np.diag_indices(grid.size)] += diag
    norm = float(np.max(np.sum(np.abs(matrix), axis=1)))
    return FiberOperator(
        matrix=matrix, xi=xi, theta=0.0 + 0.0j, grid=grid,
        potential_id=potential_id(potential), kinetic_diag=diag,
        norm_estimate=norm, assembly_tolerances={"tail_tol": tail_tol},
    )


def _assemble_from_table(grid: MomentumGrid, spec1, spec2, potential, xi,
                         table: FlowTable, tail_tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Raw dilated matrix from a flow table:
    diag(omega_xi(gamma_i)) + dk^d sqrt(J_i) Vhat(gamma_j - gamma_i) sqrt(J_j)."""
    if np.any(np.abs(table.jac_arg) >= np.pi):
        raise BranchFailure("|arg J| reached pi; principal square root undefined")
    gamma = table.gamma
    diag = np.asarray(omega_xi(spec1, spec2, xi, _node_args(grid, gamma))).reshape(grid.size)
    if potential.is_zero:
        return diag, np.zeros((grid.size, grid.size), dtype=complex)
    sq = table.sqrt_jac()
    if grid.dim == 1:
        g = gamma[:, 0]
        if potential.family == "gaussian" and potential.fourier_method == "closed_form":
            vhat = fourier_transform(potential, g[None, :] - g[:, None], check_strip=False)
        else:
            vhat = fourier_factorized(potential, g, g)
    else:
        vhat = fourier_transform(potential, gamma[None, :, :] - gamma[:, None, :],
                                 check_strip=False)
    kernel = kernel_weight(grid) * (sq[:, None] * vhat * sq[None, :])
    _tail_check(potential, grid, float(np.max(np.abs(vhat))), tail_tol)
    return diag, kernel


def assemble_H_theta(
    grid: MomentumGrid,
    spec1: DispersionSpec,
    spec2: DispersionSpec,
    potential: PotentialSpec,
    xi,
    theta: complex,
    bounds: FieldBounds,
    flow_table: FlowTable | None = None,
    flow_tol: float = 1e-12,
    tail_tol: float = 1e-10,
) -> FiberOperator:
    """Deformed fiber operator H_theta(xi).

    The matrix is built from the flow table at time -theta (see module
    docstring for the orientation).  A precomputed table may be passed; it
    must match (grid, xi, -theta).  At theta = 0 the result is identical to
    assemble_H.
    """
    theta = complex(theta)
    if theta == 0.0:
        return assemble_H(grid, spec1, spec2, potential, xi, tail_tol)
    strip = min(spec1.strip_radius, spec2.strip_radius)
    params = DeformationParams.compute(theta, strip, potential.a_prime, bounds, grid.dim)
    params.require_admissible()
    if 2.0 * bounds.c_omega * abs(theta) >= potential.a_prime:
        raise StripViolation(
            f"2 C_omega |theta| = {2.0 * bounds.c_omega * abs(theta):.6g} reaches the "
            f"transform strip a' = {potential.a_prime:.6g}"
        )
    if flow_table is None:
        flow_table = build_flow_table(grid, spec1, spec2, xi, -theta, bounds, flow_tol)
    else:
        if flow_table.grid_id != grid.grid_id or complex(flow_table.theta) != -theta:
            raise ValueError(
                "flow table mismatch: the deformation at theta consumes the "
                "flow at time -theta on the same grid"
            )
    diag, kernel = _assemble_from_table(grid, spec1, spec2, potential, xi,
                                        flow_table, tail_tol)
    matrix = kernel
    matrix[np.diag_indices(grid.size)] += diag
    norm = float(np.max(np.sum(np.abs(matrix), axis=1)))
    return FiberOperator(
        matrix=matrix, xi=xi, theta=theta, grid=grid,
        potential_id=potential_id(potential), kinetic_diag=diag,
        norm_estimate=norm,
        assembly_tolerances={"tail_tol": tail_tol, "flow_tol": flow_tol,
                             "admissible_R": params.admissible_R},
    )


def operator_norm_estimate(matrix: np.ndarray, iters: int = 80, seed: int = 0,
                           rtol: float = 1e-10) -> float:
    """2-norm estimate by power iteration on A^H A."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(matrix.shape[1]) + 1j * rng.standard_normal(matrix.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = matrix @ x
        new_est = float(np.linalg.norm(y))
        z = matrix.conj().T @ y
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        x = z / nz
        if abs(new_est - est) <= rtol * max(new_est, 1.0):
            return new_est
        est = new_est
    return est


def dilated_kernel_norm_check(fiberop: FiberOperator, bounds: FieldBounds,
                              kernel: FourierKernel) -> dict:
    """Check ||T_V^theta|| <= C_V C_d exp((d+d') C'_omega |theta|)."""
    d = fiberop.grid.dim
    dprime = kernel.smoothness_order
    if d == 1:
        c_d, _ = scipy.integrate.quad(lambda k: 1.0 / (1.0 + abs(k) ** dprime),
                                      -np.inf, np.inf)
    else:
        val, _ = scipy.integrate.quad(lambda r: 2 * np.pi * r / (1.0 + r**dprime),
                                      0.0, np.inf)
        c_d = val
    observed = operator_norm_estimate(fiberop.potential_part())
    bound = (kernel.decay_constant * c_d
             * np.exp((d + dprime) * bounds.c_omega_prime * abs(fiberop.theta)))
    return {"observed": observed, "bound": float(bound), "c_d": float(c_d),
            "passed": bool(observed <= bound)}


def relative_bound_check(fiberop_theta: FiberOperator, fiberop_0: FiberOperator,
                         growth_c: float, n_vectors: int = 100, seed: int = 0) -> dict:
    """Check ||W_theta (H+i)^{-1}|| <= (3C/2)|theta| and the graph-norm
    equivalence ratios on random vectors."""
    h0 = fiberop_0.matrix
    w = fiberop_theta.matrix - h0
    m = h0.shape[0]
    resolvent = np.linalg.solve(h0 + 1j * np.eye(m), np.eye(m))
    observed = operator_norm_estimate(w @ resolvent)
    bound = 1.5 * growth_c * abs(fiberop_theta.theta)
    rng = np.random.default_rng(seed)
    psis = rng.standard_normal((m, n_vectors)) + 1j * rng.standard_normal((m, n_vectors))
    psis /= np.linalg.norm(psis, axis=0)
    num = np.linalg.norm(fiberop_theta.matrix @ psis, axis=0) + 1.0
    den = np.linalg.norm(h0 @ psis, axis=0) + 1.0
    ratios = num / den
    return {
        "w_resolvent_norm": observed,
        "bound": float(bound),
        "passed": bool(observed <= bound),
        "ratio_min": float(np.min(ratios)),
        "ratio_max": float(np.max(ratios)),
        "ratios_in_band": bool(np.all((ratios >= 0.5) & (ratios <= 2.0))),
    }


def adjoint_identity_check(fiberop_theta: FiberOperator,
                           fiberop_conj: FiberOperator) -> dict:
    """Entrywise matrix(theta)^H = matrix(conj theta)."""
    defect = float(np.max(np.abs(fiberop_theta.matrix.conj().T - fiberop_conj.matrix)))
    tol = 1e-13 * fiberop_theta.norm_estimate
    return {"defect": defect, "tol": tol, "passed": bool(defect <= tol)}


def conjugation_check(fiberop_theta: FiberOperator, fiberop_conj: FiberOperator,
                      potential: PotentialSpec) -> dict:
    """Entrywise conj(matrix(theta)) = matrix(conj theta); needs even V."""
    if not potential.is_even:
        raise NotApplicable("conjugation symmetry requires an even potential")
    defect = float(np.max(np.abs(fiberop_theta.matrix.conj() - fiberop_conj.matrix)))
    tol = 1e-13 * fiberop_theta.norm_estimate
    return {"defect": defect, "tol": tol, "passed": bool(defect <= tol)}


def hermiticity_defect(fiberop: FiberOperator) -> float:
    return float(np.max(np.abs(fiberop.matrix - fiberop.matrix.conj().T)))


def save_operator(fiberop: FiberOperator, directory) -> Path:
    """Run-directory layout: manifest.json plus matrix.bin.

    matrix.bin: 8-byte magic "FIBOPER1", int64 little-endian total dimension
    M, int64 little-endian dim d, then M*M little-endian float64 pairs
    (re, im), row-major.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = fiberop.size
    with open(directory / "matrix.bin", "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", m))
        fh.write(struct.pack("<q", fiberop.grid.dim))
        inter = np.empty((m, m, 2))
        inter[:, :, 0] = fiberop.matrix.real
        inter[:, :, 1] = fiberop.matrix.imag
        fh.write(inter.astype("<f8").tobytes())
    manifest = {
        "xi": _jsonable(fiberop.xi),
        "theta": [fiberop.theta.real, fiberop.theta.imag],
        "grid": {"cutoff": fiberop.grid.cutoff, "points": fiberop.grid.points,
                 "dim": fiberop.grid.dim},
        "potential_id": fiberop.potential_id,
        "norm_estimate": fiberop.norm_estimate,
        "assembly_tolerances": fiberop.assembly_tolerances,
        "kinetic_diag": [[z.real, z.imag] for z in fiberop.kinetic_diag],
    }
    with open(directory / "operator_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return directory / "matrix.bin"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    return x


def load_operator(directory) -> FiberOperator:
    directory = Path(directory)
    with open(directory / "operator_manifest.json") as fh:
        manifest = json.load(fh)
    with open(directory / "matrix.bin", "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        m = struct.unpack("<q", fh.read(8))[0]
        _d = struct.unpack("<q", fh.read(8))[0]
        raw = np.frombuffer(fh.read(), dtype="<f8").reshape(m, m, 2)
        matrix = raw[:, :, 0] + 1j * raw[:, :, 1]
    grid = MomentumGrid(manifest["grid"]["cutoff"], manifest["grid"]["points"],
                        manifest["grid"]["dim"])
    theta = complex(manifest["theta"][0], manifest["theta"][1])
    kdiag = np.array([complex(re, im) for re, im in manifest["kinetic_diag"]])
    return FiberOperator(
        matrix=matrix, xi=manifest["xi"], theta=theta, grid=grid,
        potential_id=manifest["potential_id"],
        kinetic_diag=kdiag,
        norm_estimate=manifest["norm_estimate"],
        assembly_tolerances=manifest["assembly_tolerances"],
    )
