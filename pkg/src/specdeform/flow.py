"""Dilation flow: the ODE dy/dt = v_xi(y), its complex-time continuation and
the Jacobian factor J with a branch-continuous argument.

Complex time theta is reached along an L-shaped contour: real flow from 0 to
Re(theta), then the vertical leg dy/dtau = i v_xi(y) up to theta.  log J is
accumulated along the same contour, so J = exp(log J) and its argument
Im(log J) is tracked additively and never recovered mod 2 pi from the value.
"""

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .dispersion import DispersionSpec, FieldBounds, divergence_v, jacobian_v, vector_field
from .errors import StripViolation, ToleranceNotMet
from .grids import MomentumGrid

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class ComplexTime:
    """A complex flow time with the admissible continuation radius r = R/(C_omega+1)."""

    theta: complex
    admissible_radius: float

    @classmethod
    def from_bounds(cls, theta: complex, strip_radius: float, bounds: FieldBounds):
        return cls(complex(theta), strip_radius / (bounds.c_omega + 1.0))

    def require_admissible(self):
        if abs(self.theta.imag) >= self.admissible_radius:
            raise StripViolation(
                f"|Im theta| = {abs(self.theta.imag):.6g} is not below the "
                f"admissible continuation radius {self.admissible_radius:.6g}"
            )


def _rhs(spec1, spec2, xi, n, d, direction):
    def fun(_t, state):
        y = state[: n * d].reshape(n, d)
        karg = y[:, 0] if d == 1 else y
        v = np.asarray(vector_field(spec1, spec2, xi, karg)).reshape(n, d)
        dv = np.asarray(divergence_v(spec1, spec2, xi, karg)).reshape(n)
        return direction * np.concatenate([v.ravel(), dv])

    return fun


def _integrate_leg(spec1, spec2, xi, y, logj, t_end, direction, tol):
    n, d = y.shape
    if t_end == 0.0:
        return y, logj, {"nfev": 0, "steps": 0}
    state0 = np.concatenate([y.ravel(), logj]).astype(complex)
    sol = solve_ivp(
        _rhs(spec1, spec2, xi, n, d, direction),
        (0.0, t_end),
        state0,
        method="RK45",
        rtol=max(tol, 3e-14),
        atol=tol,
    )
    if not sol.success:
        raise ToleranceNotMet(f"adaptive step control failed: {sol.message}")
    final = sol.y[:, -1]
    stats = {"nfev": int(sol.nfev), "steps": int(len(sol.t) - 1)}
    return final[: n * d].reshape(n, d), final[n * d :], stats


def _flow_nodes(spec1, spec2, xi, nodes, theta, tol):
    """Flow every node to complex time theta; returns (gamma, log_jac, stats)."""
    y = np.asarray(nodes, dtype=complex)
    logj = np.zeros(y.shape[0], dtype=complex)
    theta = complex(theta)
    stats = {"nfev": 0, "steps": 0}
    for t_end, direction in ((theta.real, 1.0), (theta.imag, 1.0j)):
        y, logj, leg = _integrate_leg(spec1, spec2, xi, y, logj, t_end, direction, tol)
        stats["nfev"] += leg["nfev"]
        stats["steps"] += leg["steps"]
    return y, logj, stats


def integrate_real(spec1, spec2, xi, k, t, tol=DEFAULT_TOL):
    """Real-time flow map and Jacobian factor (gamma, J); J > 0 for real time."""
    d = spec2.dim
    k = np.atleast_1d(np.asarray(k, dtype=float)).reshape(1, d)
    y, logj, _ = _flow_nodes(spec1, spec2, xi, k, float(t), tol)
    gamma = y[0].real if d > 1 else float(y[0, 0].real)
    return gamma, float(np.exp(logj[0].real))


def continue_complex(spec1, spec2, xi, k, theta, tol=DEFAULT_TOL, admissible_radius=None):
    """Flow continued to complex time along the L-shaped contour.

    Returns (gamma, jac, jac_arg) where jac_arg is the imaginary part of the
    accumulated divergence integral (continuous, no wrapping).
    """
    theta = theta.theta if isinstance(theta, ComplexTime) else complex(theta)
    if admissible_radius is not None and abs(theta.imag) >= admissible_radius:
        raise StripViolation(
            f"|Im theta| = {abs(theta.imag):.6g} >= admissible radius {admissible_radius:.6g}"
        )
    d = spec2.dim
    k = np.atleast_1d(np.asarray(k, dtype=complex)).reshape(1, d)
    y, logj, _ = _flow_nodes(spec1, spec2, xi, k, theta, tol)
    gamma = y[0] if d > 1 else y[0, 0]
    return gamma, complex(np.exp(logj[0])), float(logj[0].imag)


@dataclass(frozen=True)
class FlowTable:
    """Flow points, Jacobian factors and tracked arguments over a grid."""

    grid_id: str
    theta: complex
    xi: object
    k: np.ndarray          # (M, d) real start nodes
    gamma: np.ndarray      # (M, d) complex
    jac: np.ndarray        # (M,) complex
    jac_arg: np.ndarray    # (M,) float, Im of the accumulated integral
    log_jac: np.ndarray    # (M,) complex
    integrator_stats: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)

    def sqrt_jac(self) -> np.ndarray:
        """Principal square root taken on the tracked argument."""
        return np.exp(0.5 * self.log_jac)


def build_flow_table(
    grid: MomentumGrid,
    spec1: DispersionSpec,
    spec2: DispersionSpec,
    xi,
    theta: complex,
    bounds: FieldBounds,
    tol: float = DEFAULT_TOL,
) -> FlowTable:
    """Flow every grid node to complex time theta and validate the table.

    Validated invariants (worst-case margins recorded on the table):
    componentwise |Im gamma| <= C_omega |Im theta|, |gamma - k| <= C_omega
    |theta|, |J| <= exp(d C'_omega |theta|) and |arg J| <= d C'_omega
    |Im theta|.  A node leaving the dispersion strip is a certification
    failure and raises StripViolation with the node index attached.
    """
    theta = complex(theta)
    d = grid.dim
    nodes = grid.nodes().astype(complex)
    gamma, logj, stats = _flow_nodes(spec1, spec2, xi, nodes, theta, tol)

    strip = min(spec1.strip_radius, spec2.strip_radius)
    im_max = np.max(np.abs(gamma.imag), axis=1)
    bad = np.nonzero(im_max > strip)[0]
    if len(bad) > 0:
        raise StripViolation(
            f"node {int(bad[0])} left the dispersion strip "
            f"(|Im gamma| = {im_max[bad[0]]:.6g} > {strip:.6g}); certification failure"
        )

    slack = 1.0 + 1e-8
    move = np.linalg.norm(gamma - nodes, axis=1)
    checks = {
        "im_gamma": (float(np.max(im_max)), bounds.c_omega * abs(theta.imag)),
        "move": (float(np.max(move)), bounds.c_omega * abs(theta)),
        "log_jac_re": (float(np.max(logj.real)), d * bounds.c_omega_prime * abs(theta)),
        "jac_arg": (float(np.max(np.abs(logj.imag))), d * bounds.c_omega_prime * abs(theta.imag)),
    }
    margins = {}
    for name, (observed, bound) in checks.items():
        margins[name] = {"observed": observed, "bound": bound}
        if observed > bound * slack + 10.0 * tol:
            raise ToleranceNotMet(
                f"flow invariant {name} violated: observed {observed:.6g} "
                f"exceeds certified bound {bound:.6g}"
            )
    return FlowTable(
        grid_id=grid.grid_id,
        theta=theta,
        xi=xi,
        k=nodes.real.copy(),
        gamma=gamma,
        jac=np.exp(logj),
        jac_arg=logj.imag.copy(),
        log_jac=logj,
        integrator_stats=stats,
        margins=margins,
    )


def check_group_and_inverse(spec1, spec2, xi, k, t, s, tol=DEFAULT_TOL) -> dict:
    """Deviation of the group law gamma^{t+s} = gamma^t o gamma^s and of the
    Jacobian inverse identity J^{-t}(gamma^t(k)) J^t(k) = 1 at (k, t, s)."""
    d = spec2.dim
    g_s, j_s = integrate_real(spec1, spec2, xi, k, s, tol)
    g_ts, _ = integrate_real(spec1, spec2, xi, g_s, t, tol)
    g_sum, _ = integrate_real(spec1, spec2, xi, k, t + s, tol)
    dev_group = float(np.max(np.abs(np.atleast_1d(g_ts) - np.atleast_1d(g_sum))))

    g_t, j_t = integrate_real(spec1, spec2, xi, k, t, tol)
    _, j_back = integrate_real(spec1, spec2, xi, g_t, -t, tol)
    dev_jinv = abs(j_back * j_t - 1.0)
    return {"dev_group": dev_group, "dev_jinv": dev_jinv, "d": d}


def separation_lower_bound(k, kprime, theta, bounds: FieldBounds) -> float:
    """Certified lower bound |k - k'| exp(-C'_omega |theta|) for the distance
    of two flowed points."""
    diff = np.linalg.norm(np.atleast_1d(np.asarray(kprime, float) - np.asarray(k, float)))
    return float(diff * np.exp(-bounds.c_omega_prime * abs(complex(theta))))


def variational_determinant(spec1, spec2, xi, k, theta, tol=DEFAULT_TOL) -> complex:
    """det of the fundamental matrix of the variational ODE dM/dz = Dv(gamma) M
    along the same L-shaped contour; independent oracle for J."""
    d = spec2.dim
    k = np.atleast_1d(np.asarray(k, dtype=complex)).reshape(d)
    theta = complex(theta)

    def rhs(direction):
        def fun(_t, state):
            y = state[:d]
            m = state[d:].reshape(d, d)
            karg = y[0] if d == 1 else y
            v = np.atleast_1d(np.asarray(vector_field(spec1, spec2, xi, karg))).reshape(d)
            dv = np.asarray(jacobian_v(spec1, spec2, xi, karg)).reshape(d, d)
            return direction * np.concatenate([v, (dv @ m).ravel()])

        return fun

    state = np.concatenate([k, np.eye(d, dtype=complex).ravel()])
    for t_end, direction in ((theta.real, 1.0), (theta.imag, 1.0j)):
        if t_end == 0.0:
            continue
        sol = solve_ivp(rhs(direction), (0.0, t_end), state, method="RK45",
                        rtol=max(tol, 3e-14), atol=tol)
        if not sol.success:
            raise ToleranceNotMet(sol.message)
        state = sol.y[:, -1]
    return complex(np.linalg.det(state[d:].reshape(d, d)))


def flow_table_to_csv(table: FlowTable, path=None) -> str:
    """Structured text dump: one line per node with k, gamma, J and arg J."""
    d = table.gamma.shape[1]
    cols = (
        [f"k{i}" for i in range(d)]
        + [f"re_gamma{i}" for i in range(d)]
        + [f"im_gamma{i}" for i in range(d)]
        + ["re_J", "im_J", "arg_J"]
    )
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for i in range(len(table.jac)):
        buf.write(",".join(
            [f"{x:.17g}" for x in table.k[i]]
            + [f"{x:.17g}" for x in table.gamma[i].real]
            + [f"{x:.17g}" for x in table.gamma[i].imag]
            + [f"{table.jac[i].real:.17g}", f"{table.jac[i].imag:.17g}",
               f"{table.jac_arg[i]:.17g}"]
        ) + "\n")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def flow_table_from_csv(path) -> dict:
    """Read back a table dump into plain arrays (for golden-file comparison)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    d = sum(1 for n in names if n.startswith("k"))
    k = np.column_stack([data[f"k{i}"] for i in range(d)])
    gamma = np.column_stack(
        [data[f"re_gamma{i}"] + 1j * data[f"im_gamma{i}"] for i in range(d)]
    )
    jac = data["re_J"] + 1j * data["im_J"]
    return {"k": k, "gamma": gamma, "jac": jac, "jac_arg": np.asarray(data["arg_J"])}
