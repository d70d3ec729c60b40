"""Spectra of the deformed (non-normal) fiber operators and the spectral
verifications built on them: sector bounds, rectangle clearing, theta
independence, Riesz projections, Feshbach reduction and the
approximate-point-spectrum probe.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import (
    ContourTooClose,
    ConvergenceFailure,
    MatchingAmbiguous,
    ReducedSingular,
    SolveFailure,
)
from .operators import FiberOperator

CLASSES = ("continuum-arc", "isolated-real", "resonance", "unclassified")
ISO_IM_TOL = 1e-6


@dataclass(frozen=True)
class Rectangle:
    """Scan region Re in (center +/- half_width), Im > -depth_slope * Im(theta)."""

    center_energy: float
    half_width: float
    depth_slope: float

    def __post_init__(self):
        if self.half_width <= 0 or self.depth_slope <= 0:
            raise ValueError("rectangle needs positive half_width and depth_slope")

    def contains(self, z: np.ndarray, theta: complex) -> np.ndarray:
        z = np.asarray(z)
        floor = -self.depth_slope * complex(theta).imag
        return (
            (np.abs(z.real - self.center_energy) < self.half_width)
            & (z.imag > floor)
        )


@dataclass(eq=False)
class SpectrumReport:
    """Eigenvalues with residuals and classification for one (xi, theta)."""

    eigenvalues: np.ndarray
    residuals: np.ndarray
    classes: list
    theta: complex
    xi: object
    norm_estimate: float
    free_curve: np.ndarray | None = None
    vectors: np.ndarray | None = None
    rectangle_stats: dict | None = None
    flagged: np.ndarray | None = None

    def select(self, cls: str) -> np.ndarray:
        mask = np.array([c == cls for c in self.classes])
        return self.eigenvalues[mask]


def default_match_tol(center: float) -> float:
    return 1e-6 * (1.0 + abs(center))


def eigendecompose(fiberop: FiberOperator, eig_tol: float = 1e-8,
                   keep_vectors: bool = True) -> SpectrumReport:
    """Dense non-Hermitian eigendecomposition with a per-pair residual contract.

    Every eigenpair satisfies ||H v - lambda v|| / ||H|| <= eig_tol or is
    flagged in the report.
    """
    if fiberop.size > 4096:
        raise ValueError("dense path is limited to dimension 4096")
    try:
        w, v = sla.eig(fiberop.matrix)
    except sla.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceFailure(str(exc)) from exc
    norms = np.linalg.norm(v, axis=0)
    v = v / norms
    resid = np.linalg.norm(fiberop.matrix @ v - v * w[None, :], axis=0)
    resid = resid / max(fiberop.norm_estimate, 1e-300)
    flagged = resid > eig_tol
    return SpectrumReport(
        eigenvalues=w,
        residuals=resid,
        classes=["unclassified"] * len(w),
        theta=fiberop.theta,
        xi=fiberop.xi,
        norm_estimate=fiberop.norm_estimate,
        free_curve=fiberop.kinetic_diag.copy(),
        vectors=v if keep_vectors else None,
        flagged=flagged,
    )


def _polyline_distance(z: np.ndarray, curve: np.ndarray) -> np.ndarray:
    """Distance from points z to the polyline through the (sorted) curve."""
    order = np.argsort(curve.real, kind="stable")
    c = curve[order]
    if len(c) < 2:
        return np.abs(z - c[0]) if len(c) else np.full(len(z), np.inf)
    a, b = c[:-1], c[1:]
    ab = b - a
    denom = np.abs(ab) ** 2
    safe = np.where(denom == 0, 1.0, denom)
    # projection parameter of each z onto each segment, clipped to [0, 1]
    t = ((z[:, None] - a[None, :]) * np.conj(ab[None, :])).real / safe[None, :]
    t = np.clip(t, 0.0, 1.0)
    proj = a[None, :] + t * ab[None, :]
    return np.min(np.abs(z[:, None] - proj), axis=1)


def classify(report: SpectrumReport, match_tol: float | None = None,
             arc_tol: float | None = None,
             iso_min_distance: float | None = None) -> SpectrumReport:
    """Tag eigenvalues as continuum-arc / isolated-real / resonance.

    Isolated-real requires |Im z| <= 1e-6 together with clearance
    >= iso_min_distance from the deformed free curve (the kinetic
    diagonal); near-axis curve segments have only perpendicular
    displacement, so genuine arc points never satisfy both.  Everything
    within arc_tol of the curve polyline is a continuum arc; points past
    the top resolved energy are left unclassified (cutoff edge artifact).
    """
    w = report.eigenvalues
    if match_tol is None:
        match_tol = default_match_tol(float(np.median(w.real)))
    if arc_tol is None:
        arc_tol = 0.05 * (1.0 + np.abs(w.real))
    arc_tol = np.broadcast_to(np.asarray(arc_tol, dtype=float), w.shape)
    if iso_min_distance is None:
        iso_min_distance = max(5.0 * match_tol, 1e-4)
    dist = _polyline_distance(w, report.free_curve)
    curve_re = np.sort(report.free_curve.real)
    top_guard = curve_re[-1] - (curve_re[-1] - curve_re[-2] if len(curve_re) > 1 else 0.0)
    iso = (np.abs(w.imag) <= ISO_IM_TOL) & (dist >= iso_min_distance) \
        & (w.real <= top_guard)
    arc = (dist <= arc_tol) & ~iso
    classes = []
    arc_points = w[arc]
    for i, z in enumerate(w):
        if iso[i]:
            clearance = np.min(np.abs(z - arc_points)) if len(arc_points) else np.inf
            classes.append("isolated-real" if clearance >= 5.0 * match_tol
                           else "unclassified")
        elif arc[i]:
            classes.append("continuum-arc")
        elif z.imag < -ISO_IM_TOL:
            classes.append("resonance")
        else:
            classes.append("unclassified")
    report.classes = classes
    return report


def sector_check(report: SpectrumReport, growth_c: float, theta: complex) -> dict:
    """Flag eigenvalues violating |Im z| <= 4 C |theta| (|Re z| + 1).

    A relative eigensolver-roundoff slack keeps the degenerate theta = 0 case
    (bound identically zero on Hermitian input) meaningful."""
    w = report.eigenvalues
    bound = 4.0 * growth_c * abs(complex(theta)) * (np.abs(w.real) + 1.0)
    slack = 1e-12 * report.norm_estimate
    excess = np.abs(w.imag) - bound
    violations = np.nonzero(excess > slack)[0]
    return {
        "violations": int(len(violations)),
        "worst_margin": float(np.max(excess)),
        "violating": w[violations],
    }


def rectangle_scan(report: SpectrumReport, rect: Rectangle,
                   exclude=(), match_tol: float | None = None) -> dict:
    """Count eigenvalues inside the rectangle; split into those matching the
    exclude list (legitimately persisting eigenvalues) and strays."""
    if match_tol is None:
        match_tol = default_match_tol(rect.center_energy)
    w = report.eigenvalues
    inside = rect.contains(w, report.theta)
    matched, strays = [], []
    for z in w[inside]:
        if len(exclude) and np.min(np.abs(np.asarray(exclude) - z)) <= match_tol:
            matched.append(z)
        else:
            strays.append(z)
    stats = {
        "n_inside": int(np.count_nonzero(inside)),
        "matched": np.array(matched),
        "strays": np.array(strays),
        "stray_count": len(strays),
        "match_tol": match_tol,
        "rectangle": rect,
    }
    report.rectangle_stats = stats
    return stats


def theta_independence(reports: list, rect: Rectangle,
                       match_tol: float | None = None,
                       arc_window: tuple | None = None) -> dict:
    """Track in-rectangle isolated eigenvalues across consecutive theta.

    Greedy nearest-neighbour matching; raises MatchingAmbiguous when two
    candidates fall within match_tol of one target.  Also reports the median
    displacement of continuum-arc eigenvalues as the mobility contrast;
    `arc_window` restricts that median to arcs with Re z in the window (the
    energies actually being cleared; far from the dilation field's support
    the arcs barely move)."""
    if match_tol is None:
        match_tol = default_match_tol(rect.center_energy)
    reports = sorted(reports, key=lambda r: complex(r.theta).imag)
    iso_sets, arc_sets = [], []
    for rep in reports:
        w = rep.eigenvalues
        iso = np.array([z for z, c in zip(w, rep.classes) if c == "isolated-real"])
        iso_sets.append(iso[rect.contains(iso, rep.theta)] if len(iso) else iso)
        arcs = np.array([z for z, c in zip(w, rep.classes) if c == "continuum-arc"])
        if arc_window is not None and len(arcs):
            arcs = arcs[(arcs.real >= arc_window[0]) & (arcs.real <= arc_window[1])]
        arc_sets.append(arcs)
    drifts = []
    for a, b in zip(iso_sets[:-1], iso_sets[1:]):
        for z in a:
            if len(b) == 0:
                continue
            dist = np.abs(b - z)
            close = np.nonzero(dist <= match_tol)[0]
            if len(close) > 1:
                raise MatchingAmbiguous(
                    f"{len(close)} candidates within {match_tol:.2e} of {z}"
                )
            drifts.append(float(np.min(dist)))
    arc_drifts = []
    for a, b in zip(arc_sets[:-1], arc_sets[1:]):
        if len(a) == 0 or len(b) == 0:
            continue
        arc_drifts.extend(float(np.min(np.abs(b - z))) for z in a)
    return {
        "max_drift": max(drifts) if drifts else None,
        "drifts": drifts,
        "median_arc_drift": float(np.median(arc_drifts)) if arc_drifts else None,
        "thetas": [r.theta for r in reports],
    }


@dataclass(eq=False)
class RieszProjection:
    """Contour-quadrature spectral projection with rank diagnostics."""

    matrix: np.ndarray
    center: complex
    radius: float
    nodes: int
    rank: int
    idempotency_defect: float


def riesz_projection(fiberop: FiberOperator, center, radius: float,
                     nodes: int = 64, eigenvalues: np.ndarray | None = None,
                     clearance: float = 0.1) -> RieszProjection:
    """Trapezoidal contour quadrature of the resolvent around `center`.

    Requires spectral clearance: no eigenvalue within `clearance * radius`
    of the contour (checked against `eigenvalues`, computed if not given).
    """
    if eigenvalues is None:
        eigenvalues = sla.eigvals(fiberop.matrix)
    gap = np.abs(np.abs(eigenvalues - center) - radius)
    if np.min(gap) < clearance * radius:
        raise ContourTooClose(
            f"eigenvalue within {np.min(gap):.3e} of the contour "
            f"(required {clearance * radius:.3e})"
        )
    m = fiberop.size
    angles = 2.0 * np.pi * np.arange(nodes) / nodes
    p = np.zeros((m, m), dtype=complex)
    eye = np.eye(m, dtype=complex)
    for ang in angles:
        z = center + radius * np.exp(1j * ang)
        try:
            rz = sla.solve(z * eye - fiberop.matrix, eye)
        except sla.LinAlgError as exc:
            raise SolveFailure(f"resolvent solve failed at contour node {z}") from exc
        p += (z - center) * rz
    p /= nodes
    pev = sla.eigvals(p)
    rank = int(np.count_nonzero(np.abs(pev - 1.0) <= 1e-6))
    defect = float(np.linalg.norm(p @ p - p, 2))
    return RieszProjection(matrix=p, center=complex(center), radius=float(radius),
                           nodes=int(nodes), rank=rank, idempotency_defect=defect)


def _range_basis(p: np.ndarray, rank: int) -> np.ndarray:
    u, s, _ = sla.svd(p)
    return u[:, :rank]


class FeshbachReducer:
    """Precomputed block decomposition of H_theta against Ran p0 and its
    orthogonal complement; evaluates the Schur complement at many z cheaply."""

    def __init__(self, fiberop_theta: FiberOperator, p0, rank: int | None = None):
        if isinstance(p0, RieszProjection):
            pmat, n0 = p0.matrix, p0.rank
        else:
            pmat = np.asarray(p0)
            n0 = rank if rank is not None else int(round(np.real(np.trace(pmat))))
        if n0 < 1:
            raise ValueError("projection has rank 0")
        self.n0 = n0
        u = _range_basis(pmat, n0)
        q, _ = sla.qr(u, mode="full")
        basis_p, basis_q = q[:, :n0], q[:, n0:]
        h = fiberop_theta.matrix
        hq = h @ basis_q
        self.hpp = basis_p.conj().T @ h @ basis_p
        self.hpq = basis_p.conj().T @ hq
        self.hqp = basis_q.conj().T @ h @ basis_p
        self.hqq = basis_q.conj().T @ hq

    def at(self, z: complex) -> np.ndarray:
        m = self.hqq.shape[0]
        try:
            solve = sla.solve(self.hqq - z * np.eye(m), self.hqp)
        except sla.LinAlgError as exc:
            raise ReducedSingular(f"complement solve failed at z = {z}") from exc
        if not np.all(np.isfinite(solve)):
            raise ReducedSingular(f"complement solve diverged at z = {z}")
        return self.hpp - z * np.eye(self.n0) - self.hpq @ solve


def feshbach_map(fiberop_theta: FiberOperator, p0, z: complex,
                 rank: int | None = None) -> np.ndarray:
    """Schur complement of H_theta - z with respect to the projection p0.

    p0 is a RieszProjection or an explicit projection matrix (the
    unperturbed eigenprojection); returns the n0 x n0 matrix of the Feshbach
    map in an orthonormal basis of Ran p0.
    """
    return FeshbachReducer(fiberop_theta, p0, rank).at(z)


def winding_number(fiberop_theta: FiberOperator, p0, center: complex,
                   radius: float, nodes: int = 128) -> int:
    """Winding of det F around a circle: the enclosed zero count of det F."""
    reducer = FeshbachReducer(fiberop_theta, p0)
    angles = 2.0 * np.pi * np.arange(nodes + 1) / nodes
    dets = np.array([
        sla.det(reducer.at(center + radius * np.exp(1j * a))) for a in angles
    ])
    phases = np.angle(dets[1:] / dets[:-1])
    return int(round(float(np.sum(phases)) / (2.0 * np.pi)))


def aps_probe(fiberop: FiberOperator, lam: complex, n_vectors: int = 3,
              iters: int = 500, seed: int = 0) -> float:
    """Smallest singular value of H - lambda by inverse power iteration on
    (H - lambda)^H (H - lambda); a spectrum-membership probe independent of
    the eigensolver."""
    m = fiberop.size
    a = fiberop.matrix - lam * np.eye(m)
    try:
        lu, piv = sla.lu_factor(a)
    except sla.LinAlgError:
        return 0.0
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(n_vectors):
        x = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        x /= np.linalg.norm(x)
        est = np.inf
        for _ in range(iters):
            try:
                y = sla.lu_solve((lu, piv), x, trans=2)   # A^{-H} x
                w = sla.lu_solve((lu, piv), y)            # (A^H A)^{-1} x
            except (sla.LinAlgError, ValueError) as exc:
                raise SolveFailure(str(exc)) from exc
            nw = np.linalg.norm(w)
            if not np.isfinite(nw) or nw == 0.0:
                return 0.0
            new_est = 1.0 / np.sqrt(nw)
            x = w / nw
            if abs(new_est - est) <= 1e-13 * max(new_est, 1e-300):
                break
            est = new_est
        # x is now the right singular vector; Rayleigh quotient refines sigma
        sv = float(np.linalg.norm(a @ x))
        best = min(best, sv)
    return best


def report_to_csv(report: SpectrumReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im", "residual", "class"])
        for z, r, c in zip(report.eigenvalues, report.residuals, report.classes):
            writer.writerow([f"{z.real:.17g}", f"{z.imag:.17g}", f"{r:.17g}", c])
    return path


def report_summary(report: SpectrumReport) -> dict:
    counts = {c: report.classes.count(c) for c in CLASSES}
    out = {
        "xi": report.xi if not isinstance(report.xi, np.ndarray) else report.xi.tolist(),
        "theta": [complex(report.theta).real, complex(report.theta).imag],
        "counts": counts,
        "max_residual": float(np.max(report.residuals)),
        "n_flagged": int(np.count_nonzero(report.flagged)),
    }
    if report.rectangle_stats is not None:
        rs = report.rectangle_stats
        out["rectangle"] = {
            "n_inside": rs["n_inside"],
            "stray_count": rs["stray_count"],
            "matched": [[z.real, z.imag] for z in rs["matched"]],
        }
    return out


def save_summary(report: SpectrumReport, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(report_summary(report), fh, indent=2, sort_keys=True)
    return path
