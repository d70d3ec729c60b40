"""Threshold sets (critical values of the fibered symbol) and empirical
tracking of eigenvalue bands over a sweep parameter."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispersion import DispersionSpec, grad_omega_xi, hess_omega_xi, omega_xi
from .errors import InsufficientPoints, ThresholdCollision
from .spectra import (
    Rectangle,
    SpectrumReport,
    classify,
    default_match_tol,
    eigendecompose,
    rectangle_scan,
    riesz_projection,
)


@dataclass(frozen=True)
class ThresholdSet:
    """Critical points/values of omega_xi found by Newton iteration."""

    xi: object
    critical_points: np.ndarray
    critical_values: np.ndarray
    newton_tol: float
    n_seeds: int = 0
    n_converged: int = 0

    def distance(self, lam: float) -> float:
        if len(self.critical_values) == 0:
            return np.inf
        return float(np.min(np.abs(self.critical_values - lam)))


def threshold_set(spec1: DispersionSpec, spec2: DispersionSpec, xi,
                  seeds=None, newton_tol: float = 1e-10, max_iter: int = 60,
                  dedupe: float = 1e-9) -> ThresholdSet:
    """Newton iteration on grad omega_xi = 0 from every seed; converged roots
    are deduplicated and verified against the gradient tolerance.
    Non-convergent seeds are dropped (count reported)."""
    d = spec2.dim
    if seeds is None:
        ax = np.linspace(-8.0, 8.0, 33)
        seeds = ax[:, None] if d == 1 else \
            np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.shape[1] != d:
        seeds = seeds.reshape(-1, d)
    roots = []
    n_conv = 0
    for seed in seeds:
        k = seed.astype(complex)
        ok = False
        for _ in range(max_iter):
            arg = k[0] if d == 1 else k
            g = np.atleast_1d(np.asarray(grad_omega_xi(spec1, spec2, xi, arg))).reshape(d)
            if np.max(np.abs(g)) <= newton_tol:
                ok = True
                break
            h = np.asarray(hess_omega_xi(spec1, spec2, xi, arg)).reshape(d, d)
            try:
                step = np.linalg.solve(h, g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > 1e3:
                break
            k = k - step
        if not ok:
            continue
        root = k.real
        arg = root[0] if d == 1 else root
        if np.max(np.abs(np.atleast_1d(
                np.asarray(grad_omega_xi(spec1, spec2, xi, arg))))) > 1e-10:
            continue
        n_conv += 1
        if not any(np.max(np.abs(root - r)) <= dedupe for r in roots):
            roots.append(root)
    points = np.array(roots) if roots else np.zeros((0, d))
    if len(points):
        args = points[:, 0] if d == 1 else points
        pvals = np.atleast_1d(np.asarray(
            omega_xi(spec1, spec2, xi, args.astype(complex))).real)
        order = np.argsort(pvals)
        points, pvals = points[order], pvals[order]
        # distinct critical points may share a critical value; values are
        # deduplicated, points are all kept
        keep = np.concatenate([[True], np.diff(pvals) > dedupe])
        values = pvals[keep]
    else:
        values = np.zeros(0)
    return ThresholdSet(xi=xi, critical_points=points, critical_values=values,
                        newton_tol=newton_tol, n_seeds=len(seeds), n_converged=n_conv)


@dataclass
class BandPoint:
    xi: float
    lam: complex
    multiplicity: int
    residual: float


@dataclass
class BandData:
    """Tracked eigenvalue branches over the sweep grid."""

    xi_grid: np.ndarray
    branches: list        # list of list[BandPoint]
    gaps: list            # (xi index, reason)
    matching_tol: float
    band_lipschitz: float


def band_sweep(
    assemble,
    xi_grid,
    rect,
    thresholds=None,
    match_tol: float | None = None,
    band_lipschitz: float = 10.0,
    eig_tol: float = 1e-8,
    riesz_nodes: int = 32,
    riesz_radius_factor: float = 0.35,
) -> BandData:
    """Track isolated-real in-rectangle eigenvalues across the sweep grid.

    `assemble(xi)` returns the deformed FiberOperator at the sweep point;
    `rect` is a Rectangle or a callable xi -> Rectangle; `thresholds`, when
    given, is a callable xi -> ThresholdSet used to refuse rectangles that
    collide with the threshold set.  Matching is greedy nearest-value with a
    Lipschitz guard; ambiguities and lost branches are recorded as gaps,
    never merged silently.  Multiplicity is the Riesz rank around each
    tracked eigenvalue.
    """
    xi_grid = np.asarray(xi_grid, dtype=float)
    rect_at = rect if callable(rect) else (lambda _xi: rect)
    branches: list = []
    open_branches: list = []
    gaps: list = []
    tol = match_tol
    for idx, xi in enumerate(xi_grid):
        r = rect_at(xi)
        if tol is None:
            tol = default_match_tol(r.center_energy)
        if thresholds is not None:
            ts = thresholds(xi)
            if ts.distance(r.center_energy) <= r.half_width:
                raise ThresholdCollision(
                    f"rectangle at xi = {xi:g} hits the threshold set"
                )
        op = assemble(xi)
        rep = classify(eigendecompose(op, eig_tol))
        stats = rectangle_scan(rep, r, exclude=(), match_tol=tol)
        iso = [z for z, c in zip(rep.eigenvalues, rep.classes)
               if c == "isolated-real" and r.contains(np.array([z]), rep.theta)[0]]
        resid = {complex(z): float(rep.residuals[i])
                 for i, z in enumerate(rep.eigenvalues)}
        used = set()
        still_open = []
        for branch in open_branches:
            prev = branch[-1]
            dxi = abs(xi - prev.xi)
            cands = [z for z in iso if complex(z) not in used
                     and abs(z - prev.lam) <= band_lipschitz * dxi]
            if not cands:
                gaps.append((idx, "lost"))
                branches.append(branch)
                continue
            cands.sort(key=lambda z: abs(z - prev.lam))
            if len(cands) > 1 and abs(cands[1] - prev.lam) - abs(cands[0] - prev.lam) <= tol:
                gaps.append((idx, "ambiguous"))
                branches.append(branch)
                continue
            z = complex(cands[0])
            used.add(z)
            mult = _riesz_rank(op, z, rep, r, riesz_nodes, riesz_radius_factor)
            branch.append(BandPoint(xi=float(xi), lam=z, multiplicity=mult,
                                    residual=resid[z]))
            still_open.append(branch)
        for z in iso:
            z = complex(z)
            if z in used:
                continue
            mult = _riesz_rank(op, z, rep, r, riesz_nodes, riesz_radius_factor)
            still_open.append([BandPoint(xi=float(xi), lam=z, multiplicity=mult,
                                         residual=resid[z])])
        open_branches = still_open
        del stats
    branches.extend(open_branches)
    return BandData(xi_grid=xi_grid, branches=branches, gaps=gaps,
                    matching_tol=tol if tol is not None else 0.0,
                    band_lipschitz=band_lipschitz)


def _riesz_rank(op, z, rep: SpectrumReport, rect: Rectangle,
                nodes: int, radius_factor: float) -> int:
    others = rep.eigenvalues[np.abs(rep.eigenvalues - z) > 1e-12]
    nearest = float(np.min(np.abs(others - z))) if len(others) else rect.half_width
    radius = radius_factor * min(nearest, rect.half_width)
    proj = riesz_projection(op, z, radius, nodes=nodes,
                            eigenvalues=rep.eigenvalues)
    return proj.rank


def branch_regularity(band: BandData, branch_id: int, degree: int,
                      meeting_point: float | None = None) -> dict:
    """Least-squares polynomial fit of a branch; near a meeting point also
    fits fractional exponents 1/l, l in {1,2,3}, and reports the best."""
    branch = band.branches[branch_id]
    if len(branch) < degree + 3:
        raise InsufficientPoints(
            f"branch has {len(branch)} points; need {degree + 3}"
        )
    xi = np.array([p.xi for p in branch])
    lam = np.array([p.lam.real for p in branch])
    coeffs = np.polyfit(xi, lam, degree)
    fit = np.polyval(coeffs, xi)
    residual = float(np.sqrt(np.mean((fit - lam) ** 2)))
    out = {"degree": degree, "coefficients": coeffs.tolist(), "residual": residual}
    if meeting_point is not None:
        best = None
        for ell in (1, 2, 3):
            s = np.sign(xi - meeting_point)
            t = np.abs(xi - meeting_point) ** (1.0 / ell) * np.where(s >= 0, 1.0, -1.0)
            a = np.column_stack([np.ones_like(t), t])
            sol, *_ = np.linalg.lstsq(a, lam, rcond=None)
            r = float(np.sqrt(np.mean((a @ sol - lam) ** 2)))
            if best is None or r < best[1]:
                best = (ell, r, sol.tolist())
        out["puiseux"] = {"ell": best[0], "residual": best[1], "coefficients": best[2]}
    return out


def thresholds_to_csv(rows, path) -> Path:
    """rows: iterable of (xi, ThresholdSet)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi", "critical_value"])
        for xi, ts in rows:
            for val in ts.critical_values:
                writer.writerow([f"{xi:.17g}", f"{val:.17g}"])
    return path


def band_to_csv(band: BandData, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi", "branch_id", "re_lambda", "im_lambda",
                        "multiplicity", "residual"])
        for bid, branch in enumerate(band.branches):
            for p in branch:
                writer.writerow([
                    f"{p.xi:.17g}", bid, f"{p.lam.real:.17g}",
                    f"{p.lam.imag:.17g}", p.multiplicity, f"{p.residual:.17g}",
                ])
    return path
