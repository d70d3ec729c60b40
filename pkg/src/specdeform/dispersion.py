"""Closed-form analytic dispersion families and the dilation vector field.

All three families are radial in the analytic square u = k_1^2 + ... + k_d^2
(not the modulus square), so analytic continuation into a complex strip is
exact: evaluate the scalar profile p at complex u.

    even_polynomial : p(u) = sum_m c_m u^m
    quartic         : p(u) = u^2 + c_0 + c_1 u
    relativistic    : p(u) = (1 + u)^s, principal branch

The fibered symbol is omega_xi(k) = omega_1(xi - k) + omega_2(k) and the
dilation field is v_xi(k) = exp(-k^2 - xi^2) * grad_k omega_xi(k), again with
analytic squares in the exponent.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import NonFinite, StripViolation

_FAMILIES = ("even_polynomial", "quartic", "relativistic")


@dataclass(frozen=True)
class DispersionSpec:
    """One dispersion relation omega_j with its strip/growth metadata.

    coefficients are ascending in powers of the analytic square k^2; for the
    quartic family they are the optional lower-order terms below the leading
    (k^2)^2.  An empty coefficient list is the zero dispersion, used when one
    particle carries no kinetic term.
    """

    family: str
    dim: int = 1
    coefficients: tuple = ()
    exponent: float = 0.5
    strip_radius: float = 0.5
    growth_exponent: float | None = None
    growth_constant: float | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown dispersion family {self.family!r}")
        if not 1 <= self.dim <= 3:
            raise ValueError("dim must be 1, 2 or 3")
        if self.strip_radius <= 0:
            raise ValueError("strip_radius must be positive")
        if self.family == "relativistic":
            if self.exponent <= 0:
                raise ValueError("relativistic exponent must be positive")
            # keeps 1 + k^2 in the right half-plane on S_{2R}
            if self.strip_radius >= 0.5 / np.sqrt(self.dim):
                raise ValueError(
                    "relativistic family needs strip_radius < d^(-1/2)/2"
                )
        if self.family == "quartic" and len(self.coefficients) > 2:
            raise ValueError("quartic lower terms are at most [const, k^2]")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.growth_exponent is None:
            object.__setattr__(self, "growth_exponent", self._default_growth_exponent())

    def _default_growth_exponent(self) -> float:
        if self.family == "relativistic":
            return 2.0 * self.exponent
        c = self._profile_coefficients()
        nz = np.nonzero(c)[0]
        return 0.0 if len(nz) == 0 else 2.0 * float(nz[-1])

    def _profile_coefficients(self) -> np.ndarray:
        if self.family == "relativistic":
            raise ValueError("relativistic profile is not polynomial")
        if self.family == "quartic":
            low = list(self.coefficients) + [0.0] * (2 - len(self.coefficients))
            return np.array(low + [1.0])
        return np.array(self.coefficients if self.coefficients else [0.0])


def _points(k, dim: int):
    """Coerce k to complex points of shape (..., dim); return (pts, out_shape)."""
    a = np.asarray(k, dtype=complex)
    if dim == 1:
        return a[..., None], a.shape
    if a.ndim == 0 or a.shape[-1] != dim:
        raise ValueError(f"expected last axis of length {dim}")
    return a, a.shape[:-1]


def _check_strip(pts: np.ndarray, half_width: float, what: str = "k"):
    if np.any(np.abs(pts.imag) >= half_width):
        worst = float(np.max(np.abs(pts.imag)))
        raise StripViolation(
            f"{what} has |Im| = {worst:.6g}, outside the admissible strip "
            f"of half-width {half_width:.6g}"
        )


def _analytic_square(pts: np.ndarray) -> np.ndarray:
    return np.sum(pts * pts, axis=-1)


def _profile(spec: DispersionSpec, u: np.ndarray, order: int):
    """Values of the radial profile p and its first `order` derivatives at u."""
    if spec.family == "relativistic":
        base = 1.0 + u
        if np.any(base.real <= 0):
            raise StripViolation("1 + k^2 left the principal-branch half-plane")
        s = spec.exponent
        out = [np.power(base, s)]
        if order >= 1:
            out.append(s * np.power(base, s - 1.0))
        if order >= 2:
            out.append(s * (s - 1.0) * np.power(base, s - 2.0))
        return out
    c = spec._profile_coefficients()
    out = [npoly.polyval(u, c)]
    for _ in range(order):
        c = npoly.polyder(c)
        if len(c) == 0:
            c = np.array([0.0])
        out.append(npoly.polyval(u, c))
    return out


def eval_omega(spec: DispersionSpec, k) -> np.ndarray:
    """Analytic continuation of omega at k; real for real k."""
    pts, shape = _points(k, spec.dim)
    _check_strip(pts, 2.0 * spec.strip_radius)
    (p,) = _profile(spec, _analytic_square(pts), 0)
    return p.reshape(shape)


def grad_omega(spec: DispersionSpec, k) -> np.ndarray:
    """Gradient of omega in k.  For dim 1 the output matches the input shape."""
    pts, shape = _points(k, spec.dim)
    _check_strip(pts, 2.0 * spec.strip_radius)
    _, p1 = _profile(spec, _analytic_square(pts), 1)
    g = 2.0 * pts * p1[..., None]
    return g.reshape(shape) if spec.dim == 1 else g.reshape(shape + (spec.dim,))


def hess_omega(spec: DispersionSpec, k) -> np.ndarray:
    """Hessian of omega in k, shape (..., dim, dim)."""
    pts, shape = _points(k, spec.dim)
    _check_strip(pts, 2.0 * spec.strip_radius)
    _, p1, p2 = _profile(spec, _analytic_square(pts), 2)
    d = spec.dim
    outer = pts[..., :, None] * pts[..., None, :]
    eye = np.eye(d)
    h = 4.0 * p2[..., None, None] * outer + 2.0 * p1[..., None, None] * eye
    return h.reshape(shape + (d, d))


def omega_xi(spec1: DispersionSpec, spec2: DispersionSpec, xi, k) -> np.ndarray:
    """Fibered symbol omega_1(xi - k) + omega_2(k)."""
    d = spec2.dim
    xpts, _ = _points(xi, d)
    kpts, shape = _points(k, d)
    w1 = eval_omega(spec1, _strip_arg(xpts - kpts, d))
    w2 = eval_omega(spec2, _strip_arg(kpts, d))
    return (np.asarray(w1) + np.asarray(w2)).reshape(shape)


def _strip_arg(pts, d):
    return pts[..., 0] if d == 1 else pts


def grad_omega_xi(spec1, spec2, xi, k) -> np.ndarray:
    """Gradient in k of the fibered symbol: -grad omega_1(xi-k) + grad omega_2(k)."""
    d = spec2.dim
    xpts, _ = _points(xi, d)
    kpts, shape = _points(k, d)
    g1 = np.asarray(grad_omega(spec1, _strip_arg(xpts - kpts, d)))
    g2 = np.asarray(grad_omega(spec2, _strip_arg(kpts, d)))
    g = g2 - g1
    return g.reshape(shape) if d == 1 else g.reshape(shape + (d,))


def hess_omega_xi(spec1, spec2, xi, k) -> np.ndarray:
    d = spec2.dim
    xpts, _ = _points(xi, d)
    kpts, shape = _points(k, d)
    h1 = hess_omega(spec1, _strip_arg(xpts - kpts, d))
    h2 = hess_omega(spec2, _strip_arg(kpts, d))
    return (h1 + h2).reshape(shape + (d, d))


def _envelope(xi_pts, k_pts):
    return np.exp(-_analytic_square(k_pts) - _analytic_square(xi_pts))


def vector_field(spec1, spec2, xi, k) -> np.ndarray:
    """Dilation field v_xi(k) = exp(-k^2 - xi^2) grad_k omega_xi(k)."""
    d = spec2.dim
    xpts, _ = _points(xi, d)
    kpts, shape = _points(k, d)
    g = np.asarray(grad_omega_xi(spec1, spec2, xi, k))
    env = _envelope(xpts, kpts)
    if d == 1:
        return (env.reshape(shape) * g).reshape(shape)
    return env.reshape(shape)[..., None] * g


def divergence_v(spec1, spec2, xi, k) -> np.ndarray:
    """Divergence of the dilation field, in closed form."""
    d = spec2.dim
    xpts, _ = _points(xi, d)
    kpts, shape = _points(k, d)
    g = grad_omega_xi(spec1, spec2, xi, k)
    g = np.asarray(g).reshape(shape + (d,)) if d > 1 else np.asarray(g).reshape(shape + (1,))
    h = hess_omega_xi(spec1, spec2, xi, k)
    lap = np.trace(h, axis1=-2, axis2=-1)
    kg = np.sum(kpts * g, axis=-1).reshape(shape)
    env = _envelope(xpts, kpts).reshape(shape)
    return env * (lap - 2.0 * kg)


def jacobian_v(spec1, spec2, xi, k) -> np.ndarray:
    """Jacobian D v_xi(k), shape (..., dim, dim); (Dv)_{ij} = d v_i / d k_j."""
    d = spec2.dim
    xpts, _ = _points(xi, d)
    kpts, shape = _points(k, d)
    g = np.asarray(grad_omega_xi(spec1, spec2, xi, k))
    g = g.reshape(shape + (d,)) if d > 1 else g.reshape(shape + (1,))
    h = hess_omega_xi(spec1, spec2, xi, k)
    env = _envelope(xpts, kpts).reshape(shape)
    outer = g[..., :, None] * kpts[..., None, :]
    return env[..., None, None] * (h - 2.0 * outer)


@dataclass(frozen=True)
class FieldBounds:
    """Sampled suprema of |v_xi| and ||D v_xi|| over a strip, with inflation."""

    c_omega: float
    c_omega_prime: float
    certified_on: dict = field(default_factory=dict)
    raw_c_omega: float = 0.0
    raw_c_omega_prime: float = 0.0
    inflation: float = 1.25

    def __post_init__(self):
        for name in ("c_omega", "c_omega_prime"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise NonFinite(f"{name} = {val} is not a finite nonnegative bound")


def certify_bounds(
    spec1: DispersionSpec,
    spec2: DispersionSpec,
    xi_box,
    strip: float,
    resolution: float,
    k_extent: float = 8.0,
    im_levels: int = 5,
    inflation: float = 1.25,
) -> FieldBounds:
    """Certify C_omega and C'_omega on a sampled sub-strip.

    xi_box is a (lo, hi) pair per axis (a single pair for dim 1) sampled on
    the real axis; k is sampled on Re in [-k_extent, k_extent] and Im on
    `im_levels` levels filling [-strip, strip].  The returned bounds are the
    sampled suprema inflated by the stated factor; they are deterministic for
    fixed resolution.
    """
    d = spec2.dim
    min_strip = min(spec1.strip_radius, spec2.strip_radius)
    if strip > min_strip:
        raise StripViolation(
            f"requested sub-strip {strip:g} exceeds the declared strip radius {min_strip:g}"
        )
    box = np.atleast_2d(np.asarray(xi_box, dtype=float))
    if box.shape != (d, 2):
        raise ValueError(f"xi_box must provide (lo, hi) per axis, got shape {box.shape}")

    def axis_samples(lo, hi):
        n = max(3, int(np.ceil((hi - lo) / resolution)) + 1)
        return np.linspace(lo, hi, min(n, 41))

    xi_axes = [axis_samples(lo, hi) for lo, hi in box]
    xi_samples = np.stack(np.meshgrid(*xi_axes, indexing="ij"), axis=-1).reshape(-1, d)

    n_re = max(9, int(np.ceil(2 * k_extent / resolution)) + 1)
    re_ax = np.linspace(-k_extent, k_extent, min(n_re, 1201))
    im_ax = np.linspace(-strip, strip, im_levels) if strip > 0 else np.array([0.0])

    sup_v = 0.0
    sup_dv = 0.0
    for xi in xi_samples:
        xi_arg = xi[0] if d == 1 else xi
        for im in im_ax:
            if d == 1:
                kk = re_ax + 1j * im
            else:
                # diagonal imaginary offset; componentwise strips are respected
                grids = np.meshgrid(*([re_ax] * d), indexing="ij")
                kk = np.stack(grids, axis=-1).reshape(-1, d) + 1j * im
            v = np.asarray(vector_field(spec1, spec2, xi_arg, kk))
            dv = jacobian_v(spec1, spec2, xi_arg, kk)
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(dv))):
                raise NonFinite("dispersion family diverged on the sample set")
            vmag = np.abs(v) if d == 1 else np.linalg.norm(v, axis=-1)
            sup_v = max(sup_v, float(np.max(vmag)))
            sup_dv = max(sup_dv, float(np.max(np.linalg.svd(dv, compute_uv=False)[..., 0])))

    meta = {
        "strip": strip,
        "resolution": resolution,
        "k_extent": k_extent,
        "im_levels": int(len(im_ax)),
        "xi_samples": int(len(xi_samples)),
    }
    return FieldBounds(
        c_omega=inflation * sup_v,
        c_omega_prime=inflation * sup_dv,
        certified_on=meta,
        raw_c_omega=sup_v,
        raw_c_omega_prime=sup_dv,
        inflation=inflation,
    )


def certify_growth(
    spec: DispersionSpec,
    k_extent: float = 12.0,
    resolution: float = 0.05,
    im_levels: int = 5,
    inflation: float = 1.25,
) -> float:
    """Smallest constant (inflated) satisfying the two-sided growth bound.

    On every sample the certified value C satisfies
    C^{-1} <k>^s - C <= |omega(k)| <= C <k>^s and |grad omega(k)| <= C <k>^s.
    """
    d, s = spec.dim, spec.growth_exponent
    n_re = min(1201, max(9, int(np.ceil(2 * k_extent / resolution)) + 1))
    re_ax = np.linspace(-k_extent, k_extent, n_re)
    b = min(2.0 * spec.strip_radius * 0.999, 2.0 * spec.strip_radius - 1e-12)
    im_ax = np.linspace(-b, b, im_levels)
    need = 1.0
    for im in im_ax:
        if d == 1:
            kk = re_ax + 1j * im
        else:
            grids = np.meshgrid(*([re_ax] * d), indexing="ij")
            kk = np.stack(grids, axis=-1).reshape(-1, d) + 1j * im
        pts, _ = _points(kk, d)
        jap = np.power(1.0 + np.sum(np.abs(pts) ** 2, axis=-1), 0.5 * s)
        w = np.abs(np.asarray(eval_omega(spec, kk)))
        g = np.asarray(grad_omega(spec, kk))
        gmag = np.abs(g) if d == 1 else np.linalg.norm(g, axis=-1)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(gmag))):
            raise NonFinite("growth sampling hit a non-finite value")
        upper = np.max(np.maximum(w, gmag) / jap)
        # lower bound C^{-1} a - C <= b  <=>  C >= (-b + sqrt(b^2 + 4a)) / 2
        lower = np.max((-w + np.sqrt(w**2 + 4.0 * jap)) / 2.0)
        need = max(need, float(upper), float(lower))
    return inflation * need
