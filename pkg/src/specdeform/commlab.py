"""Finite-dimensional laboratory for the abstract commutator machinery:
iterated commutators, the conjugation power series with its growth constant,
relative bounds of the deformation difference, the spectral sector bound and
analytic-vector regularization, all on explicit Hermitian matrix pairs where
every estimate is directly computable.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import RadiusExceeded

_I = 1j


@dataclass(frozen=True, eq=False)
class MatrixPair:
    """A pair of Hermitian matrices (H, A) with provenance."""

    h: np.ndarray
    a: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        n = self.h.shape[0]
        if self.h.shape != (n, n) or self.a.shape != (n, n):
            raise ValueError("H and A must be square of equal size")
        if n > 200:
            raise ValueError("laboratory pairs are limited to n <= 200")
        for name, m in (("H", self.h), ("A", self.a)):
            defect = np.max(np.abs(m - m.conj().T))
            if defect > 1e-14 * max(1.0, float(np.max(np.abs(m)))):
                raise ValueError(f"{name} is not Hermitian (defect {defect:.2e})")

    @property
    def n(self) -> int:
        return self.h.shape[0]


def random_pair(n: int, seed: int) -> MatrixPair:
    """Seeded standard-complex-normal entries, Hermitized by averaging."""
    rng = np.random.default_rng(seed)

    def herm():
        m = rng.standard_normal((n, n)) + _I * rng.standard_normal((n, n))
        return (m + m.conj().T) / 2.0

    return MatrixPair(h=herm(), a=herm(), provenance=f"seed={seed}")


def pauli_pair() -> MatrixPair:
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    return MatrixPair(h=sx, a=sz, provenance="pauli")


@dataclass(frozen=True, eq=False)
class CommutatorLadder:
    """ad_A^k(H) for k = 0..k_max with the fitted growth constant."""

    ad: list
    growth_constant: float
    resolvent_norms: np.ndarray

    @property
    def radius(self) -> float:
        """Series radius R' = 1/(3C)."""
        return 1.0 / (3.0 * self.growth_constant)


def ladder(pair: MatrixPair, k_max: int) -> CommutatorLadder:
    """Iterated commutators ad_{k+1} = ad_k A - A ad_k and the smallest C
    with ||ad_k (H+i)^{-1}|| <= C^k k! over the computed range."""
    n = pair.n
    resolvent = sla.solve(pair.h + _I * np.eye(n), np.eye(n, dtype=complex))
    ads = [pair.h.copy()]
    norms = [float(np.linalg.norm(pair.h @ resolvent, 2))]
    kfact = 1.0
    growth = 0.0
    for k in range(1, k_max + 1):
        nxt = ads[-1] @ pair.a - pair.a @ ads[-1]
        ads.append(nxt)
        kfact *= k
        norms.append(float(np.linalg.norm(nxt @ resolvent, 2)))
        if norms[-1] > 0:
            growth = max(growth, (norms[-1] / kfact) ** (1.0 / k))
    return CommutatorLadder(ad=ads, growth_constant=max(growth, 1e-300),
                            resolvent_norms=np.array(norms))


def conjugate_series(pair: MatrixPair, theta: complex, k_max: int,
                     lad: CommutatorLadder | None = None):
    """Partial sum of H_theta = sum (-theta)^k / k! i^k ad_A^k(H) with a
    geometric-tail truncation bound; requires |theta| < R' = 1/(3C)."""
    if lad is None or len(lad.ad) < k_max + 1:
        lad = ladder(pair, k_max)
    c = lad.growth_constant
    theta = complex(theta)
    if abs(theta) >= lad.radius:
        raise RadiusExceeded(
            f"|theta| = {abs(theta):.4g} outside the series disc R' = {lad.radius:.4g}"
        )
    total = np.zeros_like(pair.h)
    coeff = 1.0 + 0.0j
    for k in range(k_max + 1):
        total = total + coeff * (_I**k) * lad.ad[k]
        coeff *= -theta / (k + 1)
    q = c * abs(theta)
    resolvent_scale = float(np.linalg.norm(pair.h + _I * np.eye(pair.n), 2))
    tail = q ** (k_max + 1) / (1.0 - q) * resolvent_scale
    return total, float(tail)


def exponential_conjugation(pair: MatrixPair, theta: complex) -> np.ndarray:
    """Oracle e^{i theta A} H e^{-i theta A} via the Hermitian eigenbasis of A;
    for complex theta this is the entire analytic continuation."""
    if theta == 0:
        return pair.h.copy()
    w, u = np.linalg.eigh(pair.a)
    left = u @ np.diag(np.exp(_I * complex(theta) * w)) @ u.conj().T
    right = u @ np.diag(np.exp(-_I * complex(theta) * w)) @ u.conj().T
    return left @ pair.h @ right


def w_theta_bound(pair: MatrixPair, theta: complex, k_max: int = 60,
                  lad: CommutatorLadder | None = None) -> dict:
    """||(H_theta - H)(H+i)^{-1}|| against the bound C|theta|/(1 - C|theta|)."""
    if lad is None:
        lad = ladder(pair, k_max)
    h_theta = exponential_conjugation(pair, theta)
    resolvent = sla.solve(pair.h + _I * np.eye(pair.n), np.eye(pair.n, dtype=complex))
    observed = float(np.linalg.norm((h_theta - pair.h) @ resolvent, 2))
    c = lad.growth_constant
    q = c * abs(complex(theta))
    if q >= 1.0 / 3.0:
        raise RadiusExceeded(f"C|theta| = {q:.4g} >= 1/3")
    bound = q / (1.0 - q)
    return {"observed": observed, "bound": bound, "passed": bool(observed <= bound)}


def sector_bound_finite(pair: MatrixPair, theta: complex, growth_c: float,
                        matrix: np.ndarray | None = None) -> dict:
    """Eigenvalues of the finite H_theta against |Im z| <= 4C|theta|(|Re z|+1),
    with an eigensolver-roundoff slack on the degenerate theta = 0 axis.

    The exact conjugation is a similarity at finite dimension, so its
    spectrum stays real and satisfies the bound trivially; pass a truncated
    series via `matrix` to exercise a genuinely perturbed family."""
    if matrix is None:
        matrix = exponential_conjugation(pair, theta)
    w = np.linalg.eigvals(matrix)
    bound = 4.0 * growth_c * abs(complex(theta)) * (np.abs(w.real) + 1.0)
    slack = 1e-12 * (np.abs(w.real) + 1.0)
    excess = np.abs(w.imag) - bound
    return {"violations": int(np.count_nonzero(excess > slack)),
            "worst_margin": float(np.max(excess))}


def gaussian_regularize(pair: MatrixPair, psi: np.ndarray, m: int,
                        theta: complex) -> np.ndarray:
    """psi_m(theta) = exp(-A^2/(2m) + i theta A) psi by the calculus of A."""
    w, u = np.linalg.eigh(pair.a)
    weights = np.exp(-(w**2) / (2.0 * m) + _I * complex(theta) * w)
    return u @ (weights * (u.conj().T @ psi))


def contour_derivatives(pair: MatrixPair, k_max: int, radius: float,
                        nodes: int = 64) -> list:
    """k! B_k from contour integrals of theta -> H_theta (computed with the
    exponential oracle); equals i^k (-1)^k ad_A^k(H) within the series disc."""
    angles = 2.0 * np.pi * np.arange(nodes) / nodes
    zs = radius * np.exp(_I * angles)
    hs = [exponential_conjugation(pair, z) for z in zs]
    out = []
    kfact = 1.0
    for k in range(k_max + 1):
        acc = np.zeros_like(pair.h)
        for z, hz in zip(zs, hs):
            acc = acc + hz * z ** (-k)
        acc /= nodes
        if k > 0:
            kfact *= k
        out.append(kfact * acc)
    return out
