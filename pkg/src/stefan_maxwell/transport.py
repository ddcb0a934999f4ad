"""Onsager transport matrix for ideal-gas Stefan-Maxwell diffusion.

All matrix builders accept concentrations of shape (..., n) and return
arrays of shape (..., n, n), so the same code serves a single point and a
whole grid of quadrature points.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

DEFAULT_KAPPA_MIN = 1e-10


class TransportError(ValueError):
    pass


class PositivityError(TransportError):
    """A concentration fell below the positivity floor.

    ``species`` is the offending species index; ``index`` is the position
    in the leading (point) dimensions, when available.
    """

    def __init__(self, message: str, species: int, value: float, index=None):
        super().__init__(message)
        self.species = species
        self.value = value
        self.index = index


@dataclass(frozen=True)
class TransportCoefficients:
    """Species count, diffusivities, molar masses, RT and augmentation gamma.

    Only the off-diagonal entries of ``D`` are read.  Negative off-diagonal
    diffusivities are admitted.
    """

    D: np.ndarray
    molar_masses: np.ndarray
    RT: float = 1.0
    gamma: float = 1.0
    names: tuple[str, ...] | None = None
    kappa_min: float = DEFAULT_KAPPA_MIN
    _inv_D: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        D = np.array(self.D, dtype=float)
        Mm = np.array(self.molar_masses, dtype=float)
        n = len(Mm)
        if n < 2:
            raise TransportError("need at least two species")
        if D.shape != (n, n):
            raise TransportError(f"diffusivity table has shape {D.shape}, expected {(n, n)}")
        off = ~np.eye(n, dtype=bool)
        if np.any(D[off] == 0) or not np.all(np.isfinite(D[off])):
            raise TransportError("off-diagonal diffusivities must be finite and nonzero")
        if not np.array_equal(D[off], D.T[off]):
            raise TransportError("diffusivity table must be symmetric")
        if np.any(Mm <= 0):
            raise TransportError("molar masses must be strictly positive")
        if not self.RT > 0:
            raise TransportError("RT must be positive")
        if self.gamma < 0:
            raise TransportError("gamma must be nonnegative")
        inv = np.zeros_like(D)
        inv[off] = 1.0 / D[off]
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "molar_masses", Mm)
        object.__setattr__(self, "_inv_D", inv)

    @property
    def n(self) -> int:
        return len(self.molar_masses)

    def diffusivity(self, i: int | str, j: int | str) -> float:
        i, j = self._index(i), self._index(j)
        if i == j:
            raise TransportError("diagonal diffusivities are undefined")
        return float(self.D[i, j])

    def _index(self, s: int | str) -> int:
        if isinstance(s, str):
            if self.names is None:
                raise TransportError("species have no names")
            return self.names.index(s)
        return int(s)

    def with_gamma(self, gamma: float) -> "TransportCoefficients":
        return dataclasses.replace(self, gamma=gamma)

    @classmethod
    def from_pairs(
        cls,
        n: int,
        pairs: Mapping[tuple[int, int], float] | Sequence[tuple[int, int, float]],
        molar_masses: Sequence[float],
        RT: float = 1.0,
        gamma: float = 1.0,
        names: Sequence[str] | None = None,
    ) -> "TransportCoefficients":
        """Build from the n(n-1)/2 independent pairs (either index order)."""
        items = pairs.items() if isinstance(pairs, Mapping) else (((i, j), v) for i, j, v in pairs)
        D = np.full((n, n), np.nan)
        for (i, j), v in items:
            if i == j:
                raise TransportError(f"diagonal diffusivity D[{i},{j}] given")
            if not np.isnan(D[i, j]) and D[i, j] != v:
                raise TransportError(f"conflicting values for D[{i},{j}]")
            D[i, j] = D[j, i] = v
        off = ~np.eye(n, dtype=bool)
        if np.any(np.isnan(D[off])):
            missing = [(i, j) for i in range(n) for j in range(i + 1, n) if np.isnan(D[i, j])]
            raise TransportError(f"missing diffusivities for pairs {missing}")
        np.fill_diagonal(D, 0.0)
        return cls(D, np.asarray(molar_masses, float), RT, gamma, tuple(names) if names else None)


@dataclass(frozen=True)
class PointState:
    c: np.ndarray
    c_T: float
    rho: float

    @classmethod
    def from_concentrations(cls, c: Sequence[float], molar_masses: Sequence[float]) -> "PointState":
        c = np.asarray(c, dtype=float)
        return cls(c, float(c.sum()), float(np.dot(molar_masses, c)))


def check_positive(c: np.ndarray, kappa_min: float = DEFAULT_KAPPA_MIN) -> None:
    """Raise :class:`PositivityError` for the first entry below ``kappa_min``."""
    c = np.asarray(c)
    bad = c < kappa_min
    if np.any(bad) or not np.all(np.isfinite(c)):
        bad |= ~np.isfinite(c)
        pos = np.unravel_index(np.argmax(bad), c.shape)
        species = int(pos[-1])
        raise PositivityError(
            f"concentration of species {species} is {c[pos]:.6g} < {kappa_min:g} at {pos[:-1]}",
            species,
            float(c[pos]),
            pos[:-1],
        )


def _unpack(state, coeffs: TransportCoefficients):
    if isinstance(state, PointState):
        return state.c, state.c_T, state.rho
    c = np.asarray(state, dtype=float)
    return c, c.sum(axis=-1), c @ coeffs.molar_masses


def onsager_matrix(state, coeffs: TransportCoefficients, c_T=None, check: bool = True) -> np.ndarray:
    """Stefan-Maxwell transport matrix; rows sum to zero.

    ``state`` is a :class:`PointState` or an array of concentrations
    (..., n).  ``c_T`` overrides the total concentration when given.
    """
    c, cT, _ = _unpack(state, coeffs)
    if c_T is not None:
        cT = c_T
    if check:
        check_positive(c, coeffs.kappa_min)
    cT = np.asarray(cT, dtype=float)
    outer = c[..., :, None] * c[..., None, :]
    M = -coeffs.RT * outer * coeffs._inv_D / cT[..., None, None]
    # diagonal from the same off-diagonal terms, so row sums cancel
    diag = -M.sum(axis=-1)
    idx = np.arange(coeffs.n)
    M[..., idx, idx] = diag
    return M


def augmentation_matrix(state, coeffs: TransportCoefficients, check: bool = True) -> np.ndarray:
    """Rank-one matrix RT (M_i c_i)(M_j c_j) / rho."""
    c, _, rho = _unpack(state, coeffs)
    rho = np.asarray(rho, dtype=float)
    if check and np.any(rho <= 0):
        raise TransportError("density must be positive")
    q = coeffs.molar_masses * c
    return coeffs.RT * q[..., :, None] * q[..., None, :] / rho[..., None, None]


def augmented_matrix(state, coeffs: TransportCoefficients, c_T=None, check: bool = True) -> np.ndarray:
    """M + gamma L, symmetric positive definite for positive c and gamma > 0."""
    M = onsager_matrix(state, coeffs, c_T=c_T, check=check)
    if coeffs.gamma == 0:
        return M
    return M + coeffs.gamma * augmentation_matrix(state, coeffs, check=check)


def dissipation(state, coeffs: TransportCoefficients, v: np.ndarray) -> float:
    """Pairwise form of v . M^gamma v for velocities ``v`` of shape (n, d)."""
    c, cT, rho = _unpack(state, coeffs)
    v = np.asarray(v, dtype=float).reshape(coeffs.n, -1)
    total = 0.0
    for i in range(coeffs.n):
        for j in range(coeffs.n):
            if i != j:
                dv = v[j] - v[i]
                total += 0.5 * c[i] * c[j] * coeffs.RT / (coeffs.D[i, j] * cT) * np.dot(dv, dv)
    flux = (coeffs.molar_masses * c) @ v
    return total + coeffs.gamma * coeffs.RT * np.dot(flux, flux) / rho


def spectral_report(state, coeffs: TransportCoefficients) -> tuple[np.ndarray, float]:
    """Ascending eigenvalues of M and the smallest eigenvalue of M^gamma."""
    M = onsager_matrix(state, coeffs)
    Mg = augmented_matrix(state, coeffs)
    return np.linalg.eigvalsh(M), float(np.linalg.eigvalsh(Mg)[..., 0])


def gamma_rho_lambda2(state, coeffs: TransportCoefficients) -> np.ndarray:
    """min(gamma rho, lambda_2(M)) pointwise.

    This is *not* a lower bound on the spectrum of M^gamma in general: the
    all-ones vector is an eigenvector of L only when every M_i c_i is equal,
    and then with eigenvalue RT rho / n.  See :func:`coercivity_bound`.
    """
    c, _, rho = _unpack(state, coeffs)
    lam = np.linalg.eigvalsh(onsager_matrix(state, coeffs))
    return np.minimum(coeffs.gamma * np.asarray(rho), lam[..., 1])


def coercivity_bound(state, coeffs: TransportCoefficients) -> np.ndarray:
    """Guaranteed pointwise lower bound on the smallest eigenvalue of M^gamma.

    Split v = a e + w with e = (1,...,1)/sqrt(n) and w orthogonal to e.  Then
    v.Mv >= lambda_2 |w|^2 and v.Lv = RT (a rho/sqrt(n) + Pq.w)^2 / rho with
    q_i = M_i c_i, Pq its part orthogonal to e.  Taking the worst alignment
    of w with Pq leaves the smallest eigenvalue of a 2x2 matrix in (a, |w|).
    The bound is positive whenever lambda_2 > 0 and gamma > 0.
    """
    c, _, rho = _unpack(state, coeffs)
    rho = np.asarray(rho, dtype=float)
    n = coeffs.n
    lam2 = np.linalg.eigvalsh(onsager_matrix(state, coeffs))[..., 1]
    q = coeffs.molar_masses * c
    pq = np.sqrt(np.maximum((q * q).sum(axis=-1) - rho**2 / n, 0.0))
    g = coeffs.gamma * coeffs.RT
    a11 = g * rho / n
    a12 = -g * pq / np.sqrt(n)
    a22 = lam2 + g * pq**2 / rho
    mean = 0.5 * (a11 + a22)
    rad = np.sqrt(0.25 * (a11 - a22) ** 2 + a12**2)
    # det / larger root avoids cancellation in mean - rad
    return (a11 * a22 - a12**2) / (mean + rad)
