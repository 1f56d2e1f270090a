"""Scaled Cauchy profiles and their closed-form integral identities.

These closed forms are the exact oracles used throughout the test suite:
the unit-mass profile mu has an explicit entropy, an explicit logarithmic
potential, and an explicit Coulomb self-energy, all elementary to derive by
radial integration. The mass-8pi normalization rho = 8pi mu is the explicit
stationary family of the flat problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import CartesianGrid


@dataclass(frozen=True)
class ScaledCauchyProfile:
    """Profile lambda^2 / (pi (lambda^2 + |x - x_star|^2)^2), optionally times 8pi.

    normalization "mu" integrates to 1 over the flat plane; "rho" is the
    8pi-mass variant 8 lambda^2 / (lambda^2 + |x - x_star|^2)^2.
    """

    lam: float
    x_star: tuple[float, float] = (0.0, 0.0)
    normalization: str = "mu"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("profile scale must be positive")
        if self.normalization not in ("mu", "rho"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def mass(self) -> float:
        return 1.0 if self.normalization == "mu" else 8.0 * np.pi

    def __call__(self, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        d2 = (X - self.x_star[0]) ** 2 + (Y - self.x_star[1]) ** 2
        lam2 = self.lam * self.lam
        mu = lam2 / (np.pi * (lam2 + d2) ** 2)
        return mu if self.normalization == "mu" else 8.0 * np.pi * mu

    def on_grid(self, grid: CartesianGrid) -> np.ndarray:
        X, Y = grid.meshes()
        return self(X, Y)


def eval_profile(p: ScaledCauchyProfile, x: tuple[float, float]) -> float:
    """Profile value at a single point."""
    return float(p(np.asarray(x[0]), np.asarray(x[1])))


def mu_entropy_identity(m: float, lam: float) -> float:
    """Closed form of  int m mu ln(m mu) dA0  =  m ln(m / (pi e^2)) - 2 m ln(lam).

    Derivation is elementary: int mu ln(1 + (r/lam)^2)-type terms reduce to
    int_1^inf ln(u)/u^2 du = 1. Shifting lam -> e*lam lowers the value by
    exactly 2m.
    """
    if not (m > 0 and lam > 0):
        raise ValueError("mass and scale must be positive")
    return m * (np.log(m / np.pi) - 2.0 - 2.0 * np.log(lam))


def mu_potential_identity(lam: float, x, x_star=(0.0, 0.0)) -> np.ndarray | float:
    """Closed-form potential of the unit-mass profile: -(1/4pi) ln(lam^2 + r^2)."""
    if not lam > 0:
        raise ValueError("profile scale must be positive")
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x - np.asarray(x_star, dtype=float)) ** 2, axis=-1)
    out = -np.log(lam * lam + d2) / (4.0 * np.pi)
    return float(out) if out.ndim == 0 else out


def mu_coulomb_identity(lam: float) -> float:
    """Closed-form Coulomb self-energy of mu: -(1/2pi) ln(lam) - 1/(4pi)."""
    if not lam > 0:
        raise ValueError("profile scale must be positive")
    return -np.log(lam) / (2.0 * np.pi) - 1.0 / (4.0 * np.pi)


@dataclass
class DiracCheck:
    """Integrals of mu_lam * f against a shrinking-lambda sequence."""

    lam_values: list[float]
    integrals: list[float]
    target: float
    flagged: list[bool]   # lambda below grid resolution

    @property
    def errors(self) -> list[float]:
        return [abs(v - self.target) for v in self.integrals]

    @property
    def monotone_approach(self) -> bool:
        errs = [e for e, fl in zip(self.errors, self.flagged) if not fl]
        return all(a >= b - 1e-14 for a, b in zip(errs, errs[1:]))


def dirac_family_check(f, lam_sequence, x_star: tuple[float, float],
                       grid: CartesianGrid, resolution_factor: float = 4.0) -> DiracCheck:
    """Evaluate int mu_lam f dA0 along a lambda sequence, tracking f(x_star).

    f is a callable (X, Y) -> samples. Lambdas shorter than a few cells are
    flagged as under-resolved rather than rejected.
    """
    X, Y = grid.meshes()
    fs = np.asarray(f(X, Y), dtype=float)
    target = float(f(np.asarray(x_star[0]), np.asarray(x_star[1])))
    lam_values, integrals, flagged = [], [], []
    for lam in lam_sequence:
        p = ScaledCauchyProfile(lam=float(lam), x_star=x_star, normalization="mu")
        integrals.append(grid.integrate(p(X, Y) * fs))
        lam_values.append(float(lam))
        flagged.append(bool(lam < resolution_factor * grid.h))
    return DiracCheck(lam_values=lam_values, integrals=integrals,
                      target=target, flagged=flagged)


def geometric_lambdas(lo: float, hi: float, per_decade: int = 4) -> list[float]:
    """Geometric lambda ladder, the natural sampling for ln-lambda linear laws."""
    n = max(2, int(np.ceil(np.log10(hi / lo) * per_decade)) + 1)
    return list(np.geomspace(lo, hi, n))
