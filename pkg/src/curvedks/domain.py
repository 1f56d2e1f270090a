"""Grids, quadrature weights, and domain-truncation bookkeeping.

Two grid types cover everything downstream: a uniform cell-centered
Cartesian grid on a square (midpoint rule, weight h^2 per cell) and a
latitude-longitude sphere grid with Gauss-Legendre nodes in sin(latitude)
(exact for low-degree polynomials in sin(latitude), which the degree-one
spherical-harmonic integrands require).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CartesianGrid:
    """Uniform n x n cell-centered grid on a square of side 2*half_width.

    Treated as immutable after construction; safe for concurrent reads.
    """

    center: tuple[float, float]
    half_width: float
    n: int
    x: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        h = self.h
        cx, cy = self.center
        self.x = cx - self.half_width + (np.arange(self.n) + 0.5) * h
        self.y = cy - self.half_width + (np.arange(self.n) + 0.5) * h

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays of shape (n, n), 'ij' indexing."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def radius(self) -> np.ndarray:
        """Distance of each cell center from the grid center."""
        X, Y = self.meshes()
        return np.hypot(X - self.center[0], Y - self.center[1])

    def integrate(self, samples: np.ndarray) -> float:
        """Midpoint-rule integral over the square, flat measure."""
        return float(np.sum(samples) * self.cell_area)

    def contains_radius(self, r: float) -> bool:
        return r <= self.half_width


def make_cartesian_grid(center: tuple[float, float], half_width: float, n: int) -> CartesianGrid:
    """Build a uniform cell-centered grid; rejects odd or tiny n."""
    return CartesianGrid(center=(float(center[0]), float(center[1])),
                         half_width=float(half_width), n=int(n))


@dataclass
class SphereGrid:
    """Gauss-Legendre x uniform-azimuth quadrature grid on the unit sphere.

    Nodes are (theta_k, psi_l) with theta = latitude in (-pi/2, pi/2) at
    Gauss-Legendre abscissas of t = sin(theta), and psi uniform on [0, 2pi).
    The weight of node (k, l) is glw_k * 2pi/n_lon, so constants integrate
    to 4pi exactly and polynomials of degree <= 2*n_lat - 1 in sin(theta)
    are integrated exactly.
    """

    n_lat: int
    n_lon: int
    t: np.ndarray = field(init=False, repr=False)       # sin(latitude) nodes
    glw: np.ndarray = field(init=False, repr=False)     # Gauss-Legendre weights
    theta: np.ndarray = field(init=False, repr=False)   # latitude
    psi: np.ndarray = field(init=False, repr=False)     # azimuth

    def __post_init__(self):
        if self.n_lat < 4:
            raise ValueError(f"n_lat must be >= 4, got {self.n_lat}")
        if self.n_lon < 8 or self.n_lon % 2 != 0:
            # even n_lon so the across-pole mirror lands on grid nodes
            raise ValueError(f"n_lon must be even and >= 8, got {self.n_lon}")
        self.t, self.glw = np.polynomial.legendre.leggauss(self.n_lat)
        self.theta = np.arcsin(self.t)
        self.psi = 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon

    def node_weights(self) -> np.ndarray:
        """Quadrature weights, shape (n_lat, n_lon); they sum to 4pi."""
        return np.broadcast_to(
            self.glw[:, None] * (2.0 * np.pi / self.n_lon),
            (self.n_lat, self.n_lon)).copy()

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.theta, self.psi, indexing="ij")

    def integrate(self, samples: np.ndarray) -> float:
        return float(np.sum(samples * self.glw[:, None]) * 2.0 * np.pi / self.n_lon)


def make_sphere_grid(n_lat: int, n_lon: int) -> SphereGrid:
    """Build a sphere quadrature grid; rejects undersized grids."""
    return SphereGrid(n_lat=int(n_lat), n_lon=int(n_lon))


@dataclass(frozen=True)
class AnnulusSpec:
    """Annulus R <= r <= ratio*R around the origin, used as a diagnostic region."""

    R: float
    ratio: float = 2.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"annulus radius must be positive, got {self.R}")
        if not self.ratio > 1:
            raise ValueError(f"annulus ratio must exceed 1, got {self.ratio}")

    @property
    def outer(self) -> float:
        return self.R * self.ratio

    def mask(self, grid: CartesianGrid) -> np.ndarray:
        """Boolean mask of cells whose centers lie inside the annulus."""
        if self.outer > grid.half_width:
            raise ValueError(
                f"annulus outer radius {self.outer} exceeds grid half_width {grid.half_width}")
        r = grid.radius()
        return (r >= self.R) & (r <= self.outer)
