"""Conformal factor, metric operations of e^{2 phi} g0, and flat stencils.

Sign convention: the Laplacian is positive, Delta = -(d2/dx2 + d2/dy2), so
that Delta c = rho holds with nonnegative rho for the logarithmic kernel in
the potential module. All conformal operations reduce to flat ones through
dA_phi = e^{2 phi} dA0 and Delta_phi = e^{-2 phi} Delta0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .domain import CartesianGrid


def _bump_profile(s: np.ndarray) -> np.ndarray:
    """Standard mollifier profile exp(1 - 1/(1 - s^2)) on |s| < 1, else 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


def _bump_profile_deriv(s: np.ndarray) -> np.ndarray:
    """d/ds of the mollifier profile; vanishes to all orders at |s| = 1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si)) * (-2.0 * si / (1.0 - si * si) ** 2)
    return out


@dataclass
class ConformalFactor:
    """Compactly supported smooth phi defining the metric e^{2 phi} g0.

    kind is one of "zero", "radial_bump", "grid_sampled". The radial bump is
    amplitude * exp(1 - 1/(1 - s^2)) with s = |x - center| / support_radius;
    its radial derivative has a single sign determined by the amplitude sign.
    Grid-sampled factors interpolate bilinearly and vanish off their grid.
    """

    kind: str
    amplitude: float = 0.0
    support_radius: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    grid: CartesianGrid | None = None
    samples: np.ndarray | None = None

    @classmethod
    def zero(cls) -> "ConformalFactor":
        return cls(kind="zero")

    @classmethod
    def radial_bump(cls, amplitude: float, support_radius: float,
                    center: tuple[float, float] = (0.0, 0.0)) -> "ConformalFactor":
        if not support_radius > 0:
            raise ValueError("support_radius must be positive")
        return cls(kind="radial_bump", amplitude=float(amplitude),
                   support_radius=float(support_radius),
                   center=(float(center[0]), float(center[1])))

    @classmethod
    def from_samples(cls, grid: CartesianGrid, samples: np.ndarray,
                     support_radius: float | None = None) -> "ConformalFactor":
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (grid.n, grid.n):
            raise ValueError(f"samples shape {samples.shape} does not match grid {grid.n}")
        sr = grid.half_width if support_radius is None else float(support_radius)
        return cls(kind="grid_sampled", support_radius=sr, center=grid.center,
                   grid=grid, samples=samples)

    @classmethod
    def from_csv(cls, path) -> "ConformalFactor":
        """Load a grid-sampled factor from rows of x, y, phi on a full lattice."""
        xs, ys, vs = [], [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith(("x", "#")):
                    continue
                xs.append(float(row[0]))
                ys.append(float(row[1]))
                vs.append(float(row[2]))
        ux, uy = np.unique(xs), np.unique(ys)
        n = len(ux)
        if n != len(uy) or n * n != len(vs):
            raise ValueError("csv does not describe a complete square lattice")
        h = ux[1] - ux[0]
        grid = CartesianGrid(center=(float(ux.mean()), float(uy.mean())),
                             half_width=n * h / 2.0, n=n)
        samples = np.full((n, n), np.nan)
        ix = np.searchsorted(ux, xs)
        iy = np.searchsorted(uy, ys)
        samples[ix, iy] = vs
        if np.isnan(samples).any():
            raise ValueError("csv lattice has missing entries")
        return cls.from_samples(grid, samples)

    def __call__(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if self.kind == "zero":
            return np.zeros(np.broadcast(X, Y).shape)
        if self.kind == "radial_bump":
            r = np.hypot(X - self.center[0], Y - self.center[1])
            return self.amplitude * _bump_profile(r / self.support_radius)
        if self.kind == "grid_sampled":
            return self._interp(X, Y)
        raise ValueError(f"unknown conformal factor kind {self.kind!r}")

    def on_grid(self, grid: CartesianGrid) -> np.ndarray:
        X, Y = grid.meshes()
        return self(X, Y)

    def radial_derivative(self, r: np.ndarray) -> np.ndarray:
        """d phi / dr for radial kinds (zero and radial_bump)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "radial_bump":
            s = r / self.support_radius
            return self.amplitude * _bump_profile_deriv(s) / self.support_radius
        raise ValueError("radial_derivative requires a radial conformal factor")

    def sup(self) -> float:
        """Supremum of phi (0 is always attained: compact support)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "radial_bump":
            return max(self.amplitude, 0.0)
        return max(float(np.max(self.samples)), 0.0)

    def is_radial(self) -> bool:
        return self.kind in ("zero", "radial_bump")

    def _interp(self, X, Y):
        # bilinear off the sample lattice, zero outside it
        g = self.grid
        gx, gy = g.x, g.y
        fx = np.clip((X - gx[0]) / g.h, 0.0, g.n - 1.0)
        fy = np.clip((Y - gy[0]) / g.h, 0.0, g.n - 1.0)
        i0 = np.clip(fx.astype(int), 0, g.n - 2)
        j0 = np.clip(fy.astype(int), 0, g.n - 2)
        ax = fx - i0
        ay = fy - j0
        s = self.samples
        vals = ((1 - ax) * (1 - ay) * s[i0, j0] + ax * (1 - ay) * s[i0 + 1, j0]
                + (1 - ax) * ay * s[i0, j0 + 1] + ax * ay * s[i0 + 1, j0 + 1])
        outside = ((X < gx[0]) | (X > gx[-1]) | (Y < gy[0]) | (Y > gy[-1]))
        return np.where(outside, 0.0, vals)


@dataclass
class MetricOpsReport:
    """Per-cell area weights e^{2 phi} h^2 and Gauss curvature samples."""

    area_weights: np.ndarray
    curvature: np.ndarray


def conformal_area_element(phi: ConformalFactor, grid: CartesianGrid) -> np.ndarray:
    """Per-cell integration weights e^{2 phi(x_cell)} h^2."""
    return np.exp(2.0 * phi.on_grid(grid)) * grid.cell_area


def laplacian_flat(field: np.ndarray, grid: CartesianGrid) -> np.ndarray:
    """Positive flat Laplacian -(d2/dx2 + d2/dy2), 5-point stencil.

    Boundary cells use edge replication (copy), so downstream norms should
    exclude the layer reported by boundary_mask.
    """
    f = np.asarray(field, dtype=float)
    fp = np.pad(f, 1, mode="edge")
    h2 = grid.h * grid.h
    return (4.0 * f - fp[:-2, 1:-1] - fp[2:, 1:-1] - fp[1:-1, :-2] - fp[1:-1, 2:]) / h2


def laplacian_conformal(field: np.ndarray, phi: ConformalFactor,
                        grid: CartesianGrid) -> np.ndarray:
    """Delta_phi f, evaluated as e^{-2 phi} * Delta0 f (the defining identity)."""
    return np.exp(-2.0 * phi.on_grid(grid)) * laplacian_flat(field, grid)


def gauss_curvature(phi: ConformalFactor, grid: CartesianGrid) -> np.ndarray:
    """kappa_phi = e^{-2 phi} Delta0 phi on cell centers."""
    phis = phi.on_grid(grid)
    return np.exp(-2.0 * phis) * laplacian_flat(phis, grid)


def metric_ops(phi: ConformalFactor, grid: CartesianGrid) -> MetricOpsReport:
    return MetricOpsReport(area_weights=conformal_area_element(phi, grid),
                           curvature=gauss_curvature(phi, grid))


def grad_flat(field: np.ndarray, grid: CartesianGrid) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient with copy boundary."""
    f = np.asarray(field, dtype=float)
    fp = np.pad(f, 1, mode="edge")
    inv2h = 0.5 / grid.h
    gx = (fp[2:, 1:-1] - fp[:-2, 1:-1]) * inv2h
    gy = (fp[1:-1, 2:] - fp[1:-1, :-2]) * inv2h
    return gx, gy


def metric_pairing(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray],
                   phi_values: np.ndarray) -> np.ndarray:
    """Inverse-metric pairing of two gradients: e^{-2 phi} g0(a, b)."""
    return np.exp(-2.0 * np.asarray(phi_values)) * (a[0] * b[0] + a[1] * b[1])


def boundary_mask(grid: CartesianGrid, layers: int = 1) -> np.ndarray:
    """True on the outermost `layers` rings of cells."""
    m = np.zeros((grid.n, grid.n), dtype=bool)
    m[:layers, :] = m[-layers:, :] = True
    m[:, :layers] = m[:, -layers:] = True
    return m
