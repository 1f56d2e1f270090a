"""Stereographic transport, the Kazdan-Warner residual, and obstruction integrals.

Convention: the sphere carries latitude theta in (-pi/2, pi/2) and azimuth
psi. The stereographic map sends the node (theta, psi) to the plane point
x_star + r (cos psi, sin psi) with r = lam * tan((theta + pi/2) / 2), so the
South pole lands on x_star and the North pole goes to infinity. Pulling the
plane metric weighted by half the critical Cauchy profile back through this
map gives the round metric of unit radius; numerically, transporting the
constant 1 must integrate to 4pi, which validates the convention.

Derivatives act in latitude coordinates (smooth sphere fields stay smooth
there), with ghost rows mirrored across the poles (psi shifted by pi); the
quadrature grid keeps Gauss-Legendre nodes in sin(theta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import AnnulusSpec, CartesianGrid, SphereGrid
from .geometry import ConformalFactor
from .profiles import ScaledCauchyProfile
from .stationary import RHO_FLOOR, DensityField, decay_envelope


@dataclass(frozen=True)
class StereographicMap:
    """Plane-sphere correspondence at scale lam centered at x_star."""

    lam: float
    x_star: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("map scale must be positive")

    def plane_radius(self, theta: np.ndarray) -> np.ndarray:
        """Planar distance from x_star of the image of latitude theta."""
        return self.lam * np.tan((np.asarray(theta) + np.pi / 2.0) / 2.0)

    def to_plane(self, theta: np.ndarray, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = self.plane_radius(theta)
        return (self.x_star[0] + r * np.cos(psi), self.x_star[1] + r * np.sin(psi))

    def to_sphere(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx = np.asarray(x, dtype=float) - self.x_star[0]
        dy = np.asarray(y, dtype=float) - self.x_star[1]
        r = np.hypot(dx, dy)
        theta = 2.0 * np.arctan(r / self.lam) - np.pi / 2.0
        return theta, np.mod(np.arctan2(dy, dx), 2.0 * np.pi)


@dataclass
class SphereField:
    """Node values on a SphereGrid; role is one of "u", "h", "u1"."""

    grid: SphereGrid
    values: np.ndarray
    role: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_lat, self.grid.n_lon):
            raise ValueError("field shape does not match sphere grid")

    def to_csv(self, path) -> None:
        T, P = self.grid.meshes()
        with open(path, "w", newline="") as fh:
            fh.write("theta,psi,value\n")
            for th, ps, v in zip(T.ravel(), P.ravel(), self.values.ravel()):
                fh.write(f"{th:.12g},{ps:.12g},{v:.17g}\n")


# ---------------------------------------------------------------------------
# derivatives on the (theta, psi) grid

def _pad_poles(f: np.ndarray, theta: np.ndarray):
    """Ghost rows mirrored across each pole with a half-turn in psi."""
    n_lon = f.shape[1]
    s = n_lon // 2
    fp = np.vstack([np.roll(f[0:1], s, axis=1), f, np.roll(f[-1:], s, axis=1)])
    thp = np.concatenate([[-np.pi - theta[0]], theta, [np.pi - theta[-1]]])
    return fp, thp


def dtheta(f: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """First latitude derivative, 3-point nonuniform stencil."""
    fp, thp = _pad_poles(f, grid.theta)
    dm = (thp[1:-1] - thp[:-2])[:, None]
    dp = (thp[2:] - thp[1:-1])[:, None]
    return (dp / dm * (fp[1:-1] - fp[:-2]) + dm / dp * (fp[2:] - fp[1:-1])) / (dm + dp)


def _dtheta2(f: np.ndarray, grid: SphereGrid) -> np.ndarray:
    fp, thp = _pad_poles(f, grid.theta)
    dm = (thp[1:-1] - thp[:-2])[:, None]
    dp = (thp[2:] - thp[1:-1])[:, None]
    return 2.0 * (fp[:-2] / (dm * (dm + dp)) - fp[1:-1] / (dm * dp)
                  + fp[2:] / (dp * (dm + dp)))


def _dpsi2(f: np.ndarray, grid: SphereGrid) -> np.ndarray:
    dpsi = 2.0 * np.pi / grid.n_lon
    return (np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1)) / dpsi**2


def dpsi(f: np.ndarray, grid: SphereGrid) -> np.ndarray:
    d = 2.0 * np.pi / grid.n_lon
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * d)


def laplacian_sphere(f: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """Positive (geometer-sign) spherical Laplacian; degree-l harmonics map to +l(l+1)."""
    ct = np.cos(grid.theta)[:, None]
    tt = np.tan(grid.theta)[:, None]
    return -(_dtheta2(f, grid) - tt * dtheta(f, grid) + _dpsi2(f, grid) / ct**2)


def sphere_gradient(f: np.ndarray, grid: SphereGrid) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal-frame gradient components (d/dtheta, sec(theta) d/dpsi)."""
    ct = np.cos(grid.theta)[:, None]
    return dtheta(f, grid), dpsi(f, grid) / ct


def degree_one_harmonic(grid: SphereGrid, index: int) -> SphereField:
    """The three degree-one spherical harmonics: sin(theta), cos(theta)cos(psi), cos(theta)sin(psi)."""
    T, P = grid.meshes()
    if index == 1:
        vals = np.sin(T)
    elif index == 2:
        vals = np.cos(T) * np.cos(P)
    elif index == 3:
        vals = np.cos(T) * np.sin(P)
    else:
        raise ValueError("u1 index must be 1, 2 or 3")
    return SphereField(grid=grid, values=vals, role="u1")


# ---------------------------------------------------------------------------
# transport

@dataclass
class TransportReport:
    cap_fraction: float       # quadrature-weight fraction extrapolated past the grid
    envelope_K: float
    envelope_exponent: float


def transport_to_sphere(field: DensityField, phi: ConformalFactor,
                        smap: StereographicMap, sgrid: SphereGrid,
                        max_cap_weight: float = 0.2
                        ) -> tuple[SphereField, SphereField, TransportReport]:
    """Pull (1/2) ln(rho / rho_ref) and e^{2 phi} back to the sphere grid.

    Nodes mapping beyond the plane grid form the polar cap; there rho is
    extrapolated by its decay envelope K (1 + r^2)^{-m/4pi}, and h is exact
    because phi has compact support. Rejects transports whose cap carries
    more than max_cap_weight of the total quadrature weight.
    """
    T, P = sgrid.meshes()
    X, Y = smap.to_plane(T, P)
    g = field.grid
    margin = 1.5 * g.h
    inside = ((X >= g.x[0] + margin) & (X <= g.x[-1] - margin)
              & (Y >= g.y[0] + margin) & (Y <= g.y[-1] - margin))
    W2 = sgrid.node_weights()
    cap_fraction = float(np.sum(W2[~inside]) / np.sum(W2))
    if cap_fraction > max_cap_weight:
        raise ValueError(
            f"polar cap holds {cap_fraction:.1%} of the quadrature weight "
            f"(limit {max_cap_weight:.0%}); enlarge the plane grid or lower lam")

    # interpolate ln rho: flat near the peak and log-linear in the tail, so
    # bilinear interpolation is far better conditioned than on rho itself
    log_rho = np.log(np.maximum(field.samples, RHO_FLOOR))
    log_interp = _bilinear(log_rho, g, X, Y)
    ref = ScaledCauchyProfile(lam=smap.lam, x_star=smap.x_star, normalization="rho")
    rho_ref = ref(X, Y)

    # envelope for the cap: rho ~ K (1 + r^2)^(-m/4pi)
    ann = AnnulusSpec(R=0.45 * g.half_width, ratio=2.0)
    env = decay_envelope(field, ann)
    expo = field.mass / (4.0 * np.pi)
    r2 = (X - smap.x_star[0]) ** 2 + (Y - smap.x_star[1]) ** 2
    log_cap = np.log(env.K_best) - expo * np.log1p(r2)

    u_vals = 0.5 * (np.where(inside, log_interp, log_cap) - np.log(rho_ref))
    h_vals = np.exp(2.0 * phi(X, Y))

    u = SphereField(grid=sgrid, values=u_vals, role="u")
    h = SphereField(grid=sgrid, values=h_vals, role="h")
    return u, h, TransportReport(cap_fraction=cap_fraction, envelope_K=env.K_best,
                                 envelope_exponent=-2.0 * expo)


def transport_to_plane(u: SphereField, smap: StereographicMap,
                       grid: CartesianGrid) -> np.ndarray:
    """Push u back: densities reconstruct as rho_ref * e^{2 u} on the plane grid."""
    X, Y = grid.meshes()
    theta, psi = smap.to_sphere(X, Y)
    vals = _bilinear_sphere(u.values, u.grid, theta, psi)
    ref = ScaledCauchyProfile(lam=smap.lam, x_star=smap.x_star, normalization="rho")
    return ref(X, Y) * np.exp(2.0 * vals)


def _bilinear(samples: np.ndarray, grid: CartesianGrid, X, Y) -> np.ndarray:
    fx = np.clip((X - grid.x[0]) / grid.h, 0.0, grid.n - 1.0)
    fy = np.clip((Y - grid.y[0]) / grid.h, 0.0, grid.n - 1.0)
    i0 = np.clip(fx.astype(int), 0, grid.n - 2)
    j0 = np.clip(fy.astype(int), 0, grid.n - 2)
    ax, ay = fx - i0, fy - j0
    s = samples
    return ((1 - ax) * (1 - ay) * s[i0, j0] + ax * (1 - ay) * s[i0 + 1, j0]
            + (1 - ax) * ay * s[i0, j0 + 1] + ax * ay * s[i0 + 1, j0 + 1])


def _bilinear_sphere(values: np.ndarray, sgrid: SphereGrid, theta, psi) -> np.ndarray:
    # linear in theta between node rows (clamped), periodic linear in psi
    th = sgrid.theta
    it = np.clip(np.searchsorted(th, theta) - 1, 0, sgrid.n_lat - 2)
    at = np.clip((theta - th[it]) / (th[it + 1] - th[it]), 0.0, 1.0)
    dpsi_ = 2.0 * np.pi / sgrid.n_lon
    fp = np.mod(psi, 2.0 * np.pi) / dpsi_
    jp = fp.astype(int) % sgrid.n_lon
    ap = fp - fp.astype(int)
    jp1 = (jp + 1) % sgrid.n_lon
    v = values
    return ((1 - at) * (1 - ap) * v[it, jp] + (1 - at) * ap * v[it, jp1]
            + at * (1 - ap) * v[it + 1, jp] + at * ap * v[it + 1, jp1])


# ---------------------------------------------------------------------------
# residual and obstruction

def kw_residual(u: SphereField, h: SphereField) -> float:
    """L2 norm (sphere quadrature) of  Delta u - h e^{2u} + 1."""
    if u.grid is not h.grid and (u.grid.n_lat, u.grid.n_lon) != (h.grid.n_lat, h.grid.n_lon):
        raise ValueError("u and h live on different sphere grids")
    res = kw_residual_field(u, h)
    return float(np.sqrt(u.grid.integrate(res**2)))


def kw_residual_field(u: SphereField, h: SphereField) -> np.ndarray:
    return laplacian_sphere(u.values, u.grid) - h.values * np.exp(2.0 * u.values) + 1.0


def obstruction_integral(u: SphereField, h: SphereField, u1_index: int) -> float:
    """int g(d u1, d h) e^{2u} over the sphere; vanishes for exact solutions."""
    grid = u.grid
    u1 = degree_one_harmonic(grid, u1_index)
    g1t, g1p = sphere_gradient(u1.values, grid)
    ght, ghp = sphere_gradient(h.values, grid)
    integrand = (g1t * ght + g1p * ghp) * np.exp(2.0 * u.values)
    return float(grid.integrate(integrand))


def radial_obstruction(phi: ConformalFactor, u: SphereField,
                       smap: StereographicMap) -> float:
    """Zonal reduction  int cos(theta) (d_theta h) e^{2u}  by 1-D quadrature.

    Valid for phi radial about the map center; d_theta h is evaluated from
    the analytic radial derivative of phi, making this an independent
    quadrature of the same integral as obstruction_integral with u1 = sin.
    """
    if not phi.is_radial():
        raise ValueError("radial_obstruction requires a radial conformal factor")
    if tuple(phi.center) != tuple(smap.x_star) and phi.kind != "zero":
        raise ValueError("conformal factor must be radial about the map center")
    grid = u.grid
    theta = grid.theta
    r = smap.plane_radius(theta)
    # dh/dtheta = e^{2 phi} * 2 phi'(r) * dr/dtheta, dr/dtheta = (lam/2) sec^2(sigma/2)
    sigma_half = (theta + np.pi / 2.0) / 2.0
    dr_dtheta = 0.5 * smap.lam / np.cos(sigma_half) ** 2
    phi_r = phi.radial_derivative(r)
    phi_vals = phi(smap.x_star[0] + r, np.full_like(r, smap.x_star[1]))
    dh_dtheta = np.exp(2.0 * phi_vals) * 2.0 * phi_r * dr_dtheta
    e2u_zonal = np.mean(np.exp(2.0 * u.values), axis=1)
    integrand = np.cos(theta) * dh_dtheta * e2u_zonal
    return float(np.sum(integrand * grid.glw) * 2.0 * np.pi)


def plane_side_obstruction(field_u: np.ndarray, phi: ConformalFactor,
                           smap: StereographicMap, grid: CartesianGrid,
                           u1_index: int = 1) -> float:
    """The same obstruction evaluated on the plane: int g0(d u1~, d e^{2 phi}) e^{2 u~}.

    The conformal factors of the inverse metric and the area form cancel, so
    the plane-side integrand needs no metric weights; u1~ is the pushforward
    of the degree-one harmonic.
    """
    from .geometry import grad_flat
    X, Y = grid.meshes()
    dx = X - smap.x_star[0]
    dy = Y - smap.x_star[1]
    r2 = dx * dx + dy * dy
    lam2 = smap.lam**2
    if u1_index == 1:
        u1 = (r2 - lam2) / (r2 + lam2)
    elif u1_index == 2:
        u1 = 2.0 * smap.lam * dx / (lam2 + r2)
    elif u1_index == 3:
        u1 = 2.0 * smap.lam * dy / (lam2 + r2)
    else:
        raise ValueError("u1 index must be 1, 2 or 3")
    e2phi = np.exp(2.0 * phi(X, Y))
    g1 = grad_flat(u1, grid)
    gh = grad_flat(e2phi, grid)
    integrand = (g1[0] * gh[0] + g1[1] * gh[1]) * np.exp(2.0 * field_u)
    return grid.integrate(integrand)


# ---------------------------------------------------------------------------
# nonexistence certificate

@dataclass
class CertificateReport:
    eligible: bool
    reason: str
    flank_sign: int                    # sign of d phi / dr where it is nonzero
    obstructions: dict[str, float]     # candidate label -> obstruction value

    @property
    def min_magnitude(self) -> float:
        return min(abs(v) for v in self.obstructions.values()) if self.obstructions else 0.0


def _radial_profile_samples(phi: ConformalFactor, n_samples: int = 512):
    rmax = phi.support_radius * (1.0 if phi.kind != "grid_sampled" else 1.0)
    r = np.linspace(0.0, rmax, n_samples)
    if phi.kind == "grid_sampled":
        # check radial symmetry by comparing several azimuths; the tolerance
        # absorbs the bilinear-interpolation anisotropy of genuinely radial data
        angles = np.linspace(0.0, 2 * np.pi, 8, endpoint=False)
        vals = np.stack([phi(phi.center[0] + r * np.cos(a),
                             phi.center[1] + r * np.sin(a)) for a in angles])
        scale = max(float(np.max(np.abs(vals))), 1e-12)
        if np.max(np.abs(vals - vals.mean(axis=0))) > 0.02 * scale:
            return None, None
        return r, vals.mean(axis=0)
    return r, phi(phi.center[0] + r, np.full_like(r, phi.center[1]))


def nonexistence_certificate(phi: ConformalFactor, lam: float = 1.0,
                             n_lat: int = 128, n_lon: int = 256,
                             perturbations=(0.5, 2.0)) -> CertificateReport:
    """Check the monotone-flank preconditions and report obstruction magnitudes.

    A certificate is issued when phi is radial, nonconstant, and its radial
    derivative is single-signed; the report then lists the sin(theta)
    obstruction for u = 0 and for transported scale perturbations of the
    critical profile. A numerical illustration of the obstruction, not a proof.
    """
    r, prof = _radial_profile_samples(phi)
    if r is None:
        return CertificateReport(False, "factor is not radially symmetric", 0, {})
    dprof = np.gradient(prof, r)
    scale = float(np.max(np.abs(prof)))
    if scale == 0.0:
        return CertificateReport(False, "factor is constant (zero)", 0, {})
    tol = 1e-10 * max(scale, 1.0)
    has_pos = bool(np.any(dprof > tol))
    has_neg = bool(np.any(dprof < -tol))
    if has_pos and has_neg:
        return CertificateReport(False, "radial derivative changes sign", 0, {})
    flank_sign = 1 if has_pos else -1

    sgrid = SphereGrid(n_lat=n_lat, n_lon=n_lon)
    smap = StereographicMap(lam=lam, x_star=phi.center)
    T, _ = sgrid.meshes()
    obstructions = {}
    h = SphereField(grid=sgrid, values=np.exp(
        2.0 * phi(*smap.to_plane(*sgrid.meshes()))), role="h")
    u0 = SphereField(grid=sgrid, values=np.zeros_like(T), role="u")
    obstructions["u=0"] = obstruction_integral(u0, h, 1)
    for s in perturbations:
        # u of the transported profile rho_{s*lam} relative to rho_lam
        rr = smap.plane_radius(T)
        num = ScaledCauchyProfile(lam=s * lam, x_star=smap.x_star, normalization="rho")
        den = ScaledCauchyProfile(lam=lam, x_star=smap.x_star, normalization="rho")
        uv = 0.5 * np.log(num(smap.x_star[0] + rr, np.full_like(rr, smap.x_star[1]))
                          / den(smap.x_star[0] + rr, np.full_like(rr, smap.x_star[1])))
        up = SphereField(grid=sgrid, values=uv, role="u")
        obstructions[f"scale x{s:g}"] = obstruction_integral(up, h, 1)
    return CertificateReport(True, "monotone radial flank", flank_sign, obstructions)
