"""Critical-mass machinery: the weighted auxiliary PDE and the virial assembly.

The assembly pairs the reduced equation against cut-off dilation fields and
splits the result into

    I1(R) = int chi_R rho dA_phi                      -> m,
    I2(R) = int chi_R rho (x . grad c) dA_phi         -> -m^2 / 4pi,
    I3(R) = int chi_R rho (4 r phi_r - Delta_phi f - g_phi(df, dc)) dA0,

so 4 I1 + 2 I2 + I3 tends to 4m - m^2/2pi, which vanishes exactly at the
critical mass. For curved factors, I3 is closed by solving the auxiliary
problem  Delta_phi f + g_phi(df, dc) = 4 r phi_r  in weak form; the solver
is a conjugate-gradient iteration on the normal equations of the central
discretization, whose residual decreases monotonically by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .domain import CartesianGrid
from .geometry import ConformalFactor, grad_flat, laplacian_flat
from .potential import PotentialField
from .stationary import DensityField


class StagnationError(RuntimeError):
    """Iterative solve stopped making progress before reaching tolerance."""


def dilation_source(phi: ConformalFactor, grid: CartesianGrid) -> np.ndarray:
    """Samples of 4 r d_r phi: analytic for radial factors, x . grad phi otherwise."""
    if phi.is_radial():
        r = grid.radius()
        return 4.0 * r * phi.radial_derivative(r)
    gx, gy = grad_flat(phi.on_grid(grid), grid)
    X, Y = grid.meshes()
    return 4.0 * ((X - grid.center[0]) * gx + (Y - grid.center[1]) * gy)


def cutoff_function(R: float, grid: CartesianGrid, K: float = 1.5) -> np.ndarray:
    """Radial C^1 ramp: 1 on B_R, 0 outside B_2R, max slope K / R.

    Cubic smoothstep between the radii; the gradient bound K = 1.5 is the
    smoothstep peak.
    """
    if 2.0 * R > grid.half_width:
        raise ValueError(f"cutoff support 2R = {2*R} exceeds grid half_width")
    r = grid.radius()
    s = np.clip((r - R) / R, 0.0, 1.0)
    return 1.0 - (3.0 * s**2 - 2.0 * s**3)


@dataclass
class WeightedEllipticProblem:
    """Data of the auxiliary equation on a density background."""

    phi: ConformalFactor
    rho: DensityField
    c: PotentialField
    rhs: np.ndarray          # 4 r d_r phi samples

    @classmethod
    def build(cls, rho: DensityField, method: str = "auto") -> "WeightedEllipticProblem":
        return cls(phi=rho.phi, rho=rho, c=rho.potential(method=method),
                   rhs=dilation_source(rho.phi, rho.grid))

    def norm_sq(self, psi: np.ndarray) -> float:
        """|| psi ||^2 = || grad psi ||^2_{L2(g_phi)} + 1/2 || sqrt(rho) psi ||^2_{L2(g_phi)}.

        The gradient part is conformally invariant in two dimensions, so it
        is the flat Dirichlet energy; the zeroth-order part carries e^{2 phi}.
        """
        grid = self.rho.grid
        gx, gy = grad_flat(psi, grid)
        dirichlet = np.sum(gx**2 + gy**2) * grid.cell_area
        weighted = np.sum(self.rho.samples * psi**2 * self.rho.area_weights)
        return float(dirichlet + 0.5 * weighted)

    def bilinear(self, f: np.ndarray, psi: np.ndarray) -> float:
        """B(f, psi) = <d psi, d f>_{L2(g_phi)} + int psi g_phi(df, dc) dA_phi."""
        grid = self.rho.grid
        gfx, gfy = grad_flat(f, grid)
        gpx, gpy = grad_flat(psi, grid)
        gcx, gcy = grad_flat(self.c.samples, grid)
        first = np.sum(gpx * gfx + gpy * gfy) * grid.cell_area
        second = np.sum(psi * (gfx * gcx + gfy * gcy)) * grid.cell_area
        return float(first + second)

    def functional(self, psi: np.ndarray) -> float:
        """Phi(psi) = int psi (4 r phi_r) dA_phi."""
        return float(np.sum(psi * self.rhs * self.rho.area_weights))


def _stencil_operators(problem: WeightedEllipticProblem):
    """Sparse central discretizations on interior cells, identity on the boundary.

    Returns (A, M): A f = Delta0 f + grad f . grad c and the pure-Laplacian
    preconditioner M = Delta0, both with Dirichlet zero boundary rows.
    """
    grid = problem.rho.grid
    n = grid.n
    h = grid.h
    gcx, gcy = grad_flat(problem.c.samples, grid)
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    interior = (I > 0) & (I < n - 1) & (J > 0) & (J < n - 1)
    k = (I * n + J)[interior]
    ax = gcx[interior]
    ay = gcy[interior]
    inv_h2 = 1.0 / h**2
    inv_2h = 0.5 / h

    rows, cols, vals_a, vals_m = [k], [k], [np.full(k.size, 4.0 * inv_h2)], \
        [np.full(k.size, 4.0 * inv_h2)]
    for off, adv in ((-n, -ax), (n, ax), (-1, -ay), (1, ay)):
        rows.append(k)
        cols.append(k + off)
        vals_a.append(-inv_h2 + adv * inv_2h)
        vals_m.append(np.full(k.size, -inv_h2))
    kb = (I * n + J)[~interior]
    rows.append(kb)
    cols.append(kb)
    vals_a.append(np.ones(kb.size))
    vals_m.append(np.ones(kb.size))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    N = n * n
    A = sparse.csr_matrix((np.concatenate(vals_a), (rows, cols)), shape=(N, N))
    M = sparse.csr_matrix((np.concatenate(vals_m), (rows, cols)), shape=(N, N))
    return A, M


@dataclass
class AuxSolution:
    f: np.ndarray
    residual_trace: list[float]
    iterations: int
    grad_l2: float

    @property
    def converged(self) -> bool:
        return len(self.residual_trace) > 0


def solve_aux_pde(problem: WeightedEllipticProblem, tol: float = 1e-8,
                  max_iter: int = 20000) -> AuxSolution:
    """Solve  Delta_phi f + g_phi(df, dc) = 4 r phi_r  on the grid.

    In flat coordinates the equation reads Delta0 f + grad f . grad c =
    4 r phi_r e^{2 phi}; the conjugate-gradient iteration on the normal
    equations minimizes the residual norm monotonically, so stagnation is
    detectable. Dirichlet zero boundary (the data is compactly supported
    and the continuum solution has square-integrable gradient).
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    grid = problem.rho.grid
    phis = problem.phi.on_grid(grid)
    b = (problem.rhs * np.exp(2.0 * phis)).ravel()
    boundary = np.zeros((grid.n, grid.n), dtype=bool)
    boundary[0, :] = boundary[-1, :] = boundary[:, 0] = boundary[:, -1] = True
    b[boundary.ravel()] = 0.0
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return AuxSolution(f=np.zeros((grid.n, grid.n)), residual_trace=[0.0],
                           iterations=0, grad_l2=0.0)
    A, M = _stencil_operators(problem)
    lu = splu(M.tocsc())

    # CGNR on the Laplacian-preconditioned system: the preconditioned residual
    # norm ||M^-1 (b - A x)|| decreases monotonically by construction
    x = np.zeros_like(b)
    r = lu.solve(b)
    z = A.T @ lu.solve(r, trans="T")
    p = z.copy()
    zz = float(z @ z)
    pbnorm = float(np.linalg.norm(r))
    trace = [pbnorm]
    it = 0
    while it < max_iter:
        true_res = float(np.linalg.norm(b - A @ x))
        if true_res <= tol * bnorm and it > 0:
            break
        Ap = lu.solve(A @ p)
        alpha = zz / float(Ap @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = A.T @ lu.solve(r, trans="T")
        zz_new = float(z @ z)
        p = z + (zz_new / zz) * p
        zz = zz_new
        rn = float(np.linalg.norm(r))
        if rn > trace[-1] * (1.0 + 1e-10):
            raise StagnationError("preconditioned residual increased during iteration")
        if it > 50 and rn > (1.0 - 1e-10) * trace[-50]:
            raise StagnationError(
                f"solver stagnated at relative residual {rn / pbnorm:.3e}")
        trace.append(rn)
        it += 1
    else:
        raise StagnationError(
            f"no convergence in {max_iter} iterations "
            f"(preconditioned relative residual {trace[-1] / pbnorm:.3e})")
    f = x.reshape(grid.n, grid.n)
    gx, gy = grad_flat(f, grid)
    grad_l2 = float(np.sqrt(np.sum(gx**2 + gy**2) * grid.cell_area))
    return AuxSolution(f=f, residual_trace=trace, iterations=it, grad_l2=grad_l2)


def coercivity_probe(problem: WeightedEllipticProblem, n_probes: int = 20,
                     seed: int = 0) -> list[float]:
    """Ratios B(psi, psi) / ||psi||^2 for random compactly supported probes.

    The continuum identity makes every ratio exactly one; values far from
    one signal a discretization too coarse for the background density.
    """
    grid = problem.rho.grid
    rng = np.random.default_rng(seed)
    X, Y = grid.meshes()
    hw = grid.half_width
    ratios = []
    for _ in range(n_probes):
        px, py = rng.uniform(-0.4 * hw, 0.4 * hw, size=2)
        width = rng.uniform(0.15, 0.35) * hw
        amp = rng.uniform(0.5, 2.0)
        sx = np.clip((X - grid.center[0] - px) / width, -1, 1)
        sy = np.clip((Y - grid.center[1] - py) / width, -1, 1)
        with np.errstate(divide="ignore", over="ignore"):
            psi = amp * np.where(np.abs(sx) < 1, np.exp(1 - 1 / np.maximum(1 - sx**2, 1e-300)), 0.0) \
                * np.where(np.abs(sy) < 1, np.exp(1 - 1 / np.maximum(1 - sy**2, 1e-300)), 0.0)
        denom = problem.norm_sq(psi)
        if denom > 0:
            ratios.append(problem.bilinear(psi, psi) / denom)
    return ratios


def continuity_probe(problem: WeightedEllipticProblem, n_probes: int = 20,
                     seed: int = 1) -> list[float]:
    """Ratios |Phi(psi)| / ||psi|| whose boundedness reflects the envelope constant."""
    grid = problem.rho.grid
    rng = np.random.default_rng(seed)
    X, Y = grid.meshes()
    hw = grid.half_width
    out = []
    for _ in range(n_probes):
        px, py = rng.uniform(-0.4 * hw, 0.4 * hw, size=2)
        width = rng.uniform(0.15, 0.35) * hw
        sx = np.clip((X - grid.center[0] - px) / width, -1, 1)
        sy = np.clip((Y - grid.center[1] - py) / width, -1, 1)
        with np.errstate(divide="ignore", over="ignore"):
            psi = np.where(np.abs(sx) < 1, np.exp(1 - 1 / np.maximum(1 - sx**2, 1e-300)), 0.0) \
                * np.where(np.abs(sy) < 1, np.exp(1 - 1 / np.maximum(1 - sy**2, 1e-300)), 0.0)
        denom = np.sqrt(problem.norm_sq(psi))
        if denom > 0:
            out.append(abs(problem.functional(psi)) / denom)
    return out


# ---------------------------------------------------------------------------
# virial assembly

@dataclass
class VirialReport:
    R_used: float
    I1: float
    I2: float
    I3: float
    f_gradient_L2: float

    @property
    def closure(self) -> float:
        return 4.0 * self.I1 + 2.0 * self.I2 + self.I3


_grad_kernel_cache: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}


def _grad_kernel_ffts(grid: CartesianGrid):
    key = (grid.n, grid.h)
    hit = _grad_kernel_cache.get(key)
    if hit is not None:
        return hit
    n, h = grid.n, grid.h
    m = 2 * n
    idx = np.arange(m)
    d = np.where(idx < n, idx, idx - m).astype(float) * h
    DX, DY = np.meshgrid(d, d, indexing="ij")
    R2 = DX**2 + DY**2
    with np.errstate(divide="ignore", invalid="ignore"):
        KX = np.where(R2 > 0, -DX / (2.0 * np.pi * R2), 0.0)  # self term: odd kernel
        KY = np.where(R2 > 0, -DY / (2.0 * np.pi * R2), 0.0)
    out = (np.fft.rfft2(KX), np.fft.rfft2(KY))
    if len(_grad_kernel_cache) > 8:
        _grad_kernel_cache.clear()
    _grad_kernel_cache[key] = out
    return out


def potential_gradient(rho: DensityField, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """grad c by convolution with the kernel gradient -(x - y) / (2pi |x - y|^2).

    The self-cell term is zero by oddness of the kernel around the
    singularity.
    """
    grid = rho.grid
    q = rho.samples * rho.area_weights
    if method == "auto":
        method = "direct" if grid.n <= 96 else "fft"
    if method == "direct":
        X, Y = grid.meshes()
        px, py = X.ravel(), Y.ravel()
        qf = q.ravel()
        gx = np.zeros_like(qf)
        gy = np.zeros_like(qf)
        chunk = max(1, 2**22 // qf.size)
        for start in range(0, qf.size, chunk):
            stop = min(start + chunk, qf.size)
            dx = px[start:stop, None] - px[None, :]
            dy = py[start:stop, None] - py[None, :]
            r2 = dx**2 + dy**2
            with np.errstate(divide="ignore", invalid="ignore"):
                kx = np.where(r2 > 0, -dx / (2.0 * np.pi * r2), 0.0)
                ky = np.where(r2 > 0, -dy / (2.0 * np.pi * r2), 0.0)
            gx[start:stop] = kx @ qf
            gy[start:stop] = ky @ qf
        return gx.reshape(grid.n, grid.n), gy.reshape(grid.n, grid.n)
    KXf, KYf = _grad_kernel_ffts(grid)
    m = 2 * grid.n
    qpad = np.zeros((m, m))
    qpad[: grid.n, : grid.n] = q
    qf2 = np.fft.rfft2(qpad)
    gx = np.fft.irfft2(qf2 * KXf, s=(m, m))[: grid.n, : grid.n]
    gy = np.fft.irfft2(qf2 * KYf, s=(m, m))[: grid.n, : grid.n]
    return gx, gy


def assemble_virial(rho: DensityField, R_list, f: np.ndarray | None = None,
                    method: str = "auto") -> list[VirialReport]:
    """I1, I2, I3 and the closure 4 I1 + 2 I2 + I3 for each cutoff radius.

    With a flat factor, pass f = None (zero); both I3 terms then vanish
    identically. Otherwise f should come from solve_aux_pde.
    """
    grid = rho.grid
    phis = rho.phi.on_grid(grid)
    w_phi = rho.area_weights
    gcx, gcy = potential_gradient(rho, method=method)
    X, Y = grid.meshes()
    xdot = X * gcx + Y * gcy

    if f is None:
        f = np.zeros((grid.n, grid.n))
        grad_l2 = 0.0
    else:
        gx, gy = grad_flat(f, grid)
        grad_l2 = float(np.sqrt(np.sum(gx**2 + gy**2) * grid.cell_area))

    i3_core = dilation_source(rho.phi, grid)
    lap_f = np.exp(-2.0 * phis) * laplacian_flat(f, grid)
    gfx, gfy = grad_flat(f, grid)
    pairing = np.exp(-2.0 * phis) * (gfx * gcx + gfy * gcy)
    i3_field = (i3_core - lap_f - pairing) * rho.samples

    reports = []
    for R in sorted(float(v) for v in R_list):
        chi = cutoff_function(R, grid)
        I1 = float(np.sum(chi * rho.samples * w_phi))
        I2 = float(np.sum(chi * rho.samples * xdot * w_phi))
        I3 = float(np.sum(chi * i3_field) * grid.cell_area)
        reports.append(VirialReport(R_used=R, I1=I1, I2=I2, I3=I3,
                                    f_gradient_L2=grad_l2))
    return reports


def i2_double_sum(rho: DensityField, antisymmetrized: bool = False) -> float:
    """Direct O(N^2) evaluation of the uncut I2 kernel sum (oracle path).

    With antisymmetrized=True the kernel x.(x-y)/|x-y|^2 is replaced by its
    antisymmetric part 1/2, which collapses the sum to -(sum q)^2 minus the
    diagonal; agreement between the two confirms the cancellation used in
    the closed-form limit.
    """
    grid = rho.grid
    q = (rho.samples * rho.area_weights).ravel()
    if antisymmetrized:
        total = float(q.sum())
        return -(total * total - float(q @ q)) / (4.0 * np.pi)
    X, Y = grid.meshes()
    px, py = X.ravel(), Y.ravel()
    acc = 0.0
    chunk = max(1, 2**22 // q.size)
    for start in range(0, q.size, chunk):
        stop = min(start + chunk, q.size)
        dx = px[start:stop, None] - px[None, :]
        dy = py[start:stop, None] - py[None, :]
        r2 = dx**2 + dy**2
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(r2 > 0,
                         -(px[start:stop, None] * dx + py[start:stop, None] * dy)
                         / (2.0 * np.pi * r2), 0.0)
        acc += float(q[start:stop] @ (k @ q))
    return acc


def export_virial_csv(reports: list[VirialReport], path, meta: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        fh.write("R,I1,I2,I3,closure\n")
        for rep in reports:
            fh.write(f"{rep.R_used:.12g},{rep.I1:.17g},{rep.I2:.17g},"
                     f"{rep.I3:.17g},{rep.closure:.17g}\n")
