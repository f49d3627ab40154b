"""Flow reconstruction from a stitched gradient field.

Minimizes, separately for ``u`` and ``v``,

    sum_p |D F(p) - G(p)|^2 + lambda(p) |F(p) - F_ref(p)|^2

where ``D`` is the forward-difference operator of :func:`imagecore.gradient`
restricted to in-image differences and ``lambda`` is non-zero only on the
reference patch. The normal equations are solved with preconditioned
conjugate gradients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NoConvergence, SizeError
from .imagecore import FlowField, GradientField

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.1
PRECONDITIONERS = ("amg", "jacobi")


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-6
    max_iterations: int | None = None   # None -> 10 * sqrt(pixel count)
    downsample_factor: int = 1
    preconditioner: str = "amg"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.downsample_factor not in (1, 2, 4):
            raise ValueError(f"downsample_factor must be 1, 2 or 4, got {self.downsample_factor}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def iteration_budget(self, n_pixels):
        if self.max_iterations is not None:
            return self.max_iterations
        return max(10, int(10 * math.sqrt(n_pixels)))


@dataclass(frozen=True, eq=False)
class ScreenedPoissonProblem:
    target_gradient: GradientField
    reference_flow: FlowField
    reference_mask: np.ndarray
    lam: float = DEFAULT_LAMBDA
    # optional (wx, wy) weights of each forward difference; None means all ones
    gradient_weights: tuple | None = None

    def __post_init__(self):
        mask = np.asarray(self.reference_mask, bool)
        if mask.shape != self.target_gradient.shape or self.reference_flow.shape != mask.shape:
            raise SizeError("gradient, reference flow and reference mask must share one shape")
        if not mask.any():
            raise ValueError("reference mask selects no pixel")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        object.__setattr__(self, "reference_mask", mask)
        if self.gradient_weights is not None:
            wx, wy = (np.asarray(w, np.float64) for w in self.gradient_weights)
            if wx.shape != mask.shape or wy.shape != mask.shape:
                raise SizeError("gradient weights must match the problem shape")
            if (wx < 0).any() or (wy < 0).any():
                raise ValueError("gradient weights must be non-negative")
            object.__setattr__(self, "gradient_weights", (wx, wy))

    def difference_weights(self):
        """Weights of the in-image x and y differences, flattened."""
        if self.gradient_weights is None:
            return None, None
        wx, wy = self.gradient_weights
        return wx[:, :-1].ravel(), wy[:-1, :].ravel()

    @property
    def shape(self):
        return self.target_gradient.shape


@dataclass
class SolveInfo:
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    shape: tuple = ()
    factor: int = 1


# --------------------------------------------------------------------------
# operators


def _diff_1d(n):
    """(n-1) x n forward difference matrix."""
    if n < 2:
        return sp.csr_matrix((0, n))
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def difference_operators(height, width):
    """Sparse ``Dx``, ``Dy`` acting on row-major flattened fields."""
    Dx = sp.kron(sp.identity(height, format="csr"), _diff_1d(width), format="csr")
    Dy = sp.kron(_diff_1d(height), sp.identity(width, format="csr"), format="csr")
    return Dx, Dy


def normal_matrix(height, width, weights, wx=None, wy=None):
    Dx, Dy = difference_operators(height, width)
    if wx is not None:
        Dx = sp.diags(np.sqrt(wx)) @ Dx
        Dy = sp.diags(np.sqrt(wy)) @ Dy
    A = (Dx.T @ Dx + Dy.T @ Dy + sp.diags(weights.ravel())).tocsr()
    return A, Dx, Dy


def divergence_rhs(Dx, Dy, gx, gy, wx=None, wy=None):
    """Adjoint of the (weighted) forward difference applied to the in-image targets."""
    bx = gx[:, :-1].ravel().astype(np.float64)
    by = gy[:-1, :].ravel().astype(np.float64)
    if wx is not None:
        bx = bx * np.sqrt(wx)
        by = by * np.sqrt(wy)
    return Dx.T @ bx + Dy.T @ by


def _preconditioner(A, kind):
    if kind == "amg":
        import pyamg
        return pyamg.ruge_stuben_solver(A).aspreconditioner(cycle="V")
    inv = 1.0 / A.diagonal()
    return lambda r: inv * r


def pcg(A, b, precond, tol, maxiter, x0=None):
    """Preconditioned conjugate gradients; returns (x, iterations, relative residual)."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else x0.astype(np.float64).copy()
    r = b - A @ x
    z = precond(r)
    p = z.copy()
    rz = r @ z
    it = 0
    while it < maxiter:
        if np.linalg.norm(r) <= tol * bnorm:
            break
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if it % 200 == 0:
            r = b - A @ x
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, it, res


# --------------------------------------------------------------------------
# solves


def solve_with_info(problem: ScreenedPoissonProblem, opts: SolverOptions | None = None):
    opts = opts or SolverOptions()
    if opts.downsample_factor > 1:
        return _solve_downsampled(problem, opts)
    return _solve_full(problem, opts)


def solve(problem: ScreenedPoissonProblem, opts: SolverOptions | None = None) -> FlowField:
    """Reconstruct the flow whose gradient best fits the target."""
    opts = opts or SolverOptions()
    if opts.downsample_factor != 1:
        opts = SolverOptions(opts.tolerance, opts.max_iterations, 1, opts.preconditioner)
    return _solve_full(problem, opts)[0]


def solve_downsampled(problem: ScreenedPoissonProblem, opts: SolverOptions) -> FlowField:
    """Solve on ``f x f`` blocks and bilinearly upsample the result."""
    if opts.downsample_factor == 1:
        return _solve_full(problem, opts)[0]
    return _solve_downsampled(problem, opts)[0]


def _solve_full(problem, opts):
    H, W = problem.shape
    G = problem.target_gradient
    weights = np.where(problem.reference_mask, problem.lam, 0.0)
    wx, wy = problem.difference_weights()
    A, Dx, Dy = normal_matrix(H, W, weights, wx, wy)
    M = _preconditioner(A, opts.preconditioner)
    maxiter = opts.iteration_budget(H * W)
    info = SolveInfo(shape=(H, W))
    out = []
    for gx, gy, ref in ((G.gx_u, G.gy_u, problem.reference_flow.u),
                        (G.gx_v, G.gy_v, problem.reference_flow.v)):
        b = divergence_rhs(Dx, Dy, gx, gy, wx, wy) + weights.ravel() * ref.ravel()
        x, it, res = pcg(A, b, M, opts.tolerance, maxiter)
        info.iterations.append(it)
        info.residuals.append(res)
        if res > opts.tolerance:
            raise NoConvergence(
                f"CG stopped at relative residual {res:.3g} after {it} iterations "
                f"(tolerance {opts.tolerance:g})", res, it)
        out.append(x.reshape(H, W))
    log.debug("screened poisson %dx%d: iterations %s residuals %s", W, H, info.iterations, info.residuals)
    return FlowField(out[0].astype(np.float32), out[1].astype(np.float32)), info


# --------------------------------------------------------------------------
# block resampling


def _pad_to(a, f):
    H, W = a.shape
    return np.pad(a, ((0, (-H) % f), (0, (-W) % f)), mode="edge")


def block_mean(a, f, weights=None):
    """Average over ``f x f`` blocks after edge padding; weighted if given."""
    a = _pad_to(np.asarray(a, np.float64), f)
    Hc, Wc = a.shape[0] // f, a.shape[1] // f
    if weights is None:
        return a.reshape(Hc, f, Wc, f).mean(axis=(1, 3))
    w = _pad_to(np.asarray(weights, np.float64), f)
    num = (a * w).reshape(Hc, f, Wc, f).sum(axis=(1, 3))
    den = w.reshape(Hc, f, Wc, f).sum(axis=(1, 3))
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0), den / (f * f)


def _axis_weights(n_fine, n_coarse, f):
    pos = (np.arange(n_fine) - (f - 1) / 2.0) / f
    if n_coarse == 1:
        return np.zeros(n_fine, np.int64), np.zeros(n_fine)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, n_coarse - 2)
    return i0, pos - i0


def upsample(coarse, f, height, width):
    """Bilinear upsampling by ``f`` with linear extrapolation at the borders.

    Coarse sample ``(X, Y)`` sits at fine position ``f * X + (f - 1) / 2``, so
    fields linear in the pixel coordinates are reproduced exactly.
    """
    c = np.asarray(coarse, np.float64)
    Hc, Wc = c.shape
    iy, ty = _axis_weights(height, Hc, f)
    ix, tx = _axis_weights(width, Wc, f)
    iy1 = np.minimum(iy + 1, Hc - 1)
    ix1 = np.minimum(ix + 1, Wc - 1)
    ty = ty[:, None]
    tx = tx[None, :]
    top = c[iy][:, ix] * (1 - tx) + c[iy][:, ix1] * tx
    bot = c[iy1][:, ix] * (1 - tx) + c[iy1][:, ix1] * tx
    return top * (1 - ty) + bot * ty


def upsample_flow(flow: FlowField, f, height, width) -> FlowField:
    return FlowField(upsample(flow.u, f, height, width).astype(np.float32),
                     upsample(flow.v, f, height, width).astype(np.float32))


def downsample_problem(problem: ScreenedPoissonProblem, f) -> ScreenedPoissonProblem:
    G = problem.target_gradient
    gw = problem.gradient_weights
    if gw is None:
        coarse_g = GradientField(*(f * block_mean(g, f) for g in (G.gx_u, G.gy_u, G.gx_v, G.gy_v)))
        coarse_w = None
    else:
        gxu, cwx = block_mean(G.gx_u, f, gw[0])
        gyu, cwy = block_mean(G.gy_u, f, gw[1])
        gxv, _ = block_mean(G.gx_v, f, gw[0])
        gyv, _ = block_mean(G.gy_v, f, gw[1])
        coarse_g = GradientField(f * gxu, f * gyu, f * gxv, f * gyv)
        coarse_w = (cwx, cwy)
    m = problem.reference_mask.astype(np.float64)
    ru, frac = block_mean(problem.reference_flow.u, f, m)
    rv, _ = block_mean(problem.reference_flow.v, f, m)
    cmask = frac >= 0.5
    if not cmask.any():
        cmask = frac > 0
    return ScreenedPoissonProblem(coarse_g, FlowField(ru, rv), cmask, problem.lam, coarse_w)


def _solve_downsampled(problem, opts):
    f = opts.downsample_factor
    H, W = problem.shape
    if -(-H // f) < 2 or -(-W // f) < 2:
        raise SizeError(f"{W}x{H} is too small for downsampling by {f}")
    coarse = downsample_problem(problem, f)
    flow, info = _solve_full(coarse, SolverOptions(opts.tolerance, opts.max_iterations, 1,
                                                   opts.preconditioner))
    info.factor = f
    return upsample_flow(flow, f, H, W), info


def residual(problem: ScreenedPoissonProblem, flow: FlowField):
    """Relative normal-equation residuals ``(u, v)`` of a candidate solution."""
    H, W = problem.shape
    G = problem.target_gradient
    weights = np.where(problem.reference_mask, problem.lam, 0.0)
    wx, wy = problem.difference_weights()
    A, Dx, Dy = normal_matrix(H, W, weights, wx, wy)
    out = []
    for gx, gy, ref, x in ((G.gx_u, G.gy_u, problem.reference_flow.u, flow.u),
                           (G.gx_v, G.gy_v, problem.reference_flow.v, flow.v)):
        b = divergence_rhs(Dx, Dy, gx, gy, wx, wy) + weights.ravel() * ref.ravel()
        bn = np.linalg.norm(b)
        r = np.linalg.norm(b - A @ x.ravel().astype(np.float64))
        out.append(r / bn if bn > 0 else r)
    return tuple(out)
