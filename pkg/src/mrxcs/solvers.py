"""Reconstruction algorithms: quadratic Tikhonov, Douglas-Rachford with a
TV + box prox, and forward-backward splitting as a comparator.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
import scipy.linalg

from .model import spectral_norm
from .phantom import ConcentrationImage


class SolverError(ArithmeticError):
    """Numerical failure inside a solver (factorization, non-finite iterate)."""


# ---------------------------------------------------------------------------
# discrete gradient

@dataclass(frozen=True)
class GradientOperator:
    """Forward differences with replicate boundary on an ``ny x nx`` image.

    Maps R^{N_v} to R^{2 N_v}: x-differences (along rows) stacked over
    y-differences (along columns). The last column / last row of each
    difference image is zero.
    """

    ny: int
    nx: int

    @property
    def n(self) -> int:
        return self.ny * self.nx

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}")
        img = x.reshape(self.ny, self.nx)
        gx = np.zeros_like(img)
        gy = np.zeros_like(img)
        gx[:, :-1] = img[:, 1:] - img[:, :-1]
        gy[:-1, :] = img[1:, :] - img[:-1, :]
        return np.concatenate([gx.ravel(), gy.ravel()])

    def adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (2 * self.n,):
            raise ValueError(f"expected a vector of length {2 * self.n}")
        gx = v[:self.n].reshape(self.ny, self.nx)
        gy = v[self.n:].reshape(self.ny, self.nx)
        out = np.zeros((self.ny, self.nx))
        out[:, :-1] -= gx[:, :-1]
        out[:, 1:] += gx[:, :-1]
        out[:-1, :] -= gy[:-1, :]
        out[1:, :] += gy[:-1, :]
        return out.ravel()

    def tv(self, x) -> float:
        """Anisotropic total variation ``sum |d_x x| + sum |d_y x|``."""
        return float(np.abs(self.apply(x)).sum())


def gradient_apply(g: GradientOperator, n) -> np.ndarray:
    return g.apply(n)


def gradient_adjoint(g: GradientOperator, v) -> np.ndarray:
    return g.adjoint(v)


def _image_shape(n_vox: int, shape=None) -> tuple[int, int]:
    if shape is not None:
        return tuple(shape)
    side = int(round(np.sqrt(n_vox)))
    if side * side != n_vox:
        raise ValueError("non-square voxel count; pass the image shape explicitly")
    return side, side


# ---------------------------------------------------------------------------
# quadratic Tikhonov

def _cholesky(mat: np.ndarray, mu: float):
    with np.errstate(over="ignore", invalid="ignore"):
        gram = mat.T @ mat
    gram[np.diag_indices_from(gram)] += mu
    if not np.all(np.isfinite(gram)):
        raise SolverError(f"M^T M + mu I is not finite (mu={mu:g})")
    try:
        return scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Cholesky of M^T M + mu I failed for mu={mu:g}: {exc}") from exc


def quadratic_tikhonov(operator, data, mu: float) -> np.ndarray:
    """Solve ``(M^T M + mu I) n = M^T b`` by Cholesky."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    mat = np.asarray(getattr(operator, "matrix", operator), dtype=float)
    b = np.asarray(getattr(data, "values", data), dtype=float)
    if mat.shape[0] != b.size:
        raise ValueError(f"operator has {mat.shape[0]} rows but data has length {b.size}")
    factor = _cholesky(mat, mu)
    return scipy.linalg.cho_solve(factor, mat.T @ b)


# ---------------------------------------------------------------------------
# TV + box prox

@numba.njit(cache=True)
def _tv1d(y, lam, out):
    """Exact prox of ``lam * sum |x_{i+1} - x_i|`` (Condat's direct algorithm).

    Restarting a segment at the right end resets both ``kminus`` and
    ``kplus``; the ``k0 >= n`` exits cover a final segment whose slack is
    negative only by rounding, when every output is already written.
    """
    n = y.shape[0]
    if n == 0:
        return
    if lam <= 0.0:
        for i in range(n):
            out[i] = y[i]
        return
    k = 0
    k0 = 0
    kplus = 0
    kminus = 0
    umin = lam
    umax = -lam
    vmin = y[0] - lam
    vmax = y[0] + lam
    twolam = 2.0 * lam
    minlam = -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                if k0 >= n:
                    return
                k = k0
                kminus = k0
                kplus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                if k0 >= n:
                    return
                k = k0
                kminus = k0
                kplus = k0
                vmax = y[k0]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return
        umin += y[k + 1] - vmin
        if umin < minlam:
            while True:
                out[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kminus = k0
            kplus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = minlam
        else:
            umax += y[k + 1] - vmax
            if umax > lam:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kminus = k0
                kplus = k0
                vmax = y[k0]
                vmin = vmax - twolam
                umin = lam
                umax = minlam
            else:
                k += 1
                if umin >= lam:
                    kminus = k
                    vmin += (umin - lam) / (kminus - k0 + 1)
                    umin = lam
                if umax <= minlam:
                    kplus = k
                    vmax += (umax + lam) / (kplus - k0 + 1)
                    umax = minlam


@numba.njit(cache=True)
def _tv1d_rows(img, lam, lo, hi):
    """Row-wise 1-D TV prox followed by clipping to ``[lo, hi]``."""
    out = np.empty_like(img)
    buf_in = np.empty(img.shape[1])
    buf_out = np.empty(img.shape[1])
    for r in range(img.shape[0]):
        for c in range(img.shape[1]):
            buf_in[c] = img[r, c]
        _tv1d(buf_in, lam, buf_out)
        for c in range(img.shape[1]):
            v = buf_out[c]
            if v < lo:
                v = lo
            elif v > hi:
                v = hi
            out[r, c] = v
    return out


def tv1d_prox(y, lam: float) -> np.ndarray:
    """Prox of ``lam * TV`` for a 1-D signal."""
    y = np.ascontiguousarray(y, dtype=float)
    out = np.empty_like(y)
    _tv1d(y, float(lam), out)
    return out


def tv_box_prox(v, weight: float, n_max: float = 1.0, inner_iter: int = 30,
                shape=None, box: bool = True) -> np.ndarray:
    """Approximate ``argmin_z 1/2 |v - z|^2 + weight * TV(z) + i_C(z)``.

    ``C`` is ``[0, n_max]^N`` when ``box`` is set and the whole space
    otherwise. The anisotropic TV splits into a horizontal and a vertical
    part; Douglas-Rachford alternates between

        F(z) = 1/2 |v - z|^2 + weight * TV_x(z) + i_C(z)
        G(z) = weight * TV_y(z) + i_C(z)

    whose proxes are exact (row/column 1-D TV prox followed by clipping,
    which is exact for 1-D TV with a box). A fixed ``inner_iter`` steps are
    run from ``clip(v)``; the returned point is a prox output of ``F`` and
    therefore always lies in ``C``.
    """
    v = np.asarray(v, dtype=float)
    ny, nx = _image_shape(v.size, shape)
    lo, hi = (0.0, float(n_max)) if box else (-np.inf, np.inf)
    img = v.reshape(ny, nx)
    if weight <= 0.0:
        return np.clip(img, lo, hi).ravel()
    if ny == 1 or nx == 1:
        # single line: the prox is exact in one step
        line = img.reshape(1, -1)
        return _tv1d_rows(np.ascontiguousarray(line), weight, lo, hi).ravel()

    # step gamma = 1: prox_F(x) = clip(tv_x((v + x) / 2, weight / 2))
    x = np.clip(img, lo, hi)
    z = x
    for _ in range(max(inner_iter, 1)):
        z = _tv1d_rows(0.5 * (img + x), 0.5 * weight, lo, hi)
        w = _tv1d_rows(np.ascontiguousarray((2.0 * z - x).T), weight, lo, hi).T
        x = x + w - z
    z = _tv1d_rows(0.5 * (img + x), 0.5 * weight, lo, hi)
    return z.ravel()


# ---------------------------------------------------------------------------
# outer solvers

@dataclass(frozen=True)
class SolverConfig:
    mu: float = 4e-13
    alpha: float = 1e-14
    beta_active: bool = True
    s: float = 1.0
    n_max: float = 1.0
    n_iter: int = 50
    inner_iter: int = 30
    tolerance: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.s < 2.0:
            raise ValueError("relaxation s must lie in (0, 2)")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not self.n_max > 0:
            raise ValueError("n_max must be positive")
        if self.inner_iter < 1:
            raise ValueError("inner_iter must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    objective: float
    rel_change: float
    infeasibility: float
    infeasibility_n: float


@dataclass(frozen=True, eq=False)
class ReconResult:
    """Final feasible reconstruction plus the per-iteration trace.

    ``n_last`` is the last data-step iterate, which may leave the box.
    """

    values: np.ndarray
    n_last: np.ndarray
    trace: tuple[IterRecord, ...]
    config: dict
    method: str
    wall_time: float = field(default=0.0, compare=False)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def image(self, grid, n_max: float = 1.0) -> ConcentrationImage:
        return ConcentrationImage(self.values, grid, n_max)


def _objective(mat, y, x, alpha, grad) -> float:
    r = mat @ x - y
    val = 0.5 * float(r @ r)
    if alpha > 0:
        val += alpha * grad.tv(x)
    return val


def _violation(x, box: bool, n_max: float) -> float:
    if not box:
        return 0.0
    return float(max(0.0, -x.min(), x.max() - n_max))


def _rel_change(new, old) -> float:
    nrm = np.linalg.norm(new)
    diff = np.linalg.norm(new - old)
    return float(diff / nrm) if nrm > 0 else float(diff)


def _check_finite(x, what: str, k: int):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite values in {what} at iteration {k}")


def _prepare(operator, data, shape):
    mat = np.asarray(getattr(operator, "matrix", operator), dtype=float)
    y = np.asarray(getattr(data, "values", data), dtype=float)
    if mat.shape[0] != y.size:
        raise ValueError(f"operator has {mat.shape[0]} rows but data has length {y.size}")
    grid = getattr(getattr(operator, "lead", operator), "grid", None)
    if shape is None and grid is not None:
        shape = grid.shape
    ny, nx = _image_shape(mat.shape[1], shape)
    return mat, y, GradientOperator(ny, nx)


def douglas_rachford_solve(operator, data, config: SolverConfig = SolverConfig(),
                           shape=None) -> ReconResult:
    """Douglas-Rachford splitting for ``1/2|y - M n|^2 + alpha TV(n) + i_C(n)``.

    Per iteration::

        n_k   = (M^T M + mu I)^{-1} (M^T y + mu z_k)
        zt_k  = prox of (alpha/mu) TV + i_C at 2 n_k - z_k
        z_k+1 = z_k + s (zt_k - n_k)

    starting from ``z_0 = 0``. The Cholesky factor is computed once. Returns
    the last ``zt_k``; the trace records the objective at ``zt_k`` and the
    relative change of ``n_k``.
    """
    t0 = time.perf_counter()
    mat, y, grad = _prepare(operator, data, shape)
    cfg = config
    factor = _cholesky(mat, cfg.mu)
    rhs0 = mat.T @ y
    weight = cfg.alpha / cfg.mu
    z = np.zeros(mat.shape[1])
    n_prev = z
    zt = z
    trace = []
    for k in range(1, cfg.n_iter + 1):
        n = scipy.linalg.cho_solve(factor, rhs0 + cfg.mu * z)
        _check_finite(n, "n_k", k)
        zt = tv_box_prox(2.0 * n - z, weight, cfg.n_max, cfg.inner_iter,
                         (grad.ny, grad.nx), cfg.beta_active)
        _check_finite(zt, "prox output", k)
        z = z + cfg.s * (zt - n)
        change = _rel_change(n, n_prev)
        trace.append(IterRecord(k, _objective(mat, y, zt, cfg.alpha, grad), change,
                                _violation(zt, cfg.beta_active, cfg.n_max),
                                _violation(n, cfg.beta_active, cfg.n_max)))
        n_prev = n
        if cfg.tolerance > 0 and k > 1 and change < cfg.tolerance:
            break
    return ReconResult(zt, n_prev, tuple(trace), cfg.to_dict(), "douglas_rachford",
                       time.perf_counter() - t0)


def forward_backward_solve(operator, data, config: SolverConfig = SolverConfig(),
                           shape=None, norm_tol: float = 1e-6) -> ReconResult:
    """Forward-backward splitting with unit step on the same objective as DR.

    Iterates ``z_k = n_k - M^T (M n_k - y)``, ``n_{k+1} = prox_{alpha TV + i_C}(z_k)``
    from ``n_0 = 0``. Requires ``|M|_2 <= 1``.
    """
    t0 = time.perf_counter()
    mat, y, grad = _prepare(operator, data, shape)
    cfg = config
    nrm = spectral_norm(mat)
    if nrm > 1.0 + norm_tol:
        raise ValueError(f"forward-backward needs |M|_2 <= 1, got {nrm:.6g}")
    n = np.zeros(mat.shape[1])
    trace = []
    for k in range(1, cfg.n_iter + 1):
        z = n - mat.T @ (mat @ n - y)
        n_new = tv_box_prox(z, cfg.alpha, cfg.n_max, cfg.inner_iter,
                            (grad.ny, grad.nx), cfg.beta_active)
        _check_finite(n_new, "n_k", k)
        change = _rel_change(n_new, n)
        viol = _violation(n_new, cfg.beta_active, cfg.n_max)
        trace.append(IterRecord(k, _objective(mat, y, n_new, cfg.alpha, grad), change, viol, viol))
        n = n_new
        if cfg.tolerance > 0 and k > 1 and change < cfg.tolerance:
            break
    return ReconResult(n, n, tuple(trace), cfg.to_dict(), "forward_backward",
                       time.perf_counter() - t0)
