"""Error metrics, L-curve, singular spectrum and small-instance CS diagnostics."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .solvers import quadratic_tikhonov

SNR_CAP_DB = 300.0


@dataclass(frozen=True)
class MetricsReport:
    relative_rmse: float
    snr_db: float
    pearson: float | None
    phantom: str = ""
    method: str = ""
    m: int | None = None
    scheme: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def evaluate(truth, recon, phantom: str = "", method: str = "", m: int | None = None,
             scheme: str = "") -> MetricsReport:
    """Relative RMSE, SNR (dB) and Pearson correlation of ``recon`` against ``truth``.

    A perfect reconstruction reports SNR as ``SNR_CAP_DB``; a constant input
    leaves Pearson as ``None``.
    """
    t, r = _values(truth), _values(recon)
    if t.shape != r.shape:
        raise ValueError("truth and reconstruction live on different grids")
    t_norm = np.linalg.norm(t)
    if t_norm == 0.0:
        raise ValueError("relative metrics need a nonzero ground truth")
    err = np.linalg.norm(t - r)
    rmse = float(err / t_norm)
    snr = SNR_CAP_DB if err == 0.0 else min(SNR_CAP_DB, 20.0 * math.log10(t_norm / err))
    if np.ptp(t) == 0.0 or np.ptp(r) == 0.0:
        pearson = None
    else:
        pearson = float(np.clip(np.corrcoef(t, r)[0, 1], -1.0, 1.0))
    return MetricsReport(rmse, float(snr), pearson, phantom, method, m, scheme)


@dataclass(frozen=True)
class LCurvePoint:
    mu: float
    log_residual: float
    log_solution_norm: float
    ok: bool = True
    error: str = ""


def l_curve(operator, data, mu_grid) -> list[LCurvePoint]:
    """Tikhonov sweep: log10 of ``|M n_mu - y|^2`` and of ``|n_mu|`` per mu.

    A failing point is flagged (``ok=False``, NaN coordinates) and the sweep
    continues.
    """
    mus = [float(mu) for mu in mu_grid]
    if len(mus) < 3:
        raise ValueError("the L-curve needs at least 3 values of mu")
    if any(b <= a for a, b in zip(mus, mus[1:])) or mus[0] <= 0:
        raise ValueError("mu_grid must be positive and strictly ascending")
    mat = np.asarray(getattr(operator, "matrix", operator), dtype=float)
    y = _values(data)
    out = []
    for mu in mus:
        try:
            x = quadratic_tikhonov(mat, y, mu)
            res = mat @ x - y
            out.append(LCurvePoint(mu, math.log10(float(res @ res)), math.log10(np.linalg.norm(x))))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            out.append(LCurvePoint(mu, math.nan, math.nan, False, str(exc)))
    return out


def singular_spectrum(matrix) -> np.ndarray:
    mat = np.asarray(getattr(matrix, "matrix", matrix), dtype=float)
    if mat.size == 0:
        raise ValueError("empty matrix")
    return np.linalg.svd(mat, compute_uv=False)


def k_term_error(x, k: int) -> float:
    """l1 error of the best k-term approximation: drop the k largest magnitudes."""
    mags = np.sort(np.abs(np.asarray(x, dtype=float)))[::-1]
    if not 0 <= k <= mags.size:
        raise ValueError(f"k must lie in [0, {mags.size}]")
    return float(mags[k:].sum())


def rip_estimate(matrix, k: int, max_supports: int = 10 ** 6, batch: int = 4096) -> float:
    """Exact restricted isometry constant delta_k by enumerating all k-column supports."""
    mat = np.asarray(matrix, dtype=float)
    n = mat.shape[1]
    if not 1 <= k <= min(12, n):
        raise ValueError(f"k must lie in [1, {min(12, n)}]")
    if math.comb(n, k) > max_supports:
        raise ValueError(f"C({n}, {k}) = {math.comb(n, k)} supports exceeds the budget {max_supports}")
    gram = mat.T @ mat
    delta = 0.0
    supports = itertools.combinations(range(n), k)
    while True:
        chunk = list(itertools.islice(supports, batch))
        if not chunk:
            break
        idx = np.array(chunk)
        sub = gram[idx[:, :, None], idx[:, None, :]]
        eig = np.linalg.eigvalsh(sub)
        delta = max(delta, float(np.max(1.0 - eig[:, 0])), float(np.max(eig[:, -1] - 1.0)))
    return delta
