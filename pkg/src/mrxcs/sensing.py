"""Coil activation patterns and the compressed-sensing measurement operator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LeadField, MeasurementSet, add_noise, spectral_norm

SCHEMES = ("gaussian", "bernoulli", "deterministic")


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    """m x N_c matrix; row j holds the coil weights of activation pattern j."""

    matrix: np.ndarray
    scheme: str
    seed: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.matrix.ndim != 2 or not 1 <= self.matrix.shape[0] <= self.matrix.shape[1]:
            raise ValueError("activation matrix must be m x N_c with 1 <= m <= N_c")

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_coils(self) -> int:
        return self.matrix.shape[1]


def equispaced_indices(m: int, n_coils: int) -> list[int]:
    """Coil indices ``round(j * n_coils / m)``; a taken index advances to the next free one."""
    taken = set()
    out = []
    for j in range(m):
        idx = min(int(np.floor(j * n_coils / m + 0.5)), n_coils - 1)
        while idx in taken:
            idx += 1
        if idx >= n_coils:
            # wrap around to the smallest free index; only reachable through clamping
            idx = next(i for i in range(n_coils) if i not in taken)
        taken.add(idx)
        out.append(idx)
    return sorted(out)


def make_activation(scheme: str, m: int, n_coils: int, seed: int = 0) -> ActivationMatrix:
    if not 1 <= m <= n_coils:
        raise ValueError(f"need 1 <= m <= n_coils, got m={m}, n_coils={n_coils}")
    if scheme == "gaussian":
        rng = np.random.Generator(np.random.PCG64(seed))
        mat = rng.standard_normal((m, n_coils))
    elif scheme == "bernoulli":
        rng = np.random.Generator(np.random.PCG64(seed))
        mat = np.where(rng.integers(0, 2, size=(m, n_coils)) == 1, 1.0, -1.0)
    elif scheme == "deterministic":
        mat = np.zeros((m, n_coils))
        mat[np.arange(m), equispaced_indices(m, n_coils)] = 1.0
        seed = None
    else:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return ActivationMatrix(mat, scheme, seed)


def reshape_mat(vec: np.ndarray, n_sensors: int) -> np.ndarray:
    """Stacked vector of length k*N_s to the k x N_s matrix whose row i is block i."""
    vec = np.asarray(vec)
    if vec.ndim != 1 or vec.size % n_sensors:
        raise ValueError(f"length {vec.size} is not divisible by n_sensors={n_sensors}")
    return vec.reshape(-1, n_sensors)


def reshape_vec(mat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`reshape_mat`."""
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise ValueError("expected a 2-D block matrix")
    return mat.reshape(-1)


def compress_data(full: MeasurementSet, a: ActivationMatrix, snr_db: float | None = None,
                  seed: int | None = None) -> MeasurementSet:
    """CS data ``y_j = sum_c a_jc b_c``, i.e. ``Y = A mat(b)``.

    With ``snr_db`` given, noise is added after compression (calibrated
    against the compressed clean signal); otherwise the noise already
    present in ``full`` is carried through.
    """
    if full.layout != "full":
        raise ValueError("compress_data expects full-layout data")
    if full.n_blocks != a.n_coils:
        raise ValueError(f"data has {full.n_blocks} coil blocks, activation expects {a.n_coils}")
    y = reshape_vec(a.matrix @ reshape_mat(full.values, full.n_sensors))
    snr, sd = full.noise_snr_db, full.seed
    if snr_db is not None:
        y = add_noise(y, snr_db, 0 if seed is None else seed)
        snr, sd = snr_db, seed
    return MeasurementSet(y, full.n_sensors, "compressed", snr, sd, a)


@dataclass(frozen=True, eq=False)
class CsOperator:
    """Normalized CS forward matrix ``M = (A kron I) L / scale``.

    Data measured through ``A`` must be divided by ``scale`` before solving
    with ``matrix`` (see :meth:`normalize_data`).
    """

    matrix: np.ndarray
    scale: float
    activation: ActivationMatrix
    lead: LeadField

    @property
    def n_sensors(self) -> int:
        return self.lead.n_sensors

    def normalize_data(self, y) -> np.ndarray:
        return np.asarray(getattr(y, "values", y), dtype=float) / self.scale

    def __matmul__(self, other):
        return self.matrix @ other


def compose_operator(lead: LeadField, a: ActivationMatrix) -> CsOperator:
    if a.n_coils != lead.n_coils:
        raise ValueError(f"activation has {a.n_coils} coils, lead field has {lead.n_coils}")
    blocks = lead.matrix.reshape(lead.n_coils, lead.n_sensors, lead.n_voxels)
    raw = np.tensordot(a.matrix, blocks, axes=(1, 0)).reshape(a.m * lead.n_sensors, lead.n_voxels)
    scale = spectral_norm(raw)
    if not scale > 0:
        raise ValueError("composed operator is identically zero")
    return CsOperator(raw / scale, scale, a, lead)
