"""Imaging geometry, coil fields and the ME-MRX lead-field matrix.

All coordinates are in meters in 3-space; the imaging plane is z = 0.
Voxel values are stored row-major with rows along y, i.e. voxel index
``v = iy * n + ix``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

MU0 = 4e-7 * np.pi
_TINY = 1e-300


class GeometryError(ValueError):
    """Raised for geometries that are invalid or would put a source in the grid."""


class SingularityError(ArithmeticError):
    """Raised when a field or kernel evaluation hits a 0/0 configuration."""


def _unit(vec, name: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=float).reshape(3)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise GeometryError(f"{name} must be nonzero")
    return vec / norm


@dataclass(frozen=True)
class GridSpec:
    """Regular ``n_per_side x n_per_side`` voxel lattice on ``[-w, w]^2``."""

    half_width: float
    n_per_side: int

    def __post_init__(self):
        if self.n_per_side < 2:
            raise GeometryError("n_per_side must be >= 2")
        if not self.half_width > 0:
            raise GeometryError("half_width must be positive")

    @property
    def n_voxels(self) -> int:
        return self.n_per_side ** 2

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n_per_side

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_per_side, self.n_per_side)

    def axis(self) -> np.ndarray:
        """Voxel-center coordinates along one side."""
        h = self.spacing
        return -self.half_width + h * (np.arange(self.n_per_side) + 0.5)

    def centers(self) -> np.ndarray:
        """(N_v, 3) voxel centers, ordered row-major with rows along y."""
        ax = self.axis()
        yy, xx = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])

    def relative_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Voxel centers in region-relative units, each in (-1, 1), as (n, n) arrays."""
        ax = self.axis() / self.half_width
        yy, xx = np.meshgrid(ax, ax, indexing="ij")
        return xx, yy

    def contains(self, point) -> bool:
        """True if ``point`` lies in the closed region (z is ignored)."""
        p = np.asarray(point, dtype=float)
        return bool(abs(p[0]) <= self.half_width and abs(p[1]) <= self.half_width)


@dataclass(frozen=True)
class Sensor:
    position: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "direction", _unit(self.direction, "sensor direction"))


@dataclass(frozen=True)
class Coil:
    """Circular coil approximated by a closed polygon of ``n_segments`` straight pieces."""

    center: np.ndarray
    normal: np.ndarray
    radius: float
    n_segments: int = 45
    current: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "normal", _unit(self.normal, "coil normal"))
        if self.n_segments < 3:
            raise GeometryError("a coil needs at least 3 segments")
        if not self.radius > 0:
            raise GeometryError("coil radius must be positive")

    def endpoints(self) -> np.ndarray:
        """(n_segments + 1, 3) polygon vertices; the last repeats the first.

        Orientation is counter-clockwise about ``normal`` so that the current
        produces a field along ``+normal`` at the center.
        """
        nrm = self.normal
        seed = np.array([1.0, 0.0, 0.0]) if abs(nrm[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = seed - nrm * (seed @ nrm)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(nrm, e1)
        phi = 2.0 * np.pi * np.arange(self.n_segments) / self.n_segments
        pts = self.center + self.radius * (np.outer(np.cos(phi), e1) + np.outer(np.sin(phi), e2))
        return np.vstack([pts, pts[:1]])


@dataclass(frozen=True)
class Geometry:
    grid: GridSpec
    sensors: tuple[Sensor, ...]
    coils: tuple[Coil, ...]

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "coils", tuple(self.coils))
        if not self.sensors or not self.coils:
            raise GeometryError("need at least one sensor and one coil")
        for s in self.sensors:
            if self.grid.contains(s.position):
                raise GeometryError(f"sensor at {s.position.tolist()} lies inside the grid region")
        for c in self.coils:
            if self.grid.contains(c.center):
                raise GeometryError(f"coil at {c.center.tolist()} lies inside the grid region")

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def n_coils(self) -> int:
        return len(self.coils)


@dataclass(frozen=True)
class GeometryConfig:
    """Declarative layout: sensor layers above the region, coils on a U-shaped path.

    The defaults reproduce the reference 75x75 setup with 110 sensors and
    120 coils. ``coil_offset`` is the half-size of the U path, so coils sit
    at ``x = +-coil_offset`` and ``y = -coil_offset``.
    """

    half_width: float = 0.05
    n_per_side: int = 75
    sensor_heights: tuple[float, ...] = (0.06, 0.065)
    sensor_directions: tuple[tuple[float, float, float], ...] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    sensors_per_layer: int = 55
    sensor_half_span: float = 0.054
    n_coils: int = 120
    coil_offset: float = 0.06
    coil_normal: tuple[float, float, float] = (0.0, 1.0, 0.0)
    coil_radius: float = 0.5e-6
    coil_segments: int = 45
    coil_current: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "GeometryConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise GeometryError(f"unknown geometry keys: {sorted(unknown)}")
        for key in ("sensor_heights",):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        for key in ("sensor_directions",):
            if key in d:
                d[key] = tuple(tuple(float(x) for x in row) for row in d[key])
        if "coil_normal" in d:
            d["coil_normal"] = tuple(float(x) for x in d["coil_normal"])
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        """Stable hash of the configuration, used as the lead-field cache key."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_config(**overrides) -> GeometryConfig:
    """Small setup: 25x25 grid, 2x20 sensors, 60 coils."""
    base = dict(n_per_side=25, sensors_per_layer=20, n_coils=60)
    base.update(overrides)
    return GeometryConfig(**base)


def _u_path(offset: float, n: int) -> np.ndarray:
    """``n`` points equispaced (cell-centered in arclength) along the U path."""
    side = 2.0 * offset
    t = (np.arange(n) + 0.5) * (3.0 * side / n)
    pts = np.empty((n, 3))
    pts[:, 2] = 0.0
    left = t < side
    bottom = (t >= side) & (t < 2 * side)
    right = t >= 2 * side
    pts[left, 0] = -offset
    pts[left, 1] = offset - t[left]
    pts[bottom, 0] = -offset + (t[bottom] - side)
    pts[bottom, 1] = -offset
    pts[right, 0] = offset
    pts[right, 1] = -offset + (t[right] - 2 * side)
    return pts


def build_geometry(config: GeometryConfig | None = None) -> Geometry:
    cfg = config or GeometryConfig()
    positives = {
        "half_width": cfg.half_width,
        "sensors_per_layer": cfg.sensors_per_layer,
        "n_coils": cfg.n_coils,
        "coil_offset": cfg.coil_offset,
        "coil_radius": cfg.coil_radius,
        "coil_segments": cfg.coil_segments,
    }
    for name, val in positives.items():
        if not val > 0:
            raise GeometryError(f"{name} must be positive, got {val}")
    if len(cfg.sensor_heights) != len(cfg.sensor_directions):
        raise GeometryError("sensor_heights and sensor_directions must have equal length")
    if not cfg.sensor_heights:
        raise GeometryError("need at least one sensor layer")

    grid = GridSpec(cfg.half_width, cfg.n_per_side)
    if cfg.sensors_per_layer == 1:
        xs = np.zeros(1)
    else:
        xs = np.linspace(-cfg.sensor_half_span, cfg.sensor_half_span, cfg.sensors_per_layer)
    sensors = [
        Sensor(np.array([x, height, 0.0]), direction)
        for height, direction in zip(cfg.sensor_heights, cfg.sensor_directions)
        for x in xs
    ]
    coils = [
        Coil(c, cfg.coil_normal, cfg.coil_radius, cfg.coil_segments, cfg.coil_current)
        for c in _u_path(cfg.coil_offset, cfg.n_coils)
    ]
    return Geometry(grid, sensors, coils)


def coil_field(coil: Coil, points) -> np.ndarray:
    """Field H (A/m) of ``coil`` at one point (3,) or many points (P, 3).

    Sums the closed-form straight-segment Biot-Savart contribution

        H = I/(4 pi) * (|r1| + |r2|) / (|r1||r2|) * (r1 x r2) / (|r1||r2| + r1.r2)

    over all segments, with r1, r2 pointing from the segment start/end to the
    field point. ``r1 x r2`` is evaluated as ``r1 x (start - end)``, which is
    algebraically identical but avoids cancellation for micrometer coils.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    ends = coil.endpoints()
    start, stop = ends[:-1], ends[1:]
    r1 = pts[:, None, :] - start[None, :, :]
    r2 = pts[:, None, :] - stop[None, :, :]
    n1 = np.linalg.norm(r1, axis=-1)
    n2 = np.linalg.norm(r2, axis=-1)
    prod = n1 * n2
    denom = prod + np.einsum("psk,psk->ps", r1, r2)
    if np.any(np.abs(prod) < _TINY) or np.any(np.abs(denom) < _TINY):
        raise SingularityError("field point lies on a coil segment")
    cross = np.cross(r1, (start - stop)[None, :, :])
    coef = (n1 + n2) / prod / denom
    field_ = coil.current / (4.0 * np.pi) * np.einsum("ps,psk->pk", coef, cross)
    return field_[0] if single else field_


def loop_center_field(radius: float, current: float = 1.0) -> float:
    """Analytic field magnitude I/(2a) at the center of a circular loop."""
    return current / (2.0 * radius)


def dipole_kernel_entry(sensor: Sensor, voxel_center, h_at_voxel) -> float:
    """Sensor reading per unit concentration of a voxel magnetized along ``h_at_voxel``."""
    r = sensor.position - np.asarray(voxel_center, dtype=float)
    d = np.linalg.norm(r)
    if d < _TINY:
        raise SingularityError("sensor coincides with voxel center")
    h = np.asarray(h_at_voxel, dtype=float)
    nu = sensor.direction
    return MU0 / (4 * np.pi) * (3.0 * (nu @ r) * (r @ h) / d ** 5 - (nu @ h) / d ** 3)


def _kernel_block(sensor_pos, sensor_dir, voxels, h) -> np.ndarray:
    """Vectorized kernel: (N_s, N_v) block for one field H sampled at the voxels."""
    r = sensor_pos[:, None, :] - voxels[None, :, :]
    d = np.linalg.norm(r, axis=-1)
    if np.any(d < _TINY):
        raise SingularityError("sensor coincides with voxel center")
    nu_r = np.einsum("sk,svk->sv", sensor_dir, r)
    r_h = np.einsum("svk,vk->sv", r, h)
    nu_h = sensor_dir @ h.T
    return MU0 / (4 * np.pi) * (3.0 * nu_r * r_h / d ** 5 - nu_h / d ** 3)


def spectral_norm(mat: np.ndarray, rtol: float = 1e-10, max_iter: int = 20000) -> float:
    """Largest singular value by power iteration on ``mat.T @ mat``."""
    mat = np.asarray(mat, dtype=float)
    if not np.any(mat):
        return 0.0
    x = np.ones(mat.shape[1]) / np.sqrt(mat.shape[1])
    # a ones start can be orthogonal to the top singular vector; fall back to a fixed pseudo-random start
    if np.linalg.norm(mat @ x) < 1e-8 * np.abs(mat).max():
        x = np.random.default_rng(0).standard_normal(mat.shape[1])
        x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = mat.T @ (mat @ x)
        lam_new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(lam_new - lam) <= rtol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    # one Rayleigh quotient on the converged vector
    return float(np.linalg.norm(mat @ x))


@dataclass(frozen=True, eq=False)
class LeadField:
    """Stacked lead field, coil-major, normalized to unit spectral norm.

    ``matrix`` holds the normalized operator; the physical operator is
    ``scale * matrix``. Rows ``[c*N_s, (c+1)*N_s)`` belong to coil ``c``.
    """

    matrix: np.ndarray
    scale: float
    n_coils: int
    n_sensors: int
    grid: GridSpec | None = None

    def __post_init__(self):
        if self.matrix.shape[0] != self.n_coils * self.n_sensors:
            raise ValueError("row count does not match n_coils * n_sensors")

    @property
    def n_voxels(self) -> int:
        return self.matrix.shape[1]

    def block(self, c: int) -> np.ndarray:
        return self.matrix[c * self.n_sensors:(c + 1) * self.n_sensors]

    def __matmul__(self, other):
        return self.matrix @ other


def raw_lead_field(geometry: Geometry) -> np.ndarray:
    """Un-normalized (N_c * N_s, N_v) lead field."""
    voxels = geometry.grid.centers()
    pos = np.array([s.position for s in geometry.sensors])
    dirs = np.array([s.direction for s in geometry.sensors])
    n_s, n_v = len(pos), len(voxels)
    out = np.empty((geometry.n_coils * n_s, n_v))
    for c, coil in enumerate(geometry.coils):
        h = coil_field(coil, voxels)
        out[c * n_s:(c + 1) * n_s] = _kernel_block(pos, dirs, voxels, h)
    return out


def assemble_lead_field(geometry: Geometry) -> LeadField:
    raw = raw_lead_field(geometry)
    scale = spectral_norm(raw)
    if not scale > 0:
        raise SingularityError("lead field is identically zero")
    return LeadField(raw / scale, scale, geometry.n_coils, geometry.n_sensors, geometry.grid)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Stacked sensor data, either full (coil-major) or compressed (pattern-major)."""

    values: np.ndarray
    n_sensors: int
    layout: str = "full"
    noise_snr_db: float = float("inf")
    seed: int | None = None
    activation: object = None

    def __post_init__(self):
        if self.layout not in ("full", "compressed"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.values.ndim != 1 or self.values.size % self.n_sensors:
            raise ValueError("measurement length is not a multiple of n_sensors")
        if self.layout == "compressed":
            if self.activation is None:
                raise ValueError("compressed data must reference its activation matrix")
            if self.values.size != self.activation.m * self.n_sensors:
                raise ValueError("compressed length does not match m * n_sensors")

    @property
    def n_blocks(self) -> int:
        return self.values.size // self.n_sensors


def add_noise(clean: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add i.i.d. Gaussian noise rescaled so that the realized SNR equals ``snr_db`` exactly.

    Variates come from numpy's PCG64 generator (``standard_normal``), seeded with ``seed``.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return clean.copy()
    if not snr_db > 0:
        raise ValueError("snr_db must be positive or +inf")
    signal = np.linalg.norm(clean)
    if signal == 0.0:
        raise ValueError("SNR is undefined for an all-zero clean signal")
    xi = np.random.Generator(np.random.PCG64(seed)).standard_normal(clean.size)
    xi *= signal * 10.0 ** (-snr_db / 20.0) / np.linalg.norm(xi)
    return clean + xi


def simulate_data(lead_field: LeadField, n, snr_db: float = 80.0, seed: int = 0) -> MeasurementSet:
    values = getattr(n, "values", n)
    values = np.asarray(values, dtype=float)
    if values.shape != (lead_field.n_voxels,):
        raise ValueError("concentration vector does not match the lead-field grid")
    clean = lead_field.matrix @ values
    return MeasurementSet(add_noise(clean, snr_db, seed), lead_field.n_sensors, "full", snr_db, seed)
