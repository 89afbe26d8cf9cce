"""Grids, complex fields, bump-parameterized media/sources, and sphere quadrature.

Everything here is immutable after construction and safe to share between
parallel workers.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

__all__ = [
    "Grid3",
    "ScalarFieldC",
    "VectorFieldC3",
    "Bump",
    "MediumSpec",
    "SourceStrength",
    "SphereMesh",
    "evaluate_on_grid",
    "integrate_sphere",
    "trilinear_interpolate",
    "write_field",
    "read_field",
    "ConfigurationError",
]


class ConfigurationError(ValueError):
    """Invalid geometry / medium / source configuration."""


@dataclass(frozen=True)
class Grid3:
    """Uniform cubic-cell grid with nodes at origin + index*spacing."""

    origin: tuple[float, float, float]
    spacing: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if self.spacing <= 0:
            raise ConfigurationError("grid spacing must be positive")
        if any(n <= 0 for n in self.dims):
            raise ConfigurationError("grid dims must be positive")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))

    @classmethod
    def cube(cls, half_width: float, n: int) -> "Grid3":
        """Cube of side 2*half_width centered at the origin, n nodes per axis."""
        h = 2.0 * half_width / (n - 1)
        return cls(origin=(-half_width,) * 3, spacing=h, dims=(n, n, n))

    @classmethod
    def for_ball(cls, radius: float, n: int = 32) -> "Grid3":
        """Default box: side 2*radius + 4h, so the closed ball sits strictly inside."""
        # side = 2*radius + 4h with h = side/(n-1)  =>  side = 2*radius*(n-1)/(n-5)
        if n < 8:
            raise ConfigurationError("need at least 8 nodes per axis")
        side = 2.0 * radius * (n - 1) / (n - 5)
        return cls.cube(side / 2.0, n)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def half_widths(self) -> np.ndarray:
        return np.asarray(
            [self.origin[i] + (self.dims[i] - 1) * self.spacing for i in range(3)]
        )

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            self.origin[i] + self.spacing * np.arange(self.dims[i]) for i in range(3)
        )

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (3, nx, ny, nz)."""
        ax = self.axes()
        return np.stack(np.meshgrid(*ax, indexing="ij"))

    def radii(self) -> np.ndarray:
        x, y, z = np.meshgrid(*self.axes(), indexing="ij")
        return np.sqrt(x * x + y * y + z * z)

    def contains_ball(self, radius: float) -> bool:
        lo = np.asarray(self.origin)
        hi = lo + (np.asarray(self.dims) - 1) * self.spacing
        return bool(np.all(lo < -radius) and np.all(hi > radius))


@dataclass(frozen=True)
class ScalarFieldC:
    """Complex scalar field sampled on a Grid3, values shape (nx, ny, nz)."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.complex128)
        if v.shape != self.grid.dims:
            raise ValueError(f"value shape {v.shape} != grid dims {self.grid.dims}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def l2_norm(self, within_radius: float | None = None) -> float:
        w = np.abs(self.values) ** 2
        if within_radius is not None:
            w = w * (self.grid.radii() <= within_radius)
        return float(np.sqrt(w.sum() * self.grid.cell_volume))


@dataclass(frozen=True)
class VectorFieldC3:
    """Complex 3-vector field on a Grid3, values shape (3, nx, ny, nz)."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.complex128)
        if v.shape != (3,) + self.grid.dims:
            raise ValueError(f"value shape {v.shape} != (3,)+{self.grid.dims}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def l2_norm(self, within_radius: float | None = None) -> float:
        w = (np.abs(self.values) ** 2).sum(axis=0)
        if within_radius is not None:
            w = w * (self.grid.radii() <= within_radius)
        return float(np.sqrt(w.sum() * self.grid.cell_volume))


@dataclass(frozen=True)
class Bump:
    """C-infinity bump a*exp(1 - 1/(1 - |x-c|^2/r^2)) for |x-c| < r, zero outside."""

    center: tuple[float, float, float]
    radius: float
    amplitude: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("bump radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    def __call__(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        c = self.center
        u2 = np.asarray(
            ((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / self.radius ** 2
        )
        out = np.zeros(u2.shape, dtype=np.float64)
        inside = u2 < 1.0
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - u2[inside]))
        return out

    def integral(self) -> float:
        """Closed-form-free but exact-to-quadrature integral of the bump.

        The radial profile has no elementary antiderivative; a fixed high-order
        Gauss rule on [0, 1) is exact to machine precision for this analytic
        integrand and serves as the reference value for grid-sum checks.
        """
        u, w = leggauss(200)
        u = 0.5 * (u + 1.0)
        w = 0.5 * w
        prof = np.exp(1.0 - 1.0 / (1.0 - u ** 2))
        val = np.sum(w * prof * u ** 2)
        return 4.0 * np.pi * self.amplitude * self.radius ** 3 * val


def _check_bumps_in_ball(bumps, ball_radius):
    for b in bumps:
        if np.linalg.norm(b.center) + b.radius > ball_radius + 1e-12:
            raise ConfigurationError(
                f"bump at {b.center} with radius {b.radius} exceeds ball radius {ball_radius}"
            )


@dataclass(frozen=True)
class MediumSpec:
    """Contrast m(x) = sum of bumps, refractive index n(x) = 1 - m(x).

    All bumps must sit inside the ball of radius `ball_radius`, and n must stay
    positive, i.e. the total contrast must be < 1 everywhere.
    """

    bumps: tuple[Bump, ...] = ()
    ball_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        _check_bumps_in_ball(self.bumps, self.ball_radius)
        if sum(max(b.amplitude, 0.0) for b in self.bumps) >= 1.0:
            raise ConfigurationError("medium contrast must satisfy n = 1 - m > 0")

    @property
    def is_homogeneous(self) -> bool:
        return all(b.amplitude == 0.0 for b in self.bumps) or not self.bumps

    def contrast(self, x, y, z) -> np.ndarray:
        out = np.zeros(np.broadcast(x, y, z).shape, dtype=np.float64)
        for b in self.bumps:
            out += b(x, y, z)
        return out

    def refractive_index(self, x, y, z) -> np.ndarray:
        return 1.0 - self.contrast(x, y, z)


@dataclass(frozen=True)
class SourceStrength:
    """Nonnegative variance density of the random current, a sum of bumps."""

    bumps: tuple[Bump, ...] = ()
    ball_radius: float = 1.0
    nonnegative: bool = True

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        _check_bumps_in_ball(self.bumps, self.ball_radius)
        if self.nonnegative and any(b.amplitude < 0 for b in self.bumps):
            raise ConfigurationError("source strength bumps must have amplitude >= 0")

    def __call__(self, x, y, z) -> np.ndarray:
        out = np.zeros(np.broadcast(x, y, z).shape, dtype=np.float64)
        for b in self.bumps:
            out += b(x, y, z)
        return out

    def integral(self) -> float:
        return sum(b.integral() for b in self.bumps)


def evaluate_on_grid(spec, grid: Grid3) -> ScalarFieldC:
    """Sample a MediumSpec contrast or a SourceStrength on grid nodes.

    The result is exactly real (zero imaginary part) and deterministic.
    """
    x, y, z = np.meshgrid(*grid.axes(), indexing="ij")
    if isinstance(spec, MediumSpec):
        vals = spec.contrast(x, y, z)
        n = 1.0 - vals
        if np.any(n <= 0):
            raise ConfigurationError("refractive index n = 1 - m must be positive")
    elif isinstance(spec, SourceStrength):
        vals = spec(x, y, z)
    else:
        raise TypeError(f"cannot evaluate {type(spec).__name__} on a grid")
    return ScalarFieldC(grid, vals.astype(np.complex128))


class SphereMesh:
    """Quadrature mesh on the sphere of given radius.

    Gauss-Legendre nodes in the polar angle crossed with a uniform azimuthal
    rule. Exact for all spherical harmonics through degree 2*lmax, which is
    what products of two degree-lmax harmonics require.
    """

    def __init__(self, radius: float, lmax: int):
        if radius <= 0:
            raise ConfigurationError("sphere radius must be positive")
        if lmax < 1:
            raise ConfigurationError("lmax must be at least 1")
        self.radius = float(radius)
        self.lmax = int(lmax)
        self.n_theta = lmax + 1
        self.n_phi = 2 * lmax + 2

        ct, wt = leggauss(self.n_theta)
        theta = np.arccos(ct[::-1])          # increasing theta from the north pole
        wt = wt[::-1]
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        wp = 2.0 * np.pi / self.n_phi

        T, P = np.meshgrid(theta, phi, indexing="ij")
        self.theta = T.ravel()
        self.phi = P.ravel()
        self.weights = (wt[:, None] * np.full(self.n_phi, wp)).ravel() * radius ** 2

        st, ctn = np.sin(self.theta), np.cos(self.theta)
        sp, cp = np.sin(self.phi), np.cos(self.phi)
        self.normals = np.stack([st * cp, st * sp, ctn], axis=1)
        self.nodes = radius * self.normals
        # spherical unit vectors at each node, Cartesian components
        self.theta_hat = np.stack([ctn * cp, ctn * sp, -st], axis=1)
        self.phi_hat = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)

    @property
    def n_nodes(self) -> int:
        return self.theta.size

    def __eq__(self, other):
        return (
            isinstance(other, SphereMesh)
            and other.radius == self.radius
            and other.lmax == self.lmax
        )

    def __hash__(self):
        return hash((self.radius, self.lmax))


def integrate_sphere(values: np.ndarray, mesh: SphereMesh):
    """Quadrature sum over the sphere: scalar samples (N,) give a complex number,
    vector samples (N, k) give one complex number per column."""
    v = np.asarray(values)
    if v.shape[0] != mesh.n_nodes:
        raise ValueError(f"got {v.shape[0]} samples for a {mesh.n_nodes}-node mesh")
    if v.ndim == 1:
        return complex(np.sum(mesh.weights * v))
    return np.tensordot(mesh.weights, v, axes=(0, 0))


def trilinear_interpolate(values: np.ndarray, grid: Grid3, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of grid samples at arbitrary points.

    values: (..., nx, ny, nz); points: (N, 3). Returns (..., N).
    Points must lie inside the grid box.
    """
    pts = np.asarray(points, dtype=np.float64)
    u = (pts - np.asarray(grid.origin)) / grid.spacing
    if np.any(u < -1e-9) or np.any(u > np.asarray(grid.dims) - 1 + 1e-9):
        raise ValueError("interpolation point outside grid box")
    i0 = np.clip(np.floor(u).astype(np.int64), 0, np.asarray(grid.dims) - 2)
    f = u - i0
    out = np.zeros(values.shape[:-3] + (pts.shape[0],), dtype=values.dtype)
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                w = wx * wy * wz
                out += w * values[..., i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


_FIELD_MAGIC = b"EMFLD001"


def write_field(path, fld) -> None:
    """Little-endian binary field dump.

    Layout: 8-byte magic, then 8 float64 values (nx, ny, nz, ncomp, ox, oy, oz,
    h), then the samples as interleaved re/im float64, component-major with C
    node ordering.
    """
    if isinstance(fld, ScalarFieldC):
        data = fld.values[None]
    elif isinstance(fld, VectorFieldC3):
        data = fld.values
    else:
        raise TypeError("expected ScalarFieldC or VectorFieldC3")
    g = fld.grid
    header = np.asarray(
        [*g.dims, data.shape[0], *g.origin, g.spacing], dtype="<f8"
    )
    inter = np.empty(data.shape + (2,), dtype="<f8")
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(header.tobytes())
        fh.write(inter.tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _FIELD_MAGIC:
            raise ValueError(f"bad field magic {magic!r}")
        header = np.frombuffer(fh.read(8 * 8), dtype="<f8")
        dims = tuple(int(v) for v in header[:3])
        ncomp = int(header[3])
        grid = Grid3(origin=tuple(header[4:7]), spacing=float(header[7]), dims=dims)
        raw = np.frombuffer(fh.read(), dtype="<f8").reshape((ncomp,) + dims + (2,))
    data = raw[..., 0] + 1j * raw[..., 1]
    if ncomp == 1:
        return ScalarFieldC(grid, data[0])
    if ncomp == 3:
        return VectorFieldC3(grid, data)
    raise ValueError(f"unsupported component count {ncomp}")
