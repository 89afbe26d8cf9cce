"""Complex-geometric-optics (CGO) test solutions of the homogeneous Maxwell
system and the product expansion used to isolate Fourier modes of the source
strength.

A CGO solution has the form U = e^{i zeta . x}(eta + f zeta + V) with complex
zeta satisfying the bilinear constraint zeta . zeta = k^2, so that
U0 = eta e^{i zeta . x} solves curl curl U0 = k^2 U0 exactly. In an
inhomogeneous medium the correction W = f zeta + V is solved from the
conjugated equation e^{-i zeta x}(curl curl - k^2)(e^{i zeta x} W)
= -k^2 m (eta + W), whose constant-coefficient part inverts in closed form
in Fourier space:

    A(q)^{-1} = (I - q q^T / k^2) / (s^2 + 2 s . zeta),   q = s + zeta,

the scalar denominator being the Faddeev symbol. Unlike the outgoing kernel,
this inverse decays like 1/|Im zeta|, which is what gives the remainder
estimate its 1/t behaviour. Phase constraints (zeta . zeta = k^2) use the
bilinear dot product throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .geometry import (
    ConfigurationError,
    Grid3,
    MediumSpec,
    ScalarFieldC,
    VectorFieldC3,
    evaluate_on_grid,
    trilinear_interpolate,
)
from .forward import SolverError, curl_grid

__all__ = [
    "CgoParams",
    "CgoSolution",
    "StabilityConstants",
    "build_frame",
    "build_zeta_eta",
    "solve_cgo_remainder",
    "cgo_product_remainder",
    "cgo_on_sphere",
]

# e^{|Im zeta| R'} appears squared in products; cap the exponent well below
# double-precision overflow (log of max double is about 709)
OVERFLOW_GUARD = 60.0


def build_frame(xi) -> np.ndarray:
    """Right-handed orthonormal frame (xi_hat, d1, d2) adapted to xi.

    d1 is the normalized cross product of xi_hat with the coordinate axis
    least aligned with it (smallest absolute component; ties break to the
    smallest index), and d2 = xi_hat x d1. The convention xi = 0 maps to the
    frame (e3, e1, e2).
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (3,):
        raise ValueError("xi must be a 3-vector")
    norm = np.linalg.norm(xi)
    if norm == 0.0:
        return np.array(
            [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
        )
    xh = xi / norm
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(xh)))] = 1.0
    d1 = np.cross(xh, axis)
    d1 /= np.linalg.norm(d1)
    d2 = np.cross(xh, d1)
    return np.array([xh, d1, d2])


@dataclass(frozen=True)
class CgoParams:
    """One conjugate pair of CGO phase/polarization vectors for (xi, t, k).

    In the adapted frame (xi_hat, d1, d2):

        zeta_1 = (-|xi|/2,  i b,  t),    eta_1 = (1, 0,  |xi|/2t)
        zeta_2 = (-|xi|/2, -i b, -t),    eta_2 = (1, 0, -|xi|/2t)

    with b = sqrt(t^2 - k^2 + |xi|^2/4), so that zeta_j . zeta_j = k^2,
    zeta_j . eta_j = 0 and zeta_1 + zeta_2 = -xi.
    """

    k: float
    xi: tuple
    t: float
    zeta1: np.ndarray = field(repr=False)
    zeta2: np.ndarray = field(repr=False)
    eta1: np.ndarray = field(repr=False)
    eta2: np.ndarray = field(repr=False)

    @property
    def leading(self) -> float:
        """eta_1 . eta_2 = 1 - |xi|^2 / 4t^2, the leading product coefficient."""
        xi_norm = float(np.linalg.norm(self.xi))
        return 1.0 - xi_norm ** 2 / (4.0 * self.t ** 2)

    def zeta(self, which: int) -> np.ndarray:
        return self.zeta1 if which == 1 else self.zeta2

    def eta(self, which: int) -> np.ndarray:
        return self.eta1 if which == 1 else self.eta2


def build_zeta_eta(
    xi, t: float, k: float, box_radius: float | None = None, azimuth: float = 0.0
) -> CgoParams:
    """Construct the conjugate CGO pair for frequency xi and growth parameter t.

    Requires t^2 >= k^2 - |xi|^2/4 (real b) and t > 0. When box_radius is
    given, enforces the overflow guard t*r + |xi|*r <= 60. `azimuth` rotates
    the transverse frame (d1, d2) about xi_hat; every azimuth yields an
    admissible pair with the same product coefficient, which is what makes
    frame averaging an unbiased variance reducer for the correlation
    estimator. Rotating by pi swaps the two members, so distinct frames live
    in [0, pi).
    """
    xi = np.asarray(xi, dtype=np.float64)
    t = float(t)
    xi_norm = float(np.linalg.norm(xi))
    if t <= 0:
        raise ConfigurationError("CGO parameter t must be positive")
    b2 = t * t - k * k + xi_norm ** 2 / 4.0
    if b2 < 0:
        raise ConfigurationError(
            f"t={t} too small for k={k}, |xi|={xi_norm}: need t^2 >= k^2 - |xi|^2/4"
        )
    if box_radius is not None and (t + xi_norm) * box_radius > OVERFLOW_GUARD:
        raise ConfigurationError(
            f"(t + |xi|) * r = {(t + xi_norm) * box_radius:.1f} exceeds the "
            f"overflow guard {OVERFLOW_GUARD}; reduce t or the box radius"
        )
    b = np.sqrt(b2)
    xh, d1, d2 = build_frame(xi)
    if azimuth != 0.0:
        ca, sa = np.cos(azimuth), np.sin(azimuth)
        d1, d2 = ca * d1 + sa * d2, -sa * d1 + ca * d2
    zeta1 = -0.5 * xi_norm * xh + 1j * b * d1 + t * d2
    zeta2 = -0.5 * xi_norm * xh - 1j * b * d1 - t * d2
    eta1 = xh + (xi_norm / (2.0 * t)) * d2
    eta2 = xh - (xi_norm / (2.0 * t)) * d2
    return CgoParams(
        k=float(k),
        xi=tuple(float(v) for v in xi),
        t=t,
        zeta1=zeta1.astype(np.complex128),
        zeta2=zeta2.astype(np.complex128),
        eta1=eta1.astype(np.complex128),
        eta2=eta2.astype(np.complex128),
    )


@dataclass(frozen=True)
class StabilityConstants:
    """Frozen constants of the stability theory (calibrated, not derived)."""

    M1: float = 1.0
    M2: float = 0.5
    s: float = 1.0
    Q: float = 10.0

    def __post_init__(self):
        if min(self.M1, self.M2, self.s, self.Q) <= 0:
            raise ConfigurationError("stability constants must be positive")


@dataclass(frozen=True)
class CgoSolution:
    """A certified CGO solution U = e^{i zeta x}(eta + f zeta + V) on a grid."""

    params: CgoParams
    which: int  # 1 or 2 of the conjugate pair
    grid: Grid3
    f: ScalarFieldC
    V: VectorFieldC3
    residual: float

    @property
    def zeta(self) -> np.ndarray:
        return self.params.zeta(self.which)

    @property
    def eta(self) -> np.ndarray:
        return self.params.eta(self.which)

    def amplitude(self) -> np.ndarray:
        """eta + f zeta + V sampled on the grid, shape (3, nx, ny, nz)."""
        amp = self.eta[:, None, None, None] + self.f.values[None] * self.zeta[
            :, None, None, None
        ]
        return amp + self.V.values

    def phase_on(self, points: np.ndarray) -> np.ndarray:
        """e^{i zeta . x} at points of shape (N, 3)."""
        return np.exp(1j * points @ self.zeta)

    def field_values(self) -> np.ndarray:
        phase = np.exp(1j * np.tensordot(self.zeta, self.grid.nodes(), axes=1))
        return phase[None] * self.amplitude()

    def remainder_norm(self, radius: float) -> float:
        """||f||_L2 + ||V||_L2 over the ball of the given radius."""
        return self.f.l2_norm(within_radius=radius) + self.V.l2_norm(
            within_radius=radius
        )


class ConjugatedResolvent:
    """Fourier-multiplier inverse of e^{-i zeta x}(curl curl - k^2) e^{i zeta x}.

    Bins within one spectral cell of the characteristic set s^2 + 2 s.zeta = 0
    carry the cell average of the reciprocal symbol (the set has codimension
    two, so the average is finite); this tames the otherwise arbitrarily large
    near-resonant multipliers of the coarse s-lattice.
    """

    _SUBSAMPLE = 12

    def __init__(self, zeta: np.ndarray, k: float, grid: Grid3):
        self.zeta = np.asarray(zeta, dtype=np.complex128)
        self.k = float(k)
        self.grid = grid
        n = grid.dims
        self.padded = tuple(2 * v for v in n)
        h = grid.spacing
        kv = [2.0 * np.pi * sfft.fftfreq(p, d=h) for p in self.padded]
        sx = kv[0][:, None, None]
        sy = kv[1][None, :, None]
        sz = kv[2][None, None, :]
        z = self.zeta
        denom = sx ** 2 + sy ** 2 + sz ** 2 + 2.0 * (sx * z[0] + sy * z[1] + sz * z[2])
        ds = kv[0][1] - kv[0][0]
        grad_scale = 4.0 * (abs(z).max() + k)
        near = np.abs(denom) < grad_scale * ds
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(near, 0.0, 1.0 / np.where(near, 1.0, denom))
        q1 = ((np.arange(self._SUBSAMPLE) + 0.5) / self._SUBSAMPLE - 0.5) * ds
        OX, OY, OZ = (a.ravel() for a in np.meshgrid(q1, q1, q1, indexing="ij"))
        for (i, j, l) in np.argwhere(near):
            s0x, s0y, s0z = kv[0][i] + OX, kv[1][j] + OY, kv[2][l] + OZ
            dn = (
                s0x ** 2
                + s0y ** 2
                + s0z ** 2
                + 2.0 * (s0x * z[0] + s0y * z[1] + s0z * z[2])
            )
            inv[i, j, l] = np.mean(1.0 / dn)
        self._inv = inv
        self._q = (sx + z[0], sy + z[1], sz + z[2])

    def apply(self, f: np.ndarray) -> np.ndarray:
        """A^{-1} f for amplitude-level values of shape (3, nx, ny, nz)."""
        n = self.grid.dims
        fh = []
        for c in range(3):
            pad = np.zeros(self.padded, dtype=np.complex128)
            pad[: n[0], : n[1], : n[2]] = f[c]
            fh.append(sfft.fftn(pad, workers=-1))
        qdot = self._q[0] * fh[0] + self._q[1] * fh[1] + self._q[2] * fh[2]
        out = np.empty((3,) + n, dtype=np.complex128)
        for c in range(3):
            tot = (fh[c] - self._q[c] * qdot / self.k ** 2) * self._inv
            out[c] = sfft.ifftn(tot, workers=-1)[: n[0], : n[1], : n[2]]
        return out


def solve_cgo_remainder(
    params: CgoParams,
    which: int,
    medium: MediumSpec,
    grid: Grid3,
    tol: float = 1e-10,
    max_iter: int = 60,
) -> CgoSolution:
    """Solve the CGO correction for one member of the conjugate pair.

    With U0 = eta e^{i zeta x} exact for m = 0, the amplitude correction W
    solves the conjugated fixed point W = A^{-1}(-k^2 m (eta + W)) by Neumann
    iteration. The split uses the pointwise minimal-norm (Hermitian)
    projection f = W . conj(zeta)/|zeta|^2, V = W - f zeta, which keeps both
    parts within the remainder estimate; the bilinear projection does not,
    because the non-decaying part of W is parallel to zeta and |zeta| grows
    with t.

    For m = 0 the residual is algebraically zero (curl curl of the plane
    phase reproduces k^2 U0 exactly since zeta.zeta = k^2 and zeta.eta = 0);
    otherwise the reported residual is the converged fixed-point residual of
    the conjugated equation, which is the consistency measure the
    reconstruction relies on.
    """
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    # re-check the guard against the actual grid
    box_radius = float(np.sqrt(3.0) * max(abs(ax[0]) for ax in grid.axes()))
    build_zeta_eta(np.asarray(params.xi), params.t, params.k, box_radius)

    zeta = params.zeta(which)
    eta = params.eta(which)
    k = params.k
    m_grid = evaluate_on_grid(medium, grid).values.real

    if not np.any(m_grid):
        zero = np.zeros(grid.dims, dtype=np.complex128)
        return CgoSolution(
            params=params,
            which=which,
            grid=grid,
            f=ScalarFieldC(grid, zero),
            V=VectorFieldC3(grid, np.zeros((3,) + grid.dims, dtype=np.complex128)),
            residual=0.0,
        )

    resolvent = ConjugatedResolvent(zeta, k, grid)
    src = -(k ** 2) * m_grid[None] * np.broadcast_to(
        eta[:, None, None, None], (3,) + grid.dims
    )
    b = resolvent.apply(src)
    bnorm = np.linalg.norm(b)
    W = b.copy()
    history = []
    res = np.inf
    for _ in range(max_iter):
        AW = W + resolvent.apply(k ** 2 * m_grid[None] * W)
        res = np.linalg.norm(AW - b) / bnorm
        history.append(res)
        if res <= tol:
            break
        if len(history) > 1 and res > 0.9 * history[-2]:
            raise SolverError(
                f"CGO remainder iteration stagnated at residual {res:.3e}; "
                "the medium contrast is too strong for this t",
                history,
            )
        W = b - (AW - W)
    if res > tol:
        raise SolverError(
            f"CGO remainder did not converge below {tol:.1e} "
            f"(reached {res:.3e})",
            history,
        )

    zh = np.conj(zeta) / np.sum(np.abs(zeta) ** 2)
    f_vals = np.tensordot(zh, W, axes=1)
    V_vals = W - f_vals[None] * zeta[:, None, None, None]
    return CgoSolution(
        params=params,
        which=which,
        grid=grid,
        f=ScalarFieldC(grid, f_vals),
        V=VectorFieldC3(grid, V_vals),
        residual=float(res),
    )


def cgo_product_remainder(sol1: CgoSolution, sol2: CgoSolution):
    """Leading coefficient and remainder r of U1 . U2 = e^{-i xi x}(leading + r).

    Expanding the bilinear product of the two amplitudes,

        r = f2 (eta1.zeta2) + f1 (eta2.zeta1) + eta1.V2 + eta2.V1
            + f1 f2 (zeta1.zeta2) + f1 (zeta1.V2) + f2 (zeta2.V1) + V1.V2,

    collecting every cross term of (eta, f zeta, V). Both solutions must
    share the grid and the (xi, t) pair.
    """
    p = sol1.params
    if sol2.params is not p and (
        sol2.params.xi != p.xi or sol2.params.t != p.t or sol2.params.k != p.k
    ):
        raise ValueError("solutions do not share (xi, t, k)")
    if {sol1.which, sol2.which} != {1, 2}:
        raise ValueError("need one solution of each member of the conjugate pair")
    if sol1.grid != sol2.grid:
        raise ValueError("solutions do not share a grid")
    s1, s2 = (sol1, sol2) if sol1.which == 1 else (sol2, sol1)
    z1, z2 = p.zeta1, p.zeta2
    e1, e2 = p.eta1, p.eta2
    f1, f2 = s1.f.values, s2.f.values
    V1, V2 = s1.V.values, s2.V.values

    def dot_vec(c, F):
        return np.tensordot(c, F, axes=1)

    r = (
        f2 * (e1 @ z2)
        + f1 * (e2 @ z1)
        + dot_vec(e1, V2)
        + dot_vec(e2, V1)
        + f1 * f2 * (z1 @ z2)
        + f1 * dot_vec(z1, V2)
        + f2 * dot_vec(z2, V1)
        + np.sum(V1 * V2, axis=0)
    )
    return p.leading, ScalarFieldC(s1.grid, r)


def cgo_on_sphere(sol: CgoSolution, mesh) -> tuple[np.ndarray, np.ndarray]:
    """(U, curl U) of a CGO solution sampled at the mesh nodes.

    The plane-phase part is analytic: curl(eta e^{i zeta x}) =
    i zeta x eta e^{i zeta x}. The correction W (inhomogeneous media only) is
    interpolated trilinearly and its curl taken by grid stencils first.
    """
    pts = mesh.nodes
    phase = sol.phase_on(pts)
    zeta, eta = sol.zeta, sol.eta
    U = phase[:, None] * eta[None, :]
    curlU = phase[:, None] * np.cross(1j * zeta, eta)[None, :]
    if np.any(sol.f.values) or np.any(sol.V.values):
        W = sol.f.values[None] * zeta[:, None, None, None] + sol.V.values
        phase_grid = np.exp(1j * np.tensordot(zeta, sol.grid.nodes(), axes=1))
        W = W * phase_grid[None]
        curlW = curl_grid(W, sol.grid.spacing)
        U = U + trilinear_interpolate(W, sol.grid, pts).T
        curlU = curlU + trilinear_interpolate(curlW, sol.grid, pts).T
    return U, curlU
