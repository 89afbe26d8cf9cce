import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochmaxwell.cgo import (
    StabilityConstants,
    build_frame,
    build_zeta_eta,
    cgo_on_sphere,
    cgo_product_remainder,
    solve_cgo_remainder,
)
from stochmaxwell.forward import SolverError, curl_grid
from stochmaxwell.geometry import (
    Bump,
    ConfigurationError,
    Grid3,
    MediumSpec,
    SphereMesh,
)

from conftest import rel_err

K = 2.0


class TestFrame:
    @given(
        st.tuples(
            st.floats(-5, 5, allow_nan=False),
            st.floats(-5, 5, allow_nan=False),
            st.floats(-5, 5, allow_nan=False),
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_orthonormal_right_handed(self, xi):
        frame = build_frame(np.array(xi))
        assert np.allclose(frame @ frame.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(frame) == pytest.approx(1.0, abs=1e-9)

    def test_first_axis_aligned_with_xi(self):
        xi = np.array([0.3, -1.2, 0.4])
        frame = build_frame(xi)
        assert np.allclose(frame[0], xi / np.linalg.norm(xi))

    def test_zero_maps_to_standard_frame(self):
        assert np.allclose(build_frame(np.zeros(3))[0], [0, 0, 1])

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            build_frame(np.zeros(4))


class TestZetaEta:
    def check_identities(self, p, xi):
        assert p.zeta1 @ p.zeta1 == pytest.approx(K ** 2, abs=1e-10)
        assert p.zeta2 @ p.zeta2 == pytest.approx(K ** 2, abs=1e-10)
        assert abs(p.zeta1 @ p.eta1) < 1e-12
        assert abs(p.zeta2 @ p.eta2) < 1e-12
        assert np.allclose(p.zeta1 + p.zeta2, -np.asarray(xi), atol=1e-12)
        want = 1.0 - np.dot(xi, xi) / (4 * p.t ** 2)
        assert p.leading == pytest.approx(want, abs=1e-12)

    def test_reference_pair(self):
        xi = np.array([1.0, -0.5, 0.25])
        self.check_identities(build_zeta_eta(xi, 5.0, K), xi)

    @given(
        az=st.floats(0.0, np.pi, exclude_max=True),
        t=st.floats(2.5, 8.0),
    )
    @settings(max_examples=30, deadline=None)
    def test_every_azimuth_admissible(self, az, t):
        xi = np.array([0.7, 0.2, -1.1])
        self.check_identities(build_zeta_eta(xi, t, K, azimuth=az), xi)

    def test_azimuth_pi_swaps_the_pair(self):
        xi = np.array([0.5, 1.0, 0.0])
        a = build_zeta_eta(xi, 4.0, K)
        b = build_zeta_eta(xi, 4.0, K, azimuth=np.pi)
        assert np.allclose(b.zeta1, a.zeta2, atol=1e-12)
        assert np.allclose(b.eta1, a.eta2, atol=1e-12)

    def test_small_t_rejected(self):
        with pytest.raises(ConfigurationError):
            build_zeta_eta(np.zeros(3), 1.5, K)  # t^2 < k^2 - |xi|^2/4

    def test_nonpositive_t_rejected(self):
        with pytest.raises(ConfigurationError):
            build_zeta_eta(np.ones(3), 0.0, K)

    def test_overflow_guard(self):
        with pytest.raises(ConfigurationError):
            build_zeta_eta(np.zeros(3), 50.0, K, box_radius=2.0)


class TestStabilityConstants:
    def test_defaults_valid(self):
        c = StabilityConstants()
        assert c.M1 == 1.0 and c.Q == 10.0

    def test_nonpositive_rejected(self):
        with pytest.raises(ConfigurationError):
            StabilityConstants(M2=0.0)


@pytest.fixture(scope="module")
def grid():
    return Grid3.for_ball(1.3, 33)


@pytest.fixture(scope="module")
def contrast_medium():
    return MediumSpec((Bump((0.1, 0.0, -0.1), 0.6, 0.05),), ball_radius=1.0)


class TestHomogeneousSolution:
    def test_zero_remainder_and_exact_pde(self, grid):
        """With m = 0 the plane-phase CGO field solves curl curl U = k^2 U
        exactly; the solver must return a zero correction and zero residual."""
        p = build_zeta_eta(np.array([0.8, -0.3, 0.2]), 4.0, K)
        sol = solve_cgo_remainder(p, 1, MediumSpec(ball_radius=1.0), grid)
        assert sol.residual == 0.0
        assert sol.remainder_norm(1.0) == 0.0
        U = sol.field_values()
        ccU = curl_grid(curl_grid(U, grid.spacing), grid.spacing)
        # fourth-order stencils on a field growing like e^{t r}: modest tol
        sl = (slice(None), slice(6, -6), slice(6, -6), slice(6, -6))
        assert rel_err(ccU[sl], K ** 2 * U[sl]) < 1e-2

    def test_sphere_samples_are_analytic(self, grid):
        p = build_zeta_eta(np.array([0.5, 0.5, 0.0]), 3.0, K)
        sol = solve_cgo_remainder(p, 2, MediumSpec(ball_radius=1.0), grid)
        mesh = SphereMesh(1.0, 8)
        U, curlU = cgo_on_sphere(sol, mesh)
        phase = np.exp(1j * mesh.nodes @ p.zeta2)
        assert np.allclose(U, phase[:, None] * p.eta2[None, :], atol=1e-12)
        want = phase[:, None] * np.cross(1j * p.zeta2, p.eta2)[None, :]
        assert np.allclose(curlU, want, atol=1e-12)


class TestContrastSolution:
    def test_converges_below_tolerance(self, grid, contrast_medium):
        p = build_zeta_eta(np.array([1.0, 0.0, 0.5]), 4.0, K)
        sol = solve_cgo_remainder(p, 1, contrast_medium, grid, tol=1e-10)
        assert sol.residual <= 1e-10
        assert sol.remainder_norm(1.0) > 0.0

    def test_product_remainder_shrinks_when_t_doubles(self, grid, contrast_medium):
        """The conjugated resolvent decays like 1/t, so the product remainder
        over the unit ball must drop by at least 1.5x per doubling once t is
        past the pre-asymptotic range (t >= 5)."""
        xi = np.array([0.6, -0.2, 0.3])
        norms = []
        for t in (5.0, 10.0):
            p = build_zeta_eta(xi, t, K)
            s1 = solve_cgo_remainder(p, 1, contrast_medium, grid)
            s2 = solve_cgo_remainder(p, 2, contrast_medium, grid)
            _, r = cgo_product_remainder(s1, s2)
            norms.append(r.l2_norm(within_radius=1.0))
        assert norms[0] / norms[1] > 1.5

    def test_strong_contrast_raises(self, grid):
        hard = MediumSpec((Bump((0.0, 0.0, 0.0), 0.8, 0.95),), ball_radius=1.0)
        p = build_zeta_eta(np.array([0.5, 0.0, 0.0]), 2.2, K)
        with pytest.raises(SolverError):
            solve_cgo_remainder(p, 1, hard, grid, max_iter=60)

    def test_invalid_member_rejected(self, grid, contrast_medium):
        p = build_zeta_eta(np.zeros(3), 3.0, K)
        with pytest.raises(ValueError):
            solve_cgo_remainder(p, 3, contrast_medium, grid)


class TestProductExpansion:
    def test_matches_direct_field_product(self, grid, contrast_medium):
        """U1 . U2 equals e^{-i xi x}(leading + r) pointwise inside the unit
        ball, with r assembled from the cross terms."""
        xi = np.array([0.9, 0.4, -0.2])
        p = build_zeta_eta(xi, 3.5, K)
        s1 = solve_cgo_remainder(p, 1, contrast_medium, grid)
        s2 = solve_cgo_remainder(p, 2, contrast_medium, grid)
        leading, r = cgo_product_remainder(s1, s2)
        direct = np.sum(s1.field_values() * s2.field_values(), axis=0)
        phase = np.exp(-1j * np.tensordot(xi, grid.nodes(), axes=1))
        inside = grid.radii() < 1.0
        want = phase * (leading + r.values)
        assert rel_err(direct[inside], want[inside]) < 1e-10

    def test_homogeneous_remainder_is_zero(self, grid):
        p = build_zeta_eta(np.array([0.3, 0.0, 0.0]), 3.0, K)
        hom = MediumSpec(ball_radius=1.0)
        s1 = solve_cgo_remainder(p, 1, hom, grid)
        s2 = solve_cgo_remainder(p, 2, hom, grid)
        leading, r = cgo_product_remainder(s1, s2)
        assert np.all(r.values == 0.0)
        assert leading == pytest.approx(p.leading)

    def test_mismatched_pair_rejected(self, grid, contrast_medium):
        p = build_zeta_eta(np.array([0.3, 0.0, 0.0]), 3.0, K)
        s1 = solve_cgo_remainder(p, 1, contrast_medium, grid)
        with pytest.raises(ValueError):
            cgo_product_remainder(s1, s1)
        q = build_zeta_eta(np.array([0.3, 0.0, 0.0]), 4.0, K)
        s2q = solve_cgo_remainder(q, 2, contrast_medium, grid)
        with pytest.raises(ValueError):
            cgo_product_remainder(s1, s2q)
