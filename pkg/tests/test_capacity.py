import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochmaxwell.capacity import (
    CapacityOperator,
    boundary_functional,
    build_capacity,
    capacity_apply,
    radiating_multipole,
    spherical_h1,
)
from stochmaxwell.forward import HomogeneousTraceMap
from stochmaxwell.geometry import (
    Bump,
    Grid3,
    SourceStrength,
    SphereMesh,
    evaluate_on_grid,
)
from stochmaxwell.greens import electric_dipole_field
from stochmaxwell.sphharm import VshBasis, VshExpansion

from conftest import K_DESK, rel_err


class TestVshBasis:
    def test_roundtrip_of_tangential_field(self, desk_basis):
        """decompose/synthesize is the identity on band-limited tangential
        fields (here: a multipole trace)."""
        mesh = desk_basis.mesh
        E, _ = radiating_multipole("te", 4, -2, K_DESK, mesh.nodes)
        trace = np.cross(E, mesh.normals)
        back = desk_basis.synthesize(desk_basis.decompose(trace))
        assert rel_err(back, trace) < 1e-12

    def test_expansion_coefficient_lookup(self, desk_basis):
        rng = np.random.default_rng(6)
        coeffs = rng.standard_normal(2 * desk_basis.n_modes) + 0j
        exp = VshExpansion(desk_basis, coeffs)
        idx = desk_basis.mode_index(3, -1)
        assert exp.coefficient("grad", 3, -1) == coeffs[idx]
        assert exp.coefficient("curl", 3, -1) == coeffs[desk_basis.n_modes + idx]

    def test_batched_decompose_matches_loop(self, desk_basis):
        rng = np.random.default_rng(7)
        batch = rng.standard_normal((4, desk_basis.mesh.n_nodes, 3)) + 0j
        stacked = desk_basis.decompose(batch)
        for i in range(4):
            assert np.allclose(stacked[i], desk_basis.decompose(batch[i]))


class TestMultipoleIdentity:
    def test_all_degrees_and_orders(self, desk_basis, desk_capacity):
        """apply maps E x nu to H x nu for every radiating multipole with
        l <= lmax; this is the defining property of the operator."""
        mesh = desk_basis.mesh
        worst = 0.0
        for l in range(1, desk_basis.lmax + 1):
            for m in (-l, 0, min(l, 2)):
                for kind in ("te", "tm"):
                    E, H = radiating_multipole(kind, l, m, K_DESK, mesh.nodes)
                    got = desk_capacity.apply(np.cross(E, mesh.normals))
                    worst = max(worst, rel_err(got, np.cross(H, mesh.normals)))
        assert worst < 1e-10

    def test_fault_scale_breaks_identity(self, desk_basis):
        """The deliberate-corruption knob must actually corrupt: negative
        control for the verification harness."""
        bad = CapacityOperator(K_DESK, desk_basis, fault_scale=1.05)
        mesh = desk_basis.mesh
        E, H = radiating_multipole("te", 2, 1, K_DESK, mesh.nodes)
        got = bad.apply(np.cross(E, mesh.normals))
        assert rel_err(got, np.cross(H, mesh.normals)) > 1e-3


class TestOffCenterDipole:
    def test_trace_map(self, desk_capacity):
        """A dipole field is an l-mixing radiating solution not used in the
        construction; the operator must map its traces correctly too."""
        mesh = desk_capacity.basis.mesh
        src = np.array([0.2, -0.1, 0.15])
        p = np.array([0.4, 1.0, -0.3])
        E, H = electric_dipole_field(K_DESK, src, p, mesh.nodes)
        got = desk_capacity.apply(np.cross(E, mesh.normals))
        assert rel_err(got, np.cross(H, mesh.normals)) < 1e-6


class TestCoefficientAction:
    def test_apply_matches_coefficient_route(self, desk_capacity):
        rng = np.random.default_rng(12)
        basis = desk_capacity.basis
        tr = basis.synthesize(
            rng.standard_normal(2 * basis.n_modes)
            + 1j * rng.standard_normal(2 * basis.n_modes)
        )
        via_coeffs = basis.synthesize(
            desk_capacity.apply_coeffs(basis.decompose(tr))
        )
        assert np.allclose(desk_capacity.apply(tr), via_coeffs, atol=1e-12)

    @given(seed=st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_transpose_is_bilinear_adjoint(self, seed, desk_capacity):
        """y . (A x) == (A^T y) . x for the non-conjugate pairing."""
        rng = np.random.default_rng(seed)
        n = 2 * desk_capacity.basis.n_modes
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lhs = np.sum(y * desk_capacity.apply_coeffs(x))
        rhs = np.sum(desk_capacity.apply_coeffs_transpose(y) * x)
        assert abs(lhs - rhs) < 1e-10 * abs(lhs)

    def test_linearity(self, desk_capacity):
        rng = np.random.default_rng(3)
        mesh = desk_capacity.basis.mesh
        a = rng.standard_normal((mesh.n_nodes, 3)) + 0j
        b = rng.standard_normal((mesh.n_nodes, 3)) + 0j
        lhs = desk_capacity.apply(2.0 * a - 1j * b)
        rhs = 2.0 * desk_capacity.apply(a) - 1j * desk_capacity.apply(b)
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestConstruction:
    def test_build_capacity_checks_radius(self):
        mesh = SphereMesh(1.0, 6)
        with pytest.raises(ValueError):
            build_capacity(2.0, 1.2, 6, mesh=mesh)

    def test_capacity_apply_checks_mesh(self, desk_capacity):
        other = SphereMesh(1.0, 5)
        with pytest.raises(ValueError):
            capacity_apply(
                desk_capacity, np.zeros((other.n_nodes, 3), dtype=complex), other
            )

    def test_nonpositive_wavenumber_rejected(self, desk_basis):
        with pytest.raises(ValueError):
            CapacityOperator(0.0, desk_basis)

    def test_hankel_overflow_guard(self):
        with pytest.raises(OverflowError):
            spherical_h1(120, 0.1)


class TestBoundaryFunctional:
    def test_equals_volume_pairing(self, desk_capacity):
        """The surface functional reproduces int f . U dx for a radiating
        field with smooth interior source f and a homogeneous test solution U
        (plane wave with |d| = k)."""
        k = K_DESK
        mesh = desk_capacity.basis.mesh
        grid = Grid3.for_ball(1.3, 33)
        x, y, z = grid.nodes()
        prof = np.exp(-((x - 0.05) ** 2 + y ** 2 + (z + 0.1) ** 2) / (2 * 0.25 ** 2))
        prof = prof * (np.sqrt(x ** 2 + y ** 2 + z ** 2) < 0.85)
        J = np.stack([prof, 0.3 * prof, -0.6 * prof]).astype(complex)

        mask = prof > 0
        tmap = HomogeneousTraceMap(k, grid, mask, mesh)
        trace = tmap.traces(J[:, mask].T[None])[0]
        f = 1j * k * J  # the source of the radiating field E = G * J

        d = k * np.array([1.0, 2.0, -1.0]) / np.sqrt(6.0)
        eta = np.array([2.0, -1.0, 0.0]) / np.sqrt(5.0)  # eta . d = 0
        phase_grid = np.exp(1j * np.tensordot(d, grid.nodes(), axes=1))
        volume = np.sum(f * phase_grid[None] * eta[:, None, None, None]) * grid.cell_volume

        phase = np.exp(1j * mesh.nodes @ d)
        U = phase[:, None] * eta[None, :]
        curlU = phase[:, None] * np.cross(1j * d, eta)[None, :]
        surf = boundary_functional(
            trace, desk_capacity.apply(trace), U, curlU, k, mesh
        )
        assert abs(surf - volume) / abs(volume) < 1e-2

    def test_linearity_in_trace(self, desk_capacity):
        mesh = desk_capacity.basis.mesh
        rng = np.random.default_rng(9)
        t1, t2, U, cU = (
            rng.standard_normal((mesh.n_nodes, 3))
            + 1j * rng.standard_normal((mesh.n_nodes, 3))
            for _ in range(4)
        )
        a = boundary_functional(t1, desk_capacity.apply(t1), U, cU, K_DESK, mesh)
        b = boundary_functional(t2, desk_capacity.apply(t2), U, cU, K_DESK, mesh)
        tr = t1 + 2.0 * t2
        c = boundary_functional(tr, desk_capacity.apply(tr), U, cU, K_DESK, mesh)
        assert abs(c - (a + 2.0 * b)) < 1e-10 * abs(c)

    def test_shape_validation(self, desk_capacity):
        mesh = desk_capacity.basis.mesh
        good = np.zeros((mesh.n_nodes, 3), dtype=complex)
        with pytest.raises(ValueError):
            boundary_functional(good[:-1], good, good, good, K_DESK, mesh)
