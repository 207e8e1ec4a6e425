"""Tests for the direct 2D tube discretization and its solver."""

import dataclasses

import numpy as np
import pytest

from magwell.errors import DiagnosticError, ValidationError
from magwell.geometry import model_a, model_b, model_c
from magwell.magnetic2d import (
    TubeDiscretization,
    assemble_2d,
    assemble_2d_physical,
    localization_diagnostics,
    solve_2d,
)
from magwell.montgomery import critical_point_cached
from magwell.spectra import cluster_eigenvalues, cluster_means

MU_CRIT = 0.569820317440


@pytest.fixture(scope="module")
def model():
    return model_a()


@pytest.fixture(scope="module")
def medium_solve(model):
    disc = TubeDiscretization(h=0.05, x_points=140, t_points=70)
    op = assemble_2d(model, disc)
    return op, solve_2d(op, 6)


class TestDiscretization:
    def test_grid_geometry(self):
        disc = TubeDiscretization(h=0.05, x_points=11, t_points=7,
                                  x_half_width=2.0, t_half_width=3.0)
        x = disc.x_nodes()
        t = disc.t_nodes()
        assert disc.dimension == 77
        assert disc.hbar == pytest.approx(0.05 ** (1.0 / 3.0), rel=1e-15)
        # interior Dirichlet nodes: walls excluded, symmetric about 0
        assert x[0] == pytest.approx(-2.0 + disc.dx)
        assert x[-1] == pytest.approx(2.0 - disc.dx)
        assert np.allclose(x + x[::-1], 0.0, atol=1e-14)
        assert np.allclose(np.diff(t), disc.dt)

    def test_parameter_validation(self):
        with pytest.raises(ValidationError):
            TubeDiscretization(h=1.5)
        with pytest.raises(ValidationError):
            TubeDiscretization(h=0.05, x_points=2)
        with pytest.raises(ValidationError):
            TubeDiscretization(h=0.05, t_half_width=-1.0)

    def test_rejects_tube_overflow(self):
        # Model B only trusts tube coordinates out to d0 = 1.5, but the
        # dilated window reaches hbar * 8 = 2.95 at h = 0.05.
        disc = TubeDiscretization(h=0.05)
        with pytest.raises(ValidationError, match="d0"):
            disc.validate_against(model_b())

    def test_rejects_narrow_x_window(self):
        disc = TubeDiscretization(h=0.05, x_half_width=0.5, x_points=41)
        with pytest.raises(ValidationError, match="widen the x window"):
            disc.validate_against(model_a())

    def test_energy_window_override(self):
        # A constant transverse profile has no flank barrier at all, so the
        # default margin check must refuse it until the caller declares a
        # lower trusted window.
        flat = model_a(a=0.0)
        with pytest.raises(ValidationError, match="widen the x window"):
            TubeDiscretization(h=0.02).validate_against(flat)
        TubeDiscretization(h=0.02, energy_window_top=0.4).validate_against(flat)


class TestAssembly:
    def test_flat_variant_matches_hand_built(self, model):
        # For a straight curve with field delta(x) * t the gauge is exactly
        # -delta(x) t^2 / 2, so the whole matrix can be rebuilt from dense
        # primitives without touching the gauge quadrature.
        disc = TubeDiscretization(h=0.05, x_half_width=1.5, x_points=16,
                                  t_half_width=5.0, t_points=14)
        op = assemble_2d(model, disc, variant="flat")
        built = op.matrix.to_csr().toarray()

        nx, nt = disc.x_points, disc.t_points
        x, t = disc.x_nodes(), disc.t_nodes()
        delta = 1.0 + x**2 / (1.0 + x**2)
        a_check = -delta[None, :] * t[:, None] ** 2 / 2.0
        c = np.zeros((nx, nx))
        for i in range(nx - 1):
            c[i, i + 1] = c[i + 1, i] = 1.0 / (2.0 * disc.dx)
        d2t = 2.0 / disc.dt**2 * np.eye(nt)
        for j in range(nt - 1):
            d2t[j, j + 1] = d2t[j + 1, j] = -1.0 / disc.dt**2
        factor = disc.hbar * np.kron(np.eye(nt), c) - np.diag(a_check.ravel())
        hand = np.kron(d2t, np.eye(nx)) + factor @ factor

        scale = np.abs(hand).max()
        assert np.max(np.abs(built - hand)) <= 1e-12 * scale

    def test_real_form_reproduces_complex_spectrum(self, model):
        # The assembled matrix is real, but it must carry the spectrum of
        # the complex central-difference discretization of
        # (hbar D_x - A)^2: conjugation by the diagonal phase i^j maps one
        # onto the other.
        disc = TubeDiscretization(h=0.05, x_half_width=1.5, x_points=16,
                                  t_half_width=5.0, t_points=14)
        op = assemble_2d(model, disc, variant="flat")
        real_spec = np.linalg.eigvalsh(op.matrix.to_csr().toarray())

        nx, nt = disc.x_points, disc.t_points
        x, t = disc.x_nodes(), disc.t_nodes()
        delta = 1.0 + x**2 / (1.0 + x**2)
        a_check = -delta[None, :] * t[:, None] ** 2 / 2.0
        s = np.zeros((nx, nx))
        for i in range(nx - 1):
            s[i, i + 1] = 1.0 / (2.0 * disc.dx)
            s[i + 1, i] = -1.0 / (2.0 * disc.dx)
        d2t = 2.0 / disc.dt**2 * np.eye(nt)
        for j in range(nt - 1):
            d2t[j, j + 1] = d2t[j + 1, j] = -1.0 / disc.dt**2
        momentum = -1j * disc.hbar * np.kron(np.eye(nt), s)
        factor = momentum - np.diag(a_check.ravel())
        complex_spec = np.linalg.eigvalsh(
            np.kron(d2t, np.eye(nx)) + factor @ factor
        )
        assert np.max(np.abs(real_spec - complex_spec)) < 1e-10

    def test_straight_curved_equals_flat(self, model):
        disc = TubeDiscretization(h=0.05, x_points=40, t_points=30)
        flat = assemble_2d(model, disc, variant="flat").matrix.to_csr()
        curved = assemble_2d(model, disc, variant="curved").matrix.to_csr()
        assert abs(curved - flat).max() <= 1e-15

    def test_curvature_changes_matrix(self):
        disc = TubeDiscretization(h=0.001, x_points=50, t_points=30)
        entry = model_c()
        flat = assemble_2d(entry, disc, variant="flat").matrix.to_csr()
        curved = assemble_2d(entry, disc, variant="curved").matrix.to_csr()
        assert abs(curved - flat).max() > 1e-6

    def test_symmetry_defect_curved(self):
        op = assemble_2d(model_c(), TubeDiscretization(h=0.001, x_points=120,
                                                       t_points=60))
        assert op.symmetry_defect <= 1e-13
        assert op.variant == "curved"
        assert op.coordinates == "dilated"

    def test_rejects_unknown_variant(self, model):
        disc = TubeDiscretization(h=0.05, x_points=20, t_points=20)
        with pytest.raises(ValidationError, match="variant"):
            assemble_2d(model, disc, variant="weighted")

    def test_physical_twin_entry_ratio(self, model):
        # Same physical nodes, no rescaling: the raw assembly must equal
        # h^(4/3) times the dilated one entry by entry.
        disc = TubeDiscretization(h=0.05, x_points=60, t_points=40)
        rescaled = assemble_2d(model, disc).matrix.to_csr()
        physical = assemble_2d_physical(model, disc).matrix.to_csr()
        ratio = disc.h ** (4.0 / 3.0)
        defect = abs(physical - rescaled * ratio).max()
        assert defect <= 1e-12 * abs(physical).max()

    def test_physical_twin_eigenvalue_ratio(self, model):
        disc = TubeDiscretization(h=0.05, x_points=60, t_points=40)
        op_r = assemble_2d(model, disc)
        op_p = assemble_2d_physical(model, disc)
        res_r = solve_2d(op_r, 3)
        res_p = solve_2d(op_p, 3, tol=1e-10)
        ratio = disc.h ** (4.0 / 3.0)
        assert np.max(np.abs(res_p.values / res_r.values / ratio - 1.0)) < 1e-9
        assert np.allclose(res_r.physical_values, res_r.values * ratio)


class TestSolver:
    def test_toy_grid_matches_dense(self, model):
        disc = TubeDiscretization(h=0.05, x_half_width=2.0, x_points=20,
                                  t_half_width=5.0, t_points=20)
        op = assemble_2d(model, disc)
        res = solve_2d(op, 6)
        dense = np.linalg.eigvalsh(op.matrix.to_csr().toarray())[:6]
        assert np.max(np.abs(res.values - dense)) < 1e-9
        assert res.residual_norms.max() < 1e-10

    def test_lobpcg_agrees_with_shift_invert(self, model):
        disc = TubeDiscretization(h=0.05, x_points=100, t_points=50,
                                  t_half_width=6.0)
        op = assemble_2d(model, disc)
        si = solve_2d(op, 4)
        lo = solve_2d(op, 4, tol=1e-6, method="lobpcg")
        assert si.method != lo.method
        assert np.max(np.abs(si.values - lo.values)) < 1e-9

    def test_deterministic_repeat(self, model):
        disc = TubeDiscretization(h=0.05, x_points=60, t_points=40)
        op = assemble_2d(model, disc)
        first = solve_2d(op, 4)
        second = solve_2d(op, 4)
        assert np.array_equal(first.values, second.values)
        assert np.array_equal(first.eigenvectors, second.eigenvectors)

    def test_flat_floor_is_zero(self, model):
        disc = TubeDiscretization(h=0.05, x_points=60, t_points=40)
        op = assemble_2d(model, disc, variant="flat")
        assert op.spectral_floor() == 0.0
        res = solve_2d(op, 4)
        assert np.all(res.values > 0.0)

    def test_curved_floor_certified(self):
        op = assemble_2d(model_c(), TubeDiscretization(h=0.001, x_points=80,
                                                       t_points=50))
        floor = op.spectral_floor()
        assert floor < 0.0
        res = solve_2d(op, 2)
        assert np.all(res.values >= floor - 1e-10)

    def test_quasi_degenerate_pairs(self, medium_solve):
        # Physical levels arrive as momentum-reversed pairs; the standard
        # clustering tolerance 0.25 h^(2/3) groups each pair and keeps
        # distinct levels apart.
        _, res = medium_solve
        tol = 0.25 * res.h ** (2.0 / 3.0)
        clusters = cluster_eigenvalues(res.values, tol)
        assert len(clusters[0]) == 2
        assert len(clusters[1]) == 2
        assert clusters[0][1] - clusters[0][0] < 5e-3
        means = cluster_means(res.values, tol)
        assert means[1] - means[0] > 0.1

    def test_ground_level_regression(self, medium_solve):
        # Reference value from this exact grid and solver, residuals near
        # 1e-13; the ground level sits inside the energy window
        # (mu_c, delta_star^(2/3) mu_c).
        _, res = medium_solve
        assert res.values[0] == pytest.approx(0.70400904, abs=1e-6)
        assert MU_CRIT < res.values[0] < 1.8 ** (2.0 / 3.0) * MU_CRIT

    def test_const_delta_window_growth(self):
        # With a constant profile the only x-confinement is the Dirichlet
        # wall, so the ground level decreases as the window widens and
        # approaches the band minimum mu_c.  Reference values from these
        # exact grids.
        flat = model_a(a=0.0)
        pinned = {2.0: (101, 0.573737654), 3.0: (151, 0.571837023),
                  4.0: (201, 0.569335044)}
        grounds = []
        for half_width, (nx, reference) in pinned.items():
            disc = TubeDiscretization(h=0.02, x_half_width=half_width,
                                      x_points=nx, t_half_width=7.0,
                                      t_points=81, energy_window_top=0.4)
            op = assemble_2d(flat, disc, variant="flat")
            value = solve_2d(op, 1).values[0]
            assert value == pytest.approx(reference, abs=1e-6)
            grounds.append(value)
        assert grounds[0] > grounds[1] > grounds[2]
        assert abs(grounds[-1] - MU_CRIT) < 5e-3

    def test_count_and_method_validation(self, model):
        disc = TubeDiscretization(h=0.05, x_points=20, t_points=20)
        op = assemble_2d(model, disc)
        with pytest.raises(ValidationError):
            solve_2d(op, 0)
        with pytest.raises(ValidationError, match="method"):
            solve_2d(op, 2, method="arnoldi")

    def test_result_provenance(self, medium_solve):
        op, res = medium_solve
        assert res.h == 0.05
        assert res.resolution == (140, 70)
        assert res.metadata["model"] == "A"
        assert res.metadata["variant"] == "curved"
        assert res.eigenvectors.shape == (op.matrix.dimension, 6)


class TestLocalization:
    def test_reports_below_cut(self, medium_solve):
        op, res = medium_solve
        reports = localization_diagnostics(op, res, energy_cut=0.75)
        assert len(reports) == 2
        for report in reports:
            assert report.energy < 0.75
            assert 5.0 < report.transverse_decay_rate < 8.0
            assert abs(report.rate_positive_side
                       - report.rate_negative_side) < 0.5
            assert 0.0 < report.tangential_mass_outside < 0.3

    def test_narrow_window_raises(self, model):
        disc = TubeDiscretization(h=0.05, x_points=60,
                                  t_half_width=2.0, t_points=15)
        op = assemble_2d(model, disc)
        res = solve_2d(op, 2)
        with pytest.raises(DiagnosticError, match="5 samples"):
            localization_diagnostics(op, res, energy_cut=1.5)

    def test_requires_eigenvectors(self, medium_solve):
        op, res = medium_solve
        stripped = dataclasses.replace(res, eigenvectors=None)
        with pytest.raises(ValidationError, match="eigenvectors"):
            localization_diagnostics(op, stripped, energy_cut=0.75)

    def test_mass_outside_uses_fiber_floor(self, medium_solve):
        # The flank criterion delta(x)^(2/3) mu_c > cut marks both tails at
        # this window, and the ground pair should have nearly all its mass
        # in the allowed middle.
        op, res = medium_solve
        mu_c = critical_point_cached(1).mu_c
        x = op.discretization.x_nodes()
        delta = 1.0 + x**2 / (1.0 + x**2)
        outside = delta ** (2.0 / 3.0) * mu_c > 0.75
        assert outside[0] and outside[-1] and not outside[len(x) // 2]
        reports = localization_diagnostics(op, res, energy_cut=0.75)
        assert reports[0].tangential_mass_outside < 0.25
