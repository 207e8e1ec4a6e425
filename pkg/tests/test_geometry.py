import json

import numpy as np
import pytest

from magwell import ValidationError
from magwell.geometry import (
    CurveGeometry,
    FieldProfile,
    ModelCatalogEntry,
    builtin_models,
    model_a,
    model_b,
    model_c,
    model_from_parameters,
    register_entry,
    smooth_plateau,
    tubular_gauge,
    validate_assumptions,
)


def straight_geometry(d0=10.0):
    return CurveGeometry(
        kind="straight",
        curvature=lambda x: np.zeros_like(np.asarray(x, float)),
        d0=d0,
        curvature_bound=0.0,
    )


def linear_field(delta0=1.0):
    return FieldProfile(
        b_tilde=lambda x, t: delta0 * np.asarray(t, float) + 0.0 * np.asarray(x, float),
        dt_b_tilde=lambda x, t: delta0 + 0.0 * np.asarray(x, float) + 0.0 * np.asarray(t, float),
        delta=lambda x: delta0 + 0.0 * np.asarray(x, float),
        dtt_on_curve=lambda x: np.zeros_like(np.asarray(x, float)),
        delta_min=delta0,
        delta_star=0.9 * delta0,
    )


class TestCurveGeometry:
    def test_degenerate_tube_rejected(self):
        with pytest.raises(ValidationError, match="degenerate"):
            CurveGeometry(
                kind="parametrized",
                curvature=lambda x: 0.5 + 0.0 * np.asarray(x, float),
                d0=3.0,
                curvature_bound=0.5,
            )

    def test_jacobian_bound_model_c(self):
        entry = model_c()
        xs = np.linspace(-5, 5, 101)
        ts = np.linspace(-1.0, 1.0, 21)
        m = entry.geometry.jacobian(xs[None, :], ts[:, None])
        assert np.min(m) >= 0.8 - 1e-12


class TestGauge:
    def test_constant_linear_field_exact(self):
        gauge = tubular_gauge(linear_field(2.0), straight_geometry())
        for t in (0.3, -0.4, 1.7):
            assert gauge.a_tilde(0.7, t) == pytest.approx(-2.0 * t**2 / 2.0, abs=1e-12)

    def test_curved_linear_field_closed_form(self):
        entry = model_c()
        gauge = entry.gauge()
        delta = entry.field.delta
        k = entry.geometry.curvature
        for x in (-1.2, 0.0, 2.0):
            for t in (0.25, -0.5):
                expected = -delta(x) * (t**2 / 2.0 - k(x) * t**3 / 3.0)
                assert gauge.a_tilde(x, t) == pytest.approx(expected, abs=1e-12)

    def test_quadratic_term_gives_kappa(self):
        entry = model_b(c=0.3)
        kappa0 = float(entry.gauge().kappa(0.0))
        assert kappa0 == pytest.approx(0.1, abs=1e-14)

    def test_grid_matches_adaptive_quadrature(self):
        entry = model_b()
        gauge = entry.gauge()
        xs = np.array([-2.0, -0.3, 0.0, 1.1])
        ts = np.linspace(-1.4, 1.4, 29)
        grid_vals = gauge.grid(xs, ts)
        for i, t in enumerate(ts):
            for j, x in enumerate(xs):
                assert grid_vals[i, j] == pytest.approx(
                    gauge.a_tilde(x, t), abs=1e-12
                )

    def test_gauge_consistency_derivative(self):
        # d/dt of the gauge integral returns the (signed, weighted) field
        for entry in builtin_models():
            gauge = entry.gauge()
            s = 1e-4
            for x in (-1.0, 0.5):
                for t in (0.4, -0.7):
                    fd = (gauge.a_tilde(x, t + s) - gauge.a_tilde(x, t - s)) / (2 * s)
                    expected = -(1.0 - t * entry.geometry.curvature(x)) * (
                        entry.field.b_tilde(x, t)
                    )
                    assert fd == pytest.approx(float(expected), abs=1e-6)

    def test_taylor_remainder_catalog_models(self):
        # catalog fields are polynomial in t: cubic Taylor is exact
        for entry in builtin_models():
            gauge = entry.gauge()
            assert gauge.remainder_bound < 1e-9

    def test_taylor_remainder_quartic_field(self):
        # B = t + q t^3 leaves an exact -q t^4/4 remainder
        q = 0.8
        field = FieldProfile(
            b_tilde=lambda x, t: np.asarray(t, float) + q * np.asarray(t, float) ** 3,
            dt_b_tilde=lambda x, t: 1.0 + 3.0 * q * np.asarray(t, float) ** 2,
            delta=lambda x: 1.0 + 0.0 * np.asarray(x, float),
            dtt_on_curve=lambda x: np.zeros_like(np.asarray(x, float)),
            delta_min=1.0,
            delta_star=0.9,
        )
        gauge = tubular_gauge(field, straight_geometry())
        ratios = [
            abs(gauge.a_tilde(0.0, t) - (-(t**2) / 2.0)) / t**4
            for t in (1e-1, 1e-2, 1e-3)
        ]
        assert all(abs(r - q / 4.0) < 1e-3 for r in ratios)
        assert gauge.remainder_bound == pytest.approx(q / 4.0, rel=1e-6)


class TestValidation:
    def test_model_a_all_pass(self):
        report = validate_assumptions(model_a())
        assert report.all_passed
        assert report.check("transverse_derivative_positive").constants[
            "delta0"
        ] == pytest.approx(1.0, abs=1e-9)
        assert np.isfinite(report.check("controlled_oscillation").constants["C_delta"])

    def test_outside_floor_not_applicable(self):
        report = validate_assumptions(model_a())
        floor = report.check("outside_field_floor")
        assert floor.passed is None
        assert "not applicable" in floor.note

    def test_vanishing_delta_fails_with_witness(self):
        field = FieldProfile(
            b_tilde=lambda x, t: np.asarray(x, float) ** 2 * np.asarray(t, float),
            dt_b_tilde=lambda x, t: np.asarray(x, float) ** 2
            + 0.0 * np.asarray(t, float),
            delta=lambda x: np.asarray(x, float) ** 2,
            dtt_on_curve=lambda x: np.zeros_like(np.asarray(x, float)),
            delta_min=0.5,
            delta_star=0.5,
        )
        entry = ModelCatalogEntry("bad", straight_geometry(), field, {})
        report = validate_assumptions(entry)
        check = report.check("transverse_derivative_positive")
        assert check.passed is False
        assert check.witness[0] == pytest.approx(0.0, abs=1e-9)

    def test_registration_rejects_failing_model(self):
        field = linear_field(1.0)
        bad = FieldProfile(
            b_tilde=field.b_tilde,
            dt_b_tilde=field.dt_b_tilde,
            delta=field.delta,
            dtt_on_curve=field.dtt_on_curve,
            delta_min=1.0,
            delta_star=3.0,  # flank check cannot hold
        )
        with pytest.raises(ValidationError, match="flank"):
            register_entry("bad", straight_geometry(), bad, {})

    def test_deterministic_report(self):
        entry = model_a()
        r1 = validate_assumptions(entry, x_samples=201, t_samples=41)
        r2 = validate_assumptions(entry, x_samples=201, t_samples=41)
        assert r1 == r2

    def test_report_json(self):
        report = validate_assumptions(model_a(), x_samples=201, t_samples=41)
        doc = json.loads(report.to_json())
        assert doc["version"] == 1
        assert doc["all_passed"] is True
        assert len(doc["checks"]) == 7


class TestCatalog:
    def test_model_a_profile_values(self):
        entry = model_a()
        delta = entry.field.delta
        assert float(delta(0.0)) == 1.0
        xs = 1e-3
        second = (float(delta(xs)) - 2.0 * float(delta(0.0)) + float(delta(-xs))) / xs**2
        assert second == pytest.approx(2.0, abs=1e-5)
        assert entry.field.delta_min == 1.0

    def test_model_b_kappa(self):
        entry = model_b()
        assert float(entry.gauge().kappa(0.0)) == pytest.approx(0.1, abs=1e-14)
        # plateau makes kappa constant near the well
        assert float(entry.gauge().kappa(0.5)) == pytest.approx(0.1, abs=1e-14)
        assert float(entry.gauge().kappa(4.0)) == 0.0

    def test_plateau_shape(self):
        assert smooth_plateau(np.array([0.0, 0.5, -1.0])).tolist() == [1.0, 1.0, 1.0]
        assert smooth_plateau(np.array([3.0, -4.0])).tolist() == [0.0, 0.0]
        mid = smooth_plateau(np.array([2.0]))[0]
        assert 0.0 < mid < 1.0

    def test_builtin_names(self):
        names = [m.name for m in builtin_models()]
        assert names == ["A", "B", "C"]

    def test_json_round_trip(self):
        entry = model_b(c=0.3)
        doc = entry.to_json()
        again = ModelCatalogEntry.from_json(doc)
        assert again.name == entry.name
        assert again.parameters == entry.parameters
        assert float(again.gauge().kappa(0.0)) == pytest.approx(0.1, abs=1e-14)

    def test_unknown_model_rejected(self):
        with pytest.raises(ValidationError, match="unknown model"):
            model_from_parameters("Z", {})

    def test_constant_profile_variant(self):
        entry = model_a(a=0.0)
        xs = np.linspace(-4, 4, 9)
        assert np.allclose(entry.field.delta(xs), 1.0)
        assert validate_assumptions(entry).all_passed
