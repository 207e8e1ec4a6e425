"""Curve geometry, field profiles, the tubular gauge, and model catalog.

The magnetic field is described in tubular coordinates (x along the zero
curve, t the signed normal distance).  A model supplies the field B(x,t)
together with its first two transverse derivatives; this module derives
the gauge potential A(x,t) = -int_0^t (1 - s k(x)) B(x,s) ds, the cubic
gauge coefficient kappa(x), and machine-checks the standing assumptions
(tube regularity, transverse nondegeneracy, controlled oscillation of the
confinement profile) on sample grids.

All model callables are vectorized: they accept numpy arrays in x and t
and broadcast.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from .errors import ConvergenceError, ValidationError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class CurveGeometry:
    """Zero-curve geometry: curvature profile and tubular radius.

    The tube map (x, t) -> curve(x) + t * normal(x) is a diffeomorphism
    exactly when the Jacobian m(x,t) = 1 - t k(x) stays positive, which the
    constructor enforces through d0 * curvature_bound < 1.
    """

    kind: str
    curvature: Callable[[np.ndarray], np.ndarray]
    d0: float
    curvature_bound: float

    def __post_init__(self):
        if self.kind not in ("straight", "parametrized"):
            raise ValidationError("kind must be 'straight' or 'parametrized'")
        if not (self.d0 > 0 and np.isfinite(self.d0)):
            raise ValidationError("tubular radius d0 must be positive")
        if self.curvature_bound < 0:
            raise ValidationError("curvature_bound must be nonnegative")
        if self.d0 * self.curvature_bound >= 1.0:
            raise ValidationError(
                "d0 * curvature_bound = %.3g >= 1: tube coordinates degenerate"
                % (self.d0 * self.curvature_bound)
            )

    def jacobian(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """m(x, t) = 1 - t * k(x)."""
        return 1.0 - t * self.curvature(x)


@dataclass(frozen=True)
class FieldProfile:
    """Magnetic field in tubular coordinates and its transverse derivatives.

    Attributes
    ----------
    b_tilde, dt_b_tilde : callables of (x, t)
        The field and its first transverse derivative.
    delta : callable of x
        The confinement profile dt_b_tilde(x, 0); its minimum sets the
        energy scale of the whole problem.
    dtt_on_curve : callable of x
        Second transverse derivative on the curve; feeds the cubic gauge
        coefficient.
    delta_min, delta_star : floats
        Global minimum of delta and the flank level it must exceed far out
        (delta_star < liminf delta is the confinement hypothesis that keeps
        low eigenfunctions away from the window edges).
    outside_bound : float or None
        Field floor away from the tube when the model defines one; None
        marks it not applicable.
    """

    b_tilde: Callable
    dt_b_tilde: Callable
    delta: Callable
    dtt_on_curve: Callable
    delta_min: float
    delta_star: float
    outside_bound: Optional[float] = None

    def __post_init__(self):
        if not (self.delta_min > 0 and np.isfinite(self.delta_min)):
            raise ValidationError("delta_min must be positive")
        if not (self.delta_star > 0 and np.isfinite(self.delta_star)):
            raise ValidationError("delta_star must be positive")


class GaugeData:
    """Tubular gauge potential and derived cubic coefficient.

    The potential A(x,t) = -int_0^t (1 - s k(x)) B(x,s) ds vanishes to
    second order on the curve and expands as
    A(x,t) = -delta(x) t^2/2 - kappa(x) t^3 + O(t^4) with
    kappa(x) = dtt_on_curve(x)/6 - k(x) delta(x)/3.  Scalar evaluation uses
    adaptive quadrature to 1e-12; grid evaluation uses cumulative
    Gauss-Legendre panels between consecutive t nodes (exact for the
    polynomial-in-t fields of the catalog, and well below 1e-12 otherwise).
    """

    def __init__(self, field: FieldProfile, geometry: CurveGeometry):
        self.field = field
        self.geometry = geometry
        self.remainder_bound = self._estimate_remainder_bound()

    def _integrand(self, x, s):
        return -(1.0 - s * self.geometry.curvature(x)) * self.field.b_tilde(x, s)

    def a_tilde(self, x: float, t: float) -> float:
        """Pointwise gauge potential by adaptive quadrature."""
        if t == 0.0:
            return 0.0
        value, err = quad(
            lambda s: self._integrand(x, s), 0.0, t, epsabs=1e-12, epsrel=1e-12
        )
        if err > 1e-8 * max(1.0, abs(value)):
            raise ConvergenceError(
                "gauge quadrature error %.3e at (x=%.6g, t=%.6g)" % (err, x, t)
            )
        return value

    def kappa(self, x: np.ndarray) -> np.ndarray:
        """Cubic gauge coefficient from the closed formula."""
        x = np.asarray(x, dtype=float)
        return self.field.dtt_on_curve(x) / 6.0 - (
            self.geometry.curvature(x) * self.field.delta(x) / 3.0
        )

    def grid(self, x_nodes: np.ndarray, t_nodes: np.ndarray) -> np.ndarray:
        """Gauge potential on a tensor grid, shape (len(t), len(x)).

        Integrates column-wise from t = 0 outward with 8-point
        Gauss-Legendre panels on every inter-node segment, accumulating
        partial integrals so each node costs one panel.
        """
        x = np.asarray(x_nodes, dtype=float)
        t = np.asarray(t_nodes, dtype=float)
        if np.any(np.diff(t) <= 0):
            raise ValidationError("t_nodes must be strictly increasing")
        out = np.zeros((len(t), len(x)))

        def panel(a: float, b: float) -> np.ndarray:
            mid = 0.5 * (a + b)
            half = 0.5 * (b - a)
            s = mid + half * _GL_NODES
            vals = self._integrand(x[None, :], s[:, None])
            return half * np.einsum("q,qj->j", _GL_WEIGHTS, vals)

        pos = np.where(t > 0)[0]
        acc = np.zeros(len(x))
        prev = 0.0
        for j in pos:
            acc = acc + panel(prev, t[j])
            out[j] = acc
            prev = t[j]
        neg = np.where(t < 0)[0][::-1]
        acc = np.zeros(len(x))
        prev = 0.0
        for j in neg:
            acc = acc + panel(prev, t[j])
            out[j] = acc
            prev = t[j]
        return out

    def _estimate_remainder_bound(self) -> float:
        xs = np.linspace(-3.0, 3.0, 13)
        worst = 0.0
        for t in (0.1, 0.05, 0.025):
            for x in xs:
                lead = (
                    -self.field.delta(x) * t**2 / 2.0
                    - float(self.kappa(x)) * t**3
                )
                worst = max(worst, abs(self.a_tilde(x, t) - lead) / t**4)
        return worst


def tubular_gauge(field: FieldProfile, geometry: CurveGeometry) -> GaugeData:
    """Build the gauge potential for a validated field/geometry pair."""
    return GaugeData(field, geometry)


@dataclass(frozen=True)
class AssumptionCheck:
    """One validated hypothesis: verdict, witness, estimated constants."""

    name: str
    passed: Optional[bool]
    constants: dict
    witness: Optional[tuple] = None
    note: str = ""

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "constants": {k: float(v) for k, v in self.constants.items()},
            "witness": None if self.witness is None else list(self.witness),
            "note": self.note,
        }


@dataclass(frozen=True)
class ValidationReport:
    model_name: str
    checks: tuple
    x_window: tuple
    x_samples: int
    t_samples: int

    @property
    def all_passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "kind": "validation_report",
                "model": self.model_name,
                "x_window": list(self.x_window),
                "x_samples": self.x_samples,
                "t_samples": self.t_samples,
                "all_passed": self.all_passed,
                "checks": [c.to_json_dict() for c in self.checks],
            },
            indent=2,
        )


@dataclass(frozen=True)
class ModelCatalogEntry:
    """A named, validated (geometry, field) pair plus its parameter record."""

    name: str
    geometry: CurveGeometry
    field: FieldProfile
    parameters: dict = dataclass_field(default_factory=dict)

    def gauge(self) -> GaugeData:
        return tubular_gauge(self.field, self.geometry)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "kind": "model_catalog_entry",
                "name": self.name,
                "parameters": {k: float(v) for k, v in self.parameters.items()},
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelCatalogEntry":
        doc = json.loads(text)
        if doc.get("kind") != "model_catalog_entry" or doc.get("version") != 1:
            raise ValidationError("not a version-1 model_catalog_entry document")
        return model_from_parameters(doc["name"], doc["parameters"])


def validate_assumptions(
    entry: ModelCatalogEntry,
    x_window: tuple[float, float] = (-5.0, 5.0),
    x_samples: int = 2001,
    t_samples: int = 101,
) -> ValidationReport:
    """Check the standing hypotheses on a sample grid; failures are content.

    Every check reports estimated constants and, on failure, a witness
    sample.  The outside-field floor is structurally not checkable in
    tubular coordinates and is reported as not applicable.
    """
    geo, fld = entry.geometry, entry.field
    xs = np.linspace(x_window[0], x_window[1], x_samples)
    ts = np.linspace(-geo.d0, geo.d0, t_samples)
    checks = []

    k_vals = np.abs(np.broadcast_to(geo.curvature(xs), xs.shape))
    k_est = float(np.max(k_vals))
    m0 = 1.0 - geo.d0 * k_est
    tube_ok = geo.d0 * k_est < 1.0 and k_est <= geo.curvature_bound + 1e-12
    checks.append(
        AssumptionCheck(
            name="tube_diffeomorphism",
            passed=bool(tube_ok),
            constants={"K": k_est, "m0": m0, "d0": geo.d0},
            witness=None if tube_ok else (float(xs[np.argmax(k_vals)]), 0.0),
        )
    )

    on_curve = np.abs(np.broadcast_to(fld.b_tilde(xs, 0.0), xs.shape))
    scale = max(1.0, float(np.max(np.abs(fld.b_tilde(xs[None, :], ts[:, None])))))
    vanish_ok = float(np.max(on_curve)) <= 1e-12 * scale
    checks.append(
        AssumptionCheck(
            name="field_vanishes_on_curve",
            passed=bool(vanish_ok),
            constants={"max_on_curve": float(np.max(on_curve))},
            witness=None if vanish_ok else (float(xs[np.argmax(on_curve)]), 0.0),
        )
    )

    dt_field = np.broadcast_to(
        fld.dt_b_tilde(xs[None, :], ts[:, None]), (t_samples, x_samples)
    )
    delta0 = float(np.min(dt_field))
    ti, xi = np.unravel_index(np.argmin(dt_field), dt_field.shape)
    checks.append(
        AssumptionCheck(
            name="transverse_derivative_positive",
            passed=bool(delta0 > 0.0),
            constants={"delta0": delta0},
            witness=None if delta0 > 0.0 else (float(xs[xi]), float(ts[ti])),
        )
    )

    delta_vals = np.broadcast_to(fld.delta(xs), xs.shape)
    delta_pos = bool(np.all(delta_vals > 0))
    if delta_pos:
        dprime = np.gradient(delta_vals, xs)
        ratios = np.abs(dprime) / delta_vals ** (2.0 / 3.0)
        c_delta = float(np.max(ratios))
        osc_ok = np.isfinite(c_delta)
        osc_witness = None if osc_ok else (float(xs[np.argmax(ratios)]), 0.0)
    else:
        c_delta = np.inf
        osc_ok = False
        osc_witness = (float(xs[np.argmin(delta_vals)]), 0.0)
    checks.append(
        AssumptionCheck(
            name="controlled_oscillation",
            passed=bool(osc_ok),
            constants={"C_delta": c_delta, "delta_min_sampled": float(np.min(delta_vals))},
            witness=osc_witness,
        )
    )

    outer = np.concatenate([delta_vals[:10], delta_vals[-10:]])
    outer_x = np.concatenate([xs[:10], xs[-10:]])
    flank_ok = bool(np.all(outer > fld.delta_star))
    checks.append(
        AssumptionCheck(
            name="flank_confinement",
            passed=flank_ok,
            constants={"delta_star": fld.delta_star, "flank_min": float(np.min(outer))},
            witness=None if flank_ok else (float(outer_x[np.argmin(outer)]), 0.0),
        )
    )

    gauge = entry.gauge()
    kappa_vals = np.abs(np.broadcast_to(gauge.kappa(xs), xs.shape))
    if delta_pos:
        c_kappa = float(np.max(kappa_vals / delta_vals))
        kappa_ok = np.isfinite(c_kappa)
    else:
        c_kappa, kappa_ok = np.inf, False
    checks.append(
        AssumptionCheck(
            name="gauge_cubic_controlled",
            passed=bool(kappa_ok),
            constants={"C_kappa": c_kappa, "remainder_bound": gauge.remainder_bound},
            witness=None if kappa_ok else (float(xs[np.argmax(kappa_vals)]), 0.0),
        )
    )

    checks.append(
        AssumptionCheck(
            name="outside_field_floor",
            passed=None if fld.outside_bound is None else True,
            constants={}
            if fld.outside_bound is None
            else {"b0": fld.outside_bound},
            note=(
                "not applicable: Dirichlet truncation of the tube substitutes "
                "for confinement outside it"
                if fld.outside_bound is None
                else ""
            ),
        )
    )

    return ValidationReport(
        model_name=entry.name,
        checks=tuple(checks),
        x_window=(float(x_window[0]), float(x_window[1])),
        x_samples=x_samples,
        t_samples=t_samples,
    )


def register_entry(
    name: str,
    geometry: CurveGeometry,
    field: FieldProfile,
    parameters: dict,
) -> ModelCatalogEntry:
    """Build an entry and insist its assumption checks pass."""
    entry = ModelCatalogEntry(name, geometry, field, dict(parameters))
    report = validate_assumptions(entry, x_samples=201, t_samples=41)
    if not report.all_passed:
        failed = [c.name for c in report.checks if c.passed is False]
        raise ValidationError(
            "model '%s' fails assumption checks: %s" % (name, ", ".join(failed))
        )
    return entry


def smooth_plateau(x: np.ndarray, inner: float = 1.0, outer: float = 3.0) -> np.ndarray:
    """C-infinity bump: 1 on [-inner, inner], 0 outside [-outer, outer]."""
    x = np.asarray(x, dtype=float)
    u = (outer - np.abs(x)) / (outer - inner)

    def ramp(v):
        v = np.clip(v, 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            raw = np.where(v > 0.0, np.exp(-1.0 / np.maximum(v, 1e-300)), 0.0)
        return raw

    g, g1 = ramp(u), ramp(1.0 - u)
    return g / (g + g1)


def model_a(a: float = 1.0, d0: float = 10.0) -> ModelCatalogEntry:
    """Straight curve, linear transverse field with profile 1 + a x^2/(1+x^2)."""

    def delta(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + a * x**2 / (1.0 + x**2)

    geometry = CurveGeometry(
        kind="straight", curvature=lambda x: np.zeros_like(np.asarray(x, float)),
        d0=d0, curvature_bound=0.0,
    )
    field = FieldProfile(
        b_tilde=lambda x, t: delta(x) * t,
        dt_b_tilde=lambda x, t: delta(x) + 0.0 * np.asarray(t, float),
        delta=delta,
        dtt_on_curve=lambda x: np.zeros_like(np.asarray(x, float)),
        delta_min=1.0,
        delta_star=0.9 * (1.0 + a),
    )
    return register_entry("A", geometry, field, {"a": a, "d0": d0})


def model_b(a: float = 1.0, c: float = 0.3, d0: float = 1.5) -> ModelCatalogEntry:
    """Model A field plus a quadratic transverse term under a smooth plateau.

    The cubic gauge coefficient is c/3 near the origin, so the order-hbar
    machinery has something nonzero to chew on.
    """

    def delta(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + a * x**2 / (1.0 + x**2)

    geometry = CurveGeometry(
        kind="straight", curvature=lambda x: np.zeros_like(np.asarray(x, float)),
        d0=d0, curvature_bound=0.0,
    )
    field = FieldProfile(
        b_tilde=lambda x, t: delta(x) * t + c * smooth_plateau(x) * t**2,
        dt_b_tilde=lambda x, t: delta(x) + 2.0 * c * smooth_plateau(x) * t,
        delta=delta,
        dtt_on_curve=lambda x: 2.0 * c * smooth_plateau(x),
        delta_min=1.0,
        delta_star=0.9 * (1.0 + a),
    )
    return register_entry("B", geometry, field, {"a": a, "c": c, "d0": d0})


def model_c(a: float = 1.0, k0: float = 0.2, d0: float = 1.0) -> ModelCatalogEntry:
    """Curved zero locus with curvature k0/(1+x^2) and the Model A field."""

    def delta(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + a * x**2 / (1.0 + x**2)

    geometry = CurveGeometry(
        kind="parametrized",
        curvature=lambda x: k0 / (1.0 + np.asarray(x, float) ** 2),
        d0=d0,
        curvature_bound=k0,
    )
    field = FieldProfile(
        b_tilde=lambda x, t: delta(x) * t,
        dt_b_tilde=lambda x, t: delta(x) + 0.0 * np.asarray(t, float),
        delta=delta,
        dtt_on_curve=lambda x: np.zeros_like(np.asarray(x, float)),
        delta_min=1.0,
        delta_star=0.9 * (1.0 + a),
    )
    return register_entry("C", geometry, field, {"a": a, "k0": k0, "d0": d0})


_FACTORIES = {"A": model_a, "B": model_b, "C": model_c}


def model_from_parameters(name: str, parameters: dict) -> ModelCatalogEntry:
    """Reconstruct a catalog model from its serialized parameter record."""
    if name not in _FACTORIES:
        raise ValidationError(
            "unknown model '%s' (catalog has %s)" % (name, sorted(_FACTORIES))
        )
    return _FACTORIES[name](**{k: float(v) for k, v in parameters.items()})


def builtin_models() -> list[ModelCatalogEntry]:
    """The standard desk-scale catalog: models A, B, and C."""
    return [model_a(), model_b(), model_c()]
