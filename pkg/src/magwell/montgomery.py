"""The model fiber operator family M(nu) = D^2 + (nu - t^2/2)^2 on the line.

Everything downstream rests on this family: its band functions (the
"dispersive curves" nu -> band_k eigenvalue), the unique minimum of the
first band, and eigenfunction moments entering the 1D effective models.
Each eigensolve runs as a Richardson pair, a coarse grid and its midpoint
refinement, because the raw second-order discretization error (about 4e-6
at default resolution) would otherwise dominate every tolerance used here.
Extrapolated band values are reproducible to about 1e-10 under grid
doubling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.interpolate import CubicSpline

from .errors import (
    BracketError,
    DegenerateMinimumError,
    ValidationError,
)
from .linalg import SymmetricBandMatrix, dense_band_eigensolve

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
_DERIV_CHECK_STEP = 1e-2  # half-step of the 4th-order derivative stencil
_CURVATURE_STEP = 1e-3  # pinned step of the stored curvature stencil


@dataclass(frozen=True)
class MontgomeryGrid:
    """Uniform Dirichlet grid on [-half_width, half_width].

    Attributes
    ----------
    half_width : float
        Half the interval length; the quartic confinement at the ends must
        dominate every energy requested (see :meth:`check_barrier`).
    points : int
        Node count, endpoints included.  Must be odd so that t = 0 is a
        node; the midpoint-refined partner grid (2n - 1 points) then shares
        all coarse nodes.
    barrier_margin : float
        How far above the largest requested energy the boundary potential
        wall has to sit before a solve is accepted.
    """

    half_width: float = 10.0
    points: int = 2001
    barrier_margin: float = 50.0

    def __post_init__(self):
        if not (self.half_width > 0 and np.isfinite(self.half_width)):
            raise ValidationError("half_width must be positive and finite")
        if self.points < 3 or self.points % 2 == 0:
            raise ValidationError("points must be odd and >= 3")
        if self.barrier_margin <= 0:
            raise ValidationError("barrier_margin must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.points)

    def refined(self) -> "MontgomeryGrid":
        """Midpoint refinement: same interval, 2n - 1 points."""
        return MontgomeryGrid(self.half_width, 2 * self.points - 1, self.barrier_margin)

    def wall_height(self, nu: float) -> float:
        return (nu - self.half_width**2 / 2.0) ** 2

    def check_barrier(self, nu: float, target_energy: float = 0.0) -> None:
        """Raise unless the boundary potential dominates `target_energy`."""
        needed = target_energy + self.barrier_margin
        if self.wall_height(nu) < needed:
            required = np.sqrt(2.0 * (nu + np.sqrt(needed)))
            raise ValidationError(
                "potential wall %.3g at half_width %.3g is below %.3g; "
                "increase half_width to at least %.3g"
                % (self.wall_height(nu), self.half_width, needed, required)
            )


@dataclass(frozen=True)
class MontgomeryEigenpair:
    """One band of M(nu): eigenvalue, normalized grid eigenfunction, metadata.

    The eigenfunction lives on `grid` (the coarse member of the Richardson
    pair), has unit trapezoid L2 norm, decays below 1e-8 of its peak on the
    outermost 5% of nodes on each side, and carries a nonnegative
    `sign_anchor` (the integral over t >= 0) that fixes its overall sign.
    """

    nu: float
    band: int
    value: float
    function: np.ndarray
    sign_anchor: float
    grid: MontgomeryGrid

    def __post_init__(self):
        if self.band < 1:
            raise ValidationError("band index is 1-based")
        u = np.asarray(self.function, dtype=float)
        if u.shape != (self.grid.points,):
            raise ValidationError("eigenfunction shape does not match grid")
        t = self.grid.nodes()
        norm = np.trapezoid(u * u, t)
        if abs(norm - 1.0) > 1e-10:
            raise ValidationError("eigenfunction norm defect %.3e" % abs(norm - 1.0))
        edge = max(1, int(0.05 * self.grid.points))
        tail = max(np.max(np.abs(u[:edge])), np.max(np.abs(u[-edge:])))
        if tail > 1e-8 * np.max(np.abs(u)):
            raise ValidationError(
                "eigenfunction tail %.3e of peak; enlarge half_width" % tail
            )
        if self.sign_anchor < 0:
            raise ValidationError("sign_anchor must be nonnegative")


def assemble_montgomery(
    nu: float, grid: MontgomeryGrid, target_energy: float = 0.0
) -> SymmetricBandMatrix:
    """Tridiagonal discretization of D^2 + (nu - t^2/2)^2 with Dirichlet ends."""
    grid.check_barrier(nu, target_energy)
    t = grid.nodes()
    dx = grid.spacing
    bands = np.zeros((2, grid.points))
    bands[0] = 2.0 / dx**2 + (nu - t**2 / 2.0) ** 2
    bands[1, :-1] = -1.0 / dx**2
    return SymmetricBandMatrix(bands)


def _solve_grid(nu: float, count: int, grid: MontgomeryGrid):
    matrix = assemble_montgomery(nu, grid)
    report = dense_band_eigensolve(matrix, count=count, want_vectors=True)
    return report.eigenvalues, report.eigenvectors


def montgomery_spectrum(
    nu: float, bands: int, grid: Optional[MontgomeryGrid] = None
) -> list[MontgomeryEigenpair]:
    """Lowest `bands` eigenpairs of M(nu), Richardson-extrapolated.

    Solves on `grid` and on its midpoint refinement; band values combine as
    (4 fine - coarse) / 3, which cancels the leading O(dx^2) error, and the
    eigenfunctions combine the same way on the shared coarse nodes before
    renormalization and sign fixing.  One extra band is always solved so the
    simplicity gap (> 1e-6 to the neighbor) can be verified for the last
    returned band.
    """
    if bands < 1:
        raise ValidationError("bands must be >= 1")
    if grid is None:
        grid = MontgomeryGrid()
    fine_grid = grid.refined()
    count = bands + 1
    w_c, v_c = _solve_grid(nu, count, grid)
    w_f, v_f = _solve_grid(nu, count, fine_grid)
    values = (4.0 * w_f - w_c) / 3.0
    gaps = np.diff(values)
    if np.any(gaps <= 1e-6):
        raise ValidationError(
            "bands not simple: smallest gap %.3e at nu=%.6g" % (gaps.min(), nu)
        )
    grid.check_barrier(nu, target_energy=float(values[bands - 1]))

    t = grid.nodes()
    t_fine = fine_grid.nodes()
    pairs = []
    for k in range(bands):
        uc = v_c[:, k] / np.sqrt(np.trapezoid(v_c[:, k] ** 2, t))
        uf = v_f[:, k] / np.sqrt(np.trapezoid(v_f[:, k] ** 2, t_fine))
        uf_on_coarse = uf[::2]
        if float(uf_on_coarse @ uc) < 0.0:
            uf_on_coarse = -uf_on_coarse
        combined = (4.0 * uf_on_coarse - uc) / 3.0
        combined = combined / np.sqrt(np.trapezoid(combined**2, t))
        anchor = float(np.trapezoid(np.where(t >= 0.0, combined, 0.0), t))
        if anchor < 0.0:
            combined = -combined
            anchor = -anchor
        pairs.append(
            MontgomeryEigenpair(
                nu=float(nu),
                band=k + 1,
                value=float(values[k]),
                function=combined,
                sign_anchor=anchor,
                grid=grid,
            )
        )
    return pairs


def _band_value(nu: float, band: int, grid: MontgomeryGrid) -> float:
    """Extrapolated band value only (no eigenfunction plumbing)."""
    w_c, _ = _solve_grid(nu, band, grid)
    w_f, _ = _solve_grid(nu, band, grid.refined())
    return float((4.0 * w_f[band - 1] - w_c[band - 1]) / 3.0)


@dataclass(frozen=True)
class DispersiveCurveTable:
    """Band function samples mu_k(nu) over a uniform nu grid."""

    band: int
    nu_grid: np.ndarray
    values: np.ndarray
    second_differences: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu_grid, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if nu.ndim != 1 or nu.shape != val.shape:
            raise ValidationError("nu_grid and values must be matching 1D arrays")
        if np.any(np.diff(nu) <= 0):
            raise ValidationError("nu_grid must be strictly increasing")
        if not np.all(np.isfinite(val)) or np.any(val <= 0):
            raise ValidationError("band values must be finite and positive")
        edge = min(10, len(val) // 2)
        if edge >= 2:
            left = val[:edge]
            right = val[-edge:]
            if np.any(np.diff(left) >= 0) or np.any(np.diff(right) <= 0):
                raise ValidationError(
                    "band values must increase outward at both table edges; "
                    "widen the nu range so it straddles the band minimum"
                )

    def interpolate(self) -> CubicSpline:
        return CubicSpline(self.nu_grid, self.values)

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "kind": "dispersive_curve_table",
            "band": self.band,
            "nu_grid": [float(x) for x in self.nu_grid],
            "values": [float(x) for x in self.values],
            "second_differences": [float(x) for x in self.second_differences],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DispersiveCurveTable":
        doc = json.loads(text)
        if doc.get("kind") != "dispersive_curve_table" or doc.get("version") != 1:
            raise ValidationError("not a version-1 dispersive_curve_table document")
        return cls(
            band=int(doc["band"]),
            nu_grid=np.asarray(doc["nu_grid"], dtype=float),
            values=np.asarray(doc["values"], dtype=float),
            second_differences=np.asarray(doc["second_differences"], dtype=float),
        )


def dispersive_curve(
    band: int,
    nu_lo: float,
    nu_hi: float,
    samples: int,
    grid: Optional[MontgomeryGrid] = None,
) -> DispersiveCurveTable:
    """Sample band `band` of the fiber family over [nu_lo, nu_hi]."""
    if samples < 9:
        raise ValidationError("need at least 9 samples")
    if not nu_lo < nu_hi:
        raise ValidationError("nu_lo must be below nu_hi")
    if grid is None:
        grid = MontgomeryGrid()
    nu_grid = np.linspace(nu_lo, nu_hi, samples)
    values = np.array([_band_value(nu, band, grid) for nu in nu_grid])
    return DispersiveCurveTable(
        band=band,
        nu_grid=nu_grid,
        values=values,
        second_differences=np.diff(values, 2),
    )


@dataclass(frozen=True)
class CriticalPointData:
    """Minimum of a band function: location, value, and curvature there."""

    band: int
    nu_c: float
    mu_c: float
    curvature: float

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "kind": "critical_point",
            "band": self.band,
            "nu_c": self.nu_c,
            "mu_c": self.mu_c,
            "curvature": self.curvature,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CriticalPointData":
        doc = json.loads(text)
        if doc.get("kind") != "critical_point" or doc.get("version") != 1:
            raise ValidationError("not a version-1 critical_point document")
        return cls(
            band=int(doc["band"]),
            nu_c=float(doc["nu_c"]),
            mu_c=float(doc["mu_c"]),
            curvature=float(doc["curvature"]),
        )


def band_second_derivative(
    nu: float, band: int, grid: MontgomeryGrid, step: float = _CURVATURE_STEP
) -> float:
    """5-point central second difference of the band function at `nu`."""
    f = [_band_value(nu + j * step, band, grid) for j in (-2, -1, 0, 1, 2)]
    return (-f[0] + 16.0 * f[1] - 30.0 * f[2] + 16.0 * f[3] - f[4]) / (12.0 * step**2)


def hellmann_feynman_derivative(
    nu: float, band: int, grid: Optional[MontgomeryGrid] = None
) -> float:
    """d(band value)/d(nu) via the first-order perturbation identity.

    Equals the eigenfunction moment of 2(nu - t^2/2).  Unlike a difference
    quotient of band values, this carries no stencil bias and almost no
    eigensolver noise, so it is the preferred way to evaluate the slope.
    """
    pair = montgomery_spectrum(nu, band, grid)[band - 1]
    return eigenfunction_moment(pair, [2.0 * nu, 0.0, -1.0])


def find_critical_point(
    band: int,
    bracket: tuple[float, float],
    grid: Optional[MontgomeryGrid] = None,
) -> CriticalPointData:
    """Locate the minimum of a band function inside `bracket`.

    Golden-section search narrows the bracket to width 1e-10; because band
    values carry about 1e-10 of eigensolver noise, the raw golden midpoint
    is only reliable to a few 1e-6 in nu.  Newton iteration on the
    first-order perturbation identity (see
    :func:`hellmann_feynman_derivative`), whose evaluations are smooth in
    nu, then pins the minimum to about 1e-10.  The result is verified
    against a 4th-order difference quotient of band values, and the stored
    curvature is a 5-point second difference at step 1e-3.

    Raises
    ------
    BracketError
        The numerical derivative does not change sign across the bracket.
    DegenerateMinimumError
        The curvature at the located minimum is not positive.
    """
    if grid is None:
        grid = MontgomeryGrid()
    lo, hi = (float(min(bracket)), float(max(bracket)))
    if not lo < hi:
        raise ValidationError("bracket must have positive width")

    def value(nu: float) -> float:
        return _band_value(nu, band, grid)

    def derivative(nu: float) -> float:
        return hellmann_feynman_derivative(nu, band, grid)

    if not (derivative(lo) < 0.0 < derivative(hi)):
        raise BracketError(
            "band %d derivative does not change sign on [%.6g, %.6g]"
            % (band, lo, hi)
        )

    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = value(x1), value(x2)
    while b - a > 1e-10:
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = value(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = value(x2)
    nu_c = 0.5 * (a + b)

    slope_scale = (derivative(nu_c + 1e-4) - derivative(nu_c - 1e-4)) / 2e-4
    if slope_scale <= 0.0:
        raise DegenerateMinimumError(
            "band %d slope is not increasing through the located minimum" % band
        )
    for _ in range(8):
        g0 = derivative(nu_c)
        if abs(g0) <= 1e-10:
            break
        nu_c = float(np.clip(nu_c - g0 / slope_scale, lo, hi))

    h = _DERIV_CHECK_STEP
    fd = (
        value(nu_c - 2 * h) - 8 * value(nu_c - h) + 8 * value(nu_c + h)
        - value(nu_c + 2 * h)
    ) / (12.0 * h)
    if abs(fd) > 1e-8:
        raise ValidationError(
            "difference-quotient derivative %.3e at located minimum exceeds 1e-8"
            % fd
        )
    curvature = band_second_derivative(nu_c, band, grid)
    if curvature <= 0.0:
        raise DegenerateMinimumError(
            "curvature %.3e at nu=%.8g is not positive" % (curvature, nu_c)
        )
    return CriticalPointData(
        band=band, nu_c=float(nu_c), mu_c=value(nu_c), curvature=float(curvature)
    )


_KNOWN_BRACKETS = {1: (0.0, 1.0), 2: (0.5, 2.0)}


@lru_cache(maxsize=8)
def critical_point_cached(band: int = 1) -> CriticalPointData:
    """Band minimum at default resolution, computed once per process.

    Only bands with a known safe bracket are supported; everything in the
    package that needs "the" well depth goes through band 1.
    """
    if band not in _KNOWN_BRACKETS:
        raise ValidationError(
            "no cached bracket for band %d; call find_critical_point directly"
            % band
        )
    return find_critical_point(band, _KNOWN_BRACKETS[band])


def scan_local_minima(
    band: int,
    nu_lo: float,
    nu_hi: float,
    samples: int = 121,
    grid: Optional[MontgomeryGrid] = None,
) -> list[CriticalPointData]:
    """All interior local minima of a band function over [nu_lo, nu_hi].

    Band 1 is known to have exactly one; intermediate bands are not, so
    callers get the full list and decide what multiplicity means for them.
    """
    if grid is None:
        grid = MontgomeryGrid()
    table = dispersive_curve(band, nu_lo, nu_hi, samples, grid)
    nu, val = table.nu_grid, table.values
    minima = []
    for i in range(1, len(val) - 1):
        if val[i] < val[i - 1] and val[i] < val[i + 1]:
            minima.append(
                find_critical_point(band, (nu[i - 1], nu[i + 1]), grid)
            )
    return minima


def eigenfunction_moment(
    pair: MontgomeryEigenpair,
    weight: Sequence[float],
    derivative_order: int = 0,
) -> float:
    """Quadrature of u * w(t) * (d/dt)^order u for a polynomial weight.

    `weight` lists polynomial coefficients in increasing degree (degree at
    most 6).  `derivative_order` 0 or 1 applies a centered difference to
    the right-hand factor.
    """
    coeffs = np.atleast_1d(np.asarray(weight, dtype=float))
    if coeffs.ndim != 1 or len(coeffs) > 7:
        raise ValidationError("weight must be polynomial coefficients, degree <= 6")
    if derivative_order not in (0, 1):
        raise ValidationError("derivative_order must be 0 or 1")
    t = pair.grid.nodes()
    u = pair.function
    right = u if derivative_order == 0 else np.gradient(u, t, edge_order=2)
    return float(np.trapezoid(u * npoly.polyval(t, coeffs) * right, t))


def eigenpair_nu_derivative(
    band: int,
    nu: float,
    step: float = 1e-3,
    grid: Optional[MontgomeryGrid] = None,
) -> np.ndarray:
    """Central-difference nu-derivative of the band-`band` eigenfunction.

    The two neighbor eigenfunctions are sign-aligned against the center one
    before differencing (the solver's sign anchor already agrees for the
    default step, but alignment keeps the contract independent of it).
    """
    if not 1e-5 <= step <= 1e-2:
        raise ValidationError("step must lie in [1e-5, 1e-2]")
    if grid is None:
        grid = MontgomeryGrid()
    center = montgomery_spectrum(nu, band, grid)[band - 1]
    t = grid.nodes()
    sides = []
    for sgn in (1.0, -1.0):
        pair = montgomery_spectrum(nu + sgn * step, band, grid)[band - 1]
        u = pair.function
        if np.trapezoid(u * center.function, t) < 0.0:
            u = -u
        sides.append(u)
    return (sides[0] - sides[1]) / (2.0 * step)
