"""Declarative experiment configuration.

A config is a flat INI-style document with four typed sections.  Every
key is checked against the schema below and unknown sections or keys are
rejected outright, so a typo cannot silently fall back to a default.

Grammar (defaults in parentheses, * marks required keys)::

    [model]
    name = A | B | C | inline        *
    kind = A | B | C                 (required when name = inline)
    a = 1.0                          (inline factory parameters; any of
    c = 0.3                           a, c, k0, d0 may appear and are
    k0 = 0.2                          forwarded to the catalog factory)
    d0 = 1.5

    [discretization]
    h_list = 0.05, 0.02, 0.01        * strictly decreasing positives
    bands = 1                        (>= 1)
    energy_window = 0.59, 0.72       * rescaled units, below the
                                       essential-spectrum proxy
    x_half_width = 1.6               (symbol grid half width)
    x_points = 161
    xi_window = -0.55, 1.35
    xi_points = 191
    modes = 256                      (collocation modes, even, >= 16)
    action_samples = 33              (>= 5)
    curve_samples = 65               (dispersive table artifact, >= 9)
    tube_x_half_width = 3.0          (2D tube grid)
    tube_x_points = 301
    tube_t_half_width = 8.0
    tube_t_points = 121

    [solver]
    tol = 1e-8
    count = 6                        (2D eigenvalues per solve)
    method = shift_invert | lobpcg

    [outputs]
    directory = runs                 *
    emit_plots = false

The energy window must stay below the essential-spectrum proxy
delta_star^(2/3) mu_c by at least ``ENERGY_MARGIN`` so that every
computed level is separated from the continuum threshold.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .geometry import ModelCatalogEntry, model_from_parameters
from .montgomery import critical_point_cached

ENERGY_MARGIN = 0.05

_MODEL_KEYS = {"name", "kind", "a", "c", "k0", "d0"}
_DISCRETIZATION_KEYS = {
    "h_list",
    "bands",
    "energy_window",
    "x_half_width",
    "x_points",
    "xi_window",
    "xi_points",
    "modes",
    "action_samples",
    "curve_samples",
    "tube_x_half_width",
    "tube_x_points",
    "tube_t_half_width",
    "tube_t_points",
}
_SOLVER_KEYS = {"tol", "count", "method"}
_OUTPUT_KEYS = {"directory", "emit_plots"}
_SECTIONS = {
    "model": _MODEL_KEYS,
    "discretization": _DISCRETIZATION_KEYS,
    "solver": _SOLVER_KEYS,
    "outputs": _OUTPUT_KEYS,
}


def _floats(text: str, key: str) -> tuple:
    parts = [p for chunk in text.split(",") for p in chunk.split()]
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError("%s: %s" % (key, exc)) from exc


def _float(text: str, key: str) -> float:
    values = _floats(text, key)
    if len(values) != 1:
        raise ConfigError("%s must be a single number" % key)
    return values[0]


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError("%s: %s" % (key, exc)) from exc


def _pair(text: str, key: str) -> tuple:
    values = _floats(text, key)
    if len(values) != 2:
        raise ConfigError("%s must be two comma-separated numbers" % key)
    return values


def _bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError("%s must be a boolean, got %r" % (key, text))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see the module docstring."""

    model_name: str
    model_parameters: dict
    h_list: tuple
    bands: int
    energy_window: tuple
    x_half_width: float
    x_points: int
    xi_window: tuple
    xi_points: int
    modes: int
    action_samples: int
    curve_samples: int
    tube_x_half_width: float
    tube_x_points: int
    tube_t_half_width: float
    tube_t_points: int
    tol: float
    count: int
    method: str
    outputs_dir: str
    emit_plots: bool

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(
            interpolation=None, inline_comment_prefixes=("#", ";")
        )
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc

        unknown_sections = set(parser.sections()) - set(_SECTIONS)
        if unknown_sections:
            raise ConfigError(
                "unknown sections: %s" % ", ".join(sorted(unknown_sections))
            )
        for section, allowed in _SECTIONS.items():
            if not parser.has_section(section):
                continue
            unknown = set(parser.options(section)) - allowed
            if unknown:
                raise ConfigError(
                    "unknown keys in [%s]: %s"
                    % (section, ", ".join(sorted(unknown)))
                )

        def need(section: str, key: str) -> str:
            if not parser.has_option(section, key):
                raise ConfigError("missing required key [%s] %s" % (section, key))
            return parser.get(section, key)

        def opt(section: str, key: str, fallback: str) -> str:
            if parser.has_option(section, key):
                return parser.get(section, key)
            return fallback

        name = need("model", "name").strip()
        parameters = {}
        if name == "inline":
            name = need("model", "kind").strip()
            for key in ("a", "c", "k0", "d0"):
                if parser.has_option("model", key):
                    parameters[key] = _float(parser.get("model", key), key)
        elif parser.has_section("model"):
            extras = set(parser.options("model")) - {"name"}
            if extras:
                raise ConfigError(
                    "inline parameters %s require name = inline"
                    % ", ".join(sorted(extras))
                )

        return cls(
            model_name=name,
            model_parameters=parameters,
            h_list=_floats(need("discretization", "h_list"), "h_list"),
            bands=_int(opt("discretization", "bands", "1"), "bands"),
            energy_window=_pair(
                need("discretization", "energy_window"), "energy_window"
            ),
            x_half_width=_float(
                opt("discretization", "x_half_width", "1.6"), "x_half_width"
            ),
            x_points=_int(opt("discretization", "x_points", "161"), "x_points"),
            xi_window=_pair(
                opt("discretization", "xi_window", "-0.55, 1.35"), "xi_window"
            ),
            xi_points=_int(
                opt("discretization", "xi_points", "191"), "xi_points"
            ),
            modes=_int(opt("discretization", "modes", "256"), "modes"),
            action_samples=_int(
                opt("discretization", "action_samples", "33"), "action_samples"
            ),
            curve_samples=_int(
                opt("discretization", "curve_samples", "65"), "curve_samples"
            ),
            tube_x_half_width=_float(
                opt("discretization", "tube_x_half_width", "3.0"),
                "tube_x_half_width",
            ),
            tube_x_points=_int(
                opt("discretization", "tube_x_points", "301"), "tube_x_points"
            ),
            tube_t_half_width=_float(
                opt("discretization", "tube_t_half_width", "8.0"),
                "tube_t_half_width",
            ),
            tube_t_points=_int(
                opt("discretization", "tube_t_points", "121"), "tube_t_points"
            ),
            tol=_float(opt("solver", "tol", "1e-8"), "tol"),
            count=_int(opt("solver", "count", "6"), "count"),
            method=opt("solver", "method", "shift_invert").strip(),
            outputs_dir=need("outputs", "directory").strip(),
            emit_plots=_bool(opt("outputs", "emit_plots", "false"), "emit_plots"),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def model(self) -> ModelCatalogEntry:
        try:
            return model_from_parameters(self.model_name, self.model_parameters)
        except TypeError as exc:
            raise ConfigError(
                "model %s does not accept these parameters: %s"
                % (self.model_name, exc)
            ) from exc

    def validate(self) -> None:
        """Semantic checks beyond parsing; raises ConfigError."""
        if not self.h_list:
            raise ConfigError("h_list is empty")
        if any(h <= 0 for h in self.h_list):
            raise ConfigError("h_list entries must be positive")
        if any(nxt >= prev for prev, nxt in zip(self.h_list, self.h_list[1:])):
            raise ConfigError("h_list must be strictly decreasing")
        if self.bands < 1:
            raise ConfigError("bands must be at least 1")
        e1, e2 = self.energy_window
        if not e1 < e2:
            raise ConfigError("energy_window must be increasing")
        model = self.model()
        ceiling = (
            model.field.delta_star ** (2.0 / 3.0)
            * critical_point_cached(1).mu_c
        )
        if e2 >= ceiling - ENERGY_MARGIN:
            raise ConfigError(
                "energy window top %.6g is not below the essential-spectrum "
                "proxy %.6g minus the %.2g margin" % (e2, ceiling, ENERGY_MARGIN)
            )
        if self.xi_window[0] >= self.xi_window[1]:
            raise ConfigError("xi_window must be increasing")
        for key in (
            "x_half_width",
            "tube_x_half_width",
            "tube_t_half_width",
            "tol",
        ):
            if getattr(self, key) <= 0:
                raise ConfigError("%s must be positive" % key)
        for key in ("x_points", "xi_points", "tube_x_points", "tube_t_points"):
            if getattr(self, key) < 9:
                raise ConfigError("%s must be at least 9" % key)
        if self.modes < 16 or self.modes % 2:
            raise ConfigError("modes must be an even integer of at least 16")
        if self.action_samples < 5:
            raise ConfigError("action_samples must be at least 5")
        if self.curve_samples < 9:
            raise ConfigError("curve_samples must be at least 9")
        if self.count < 1:
            raise ConfigError("count must be at least 1")
        if self.method not in ("shift_invert", "lobpcg"):
            raise ConfigError("method must be shift_invert or lobpcg")

    def to_json(self) -> str:
        payload = {
            "kind": "experiment_config",
            "version": 1,
            "model_name": self.model_name,
            "model_parameters": self.model_parameters,
            "h_list": list(self.h_list),
            "bands": self.bands,
            "energy_window": list(self.energy_window),
            "x_half_width": self.x_half_width,
            "x_points": self.x_points,
            "xi_window": list(self.xi_window),
            "xi_points": self.xi_points,
            "modes": self.modes,
            "action_samples": self.action_samples,
            "curve_samples": self.curve_samples,
            "tube_x_half_width": self.tube_x_half_width,
            "tube_x_points": self.tube_x_points,
            "tube_t_half_width": self.tube_t_half_width,
            "tube_t_points": self.tube_t_points,
            "tol": self.tol,
            "count": self.count,
            "method": self.method,
            "outputs_dir": self.outputs_dir,
            "emit_plots": self.emit_plots,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()
