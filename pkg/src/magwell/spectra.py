"""Spectrum containers with provenance, serialization, and clustering.

Any real symmetric discretization of the magnetic operator commutes with
complex conjugation, so every well-localized level shows up as a pair of
nearly degenerate eigenvalues (momentum-reversed partners) whose splitting
shrinks far faster than the physical gaps.  Physical levels are therefore
cluster representatives, and :func:`cluster_eigenvalues` is the one place
that grouping happens.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SpectrumResult:
    """Sorted eigenvalues of one solve, with enough provenance to rerun it.

    `values` are eigenvalues of the rescaled operator (energies divided by
    h^(4/3)); `physical_values` undoes the rescaling.  `resolution` is
    (x_points, t_points) for 2D solves and a 1D point count otherwise.
    """

    values: np.ndarray
    h: float
    method: str
    resolution: tuple
    residual_norms: np.ndarray
    metadata: dict = field(default_factory=dict)
    eigenvectors: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValidationError("values must be a 1D array")
        if np.any(np.diff(vals) < 0):
            raise ValidationError("values must be sorted ascending")
        res = np.asarray(self.residual_norms, dtype=float)
        if res.shape != vals.shape:
            raise ValidationError("one residual per eigenvalue required")
        if not (self.h > 0):
            raise ValidationError("h must be positive")

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def physical_values(self) -> np.ndarray:
        return self.values * self.h ** (4.0 / 3.0)

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "kind": "spectrum_result",
            "h": self.h,
            "method": self.method,
            "resolution": list(self.resolution),
            "values": [float(v) for v in self.values],
            "residual_norms": [float(r) for r in self.residual_norms],
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SpectrumResult":
        doc = json.loads(text)
        if doc.get("kind") != "spectrum_result" or doc.get("version") != 1:
            raise ValidationError("not a version-1 spectrum_result document")
        return cls(
            values=np.asarray(doc["values"], dtype=float),
            h=float(doc["h"]),
            method=str(doc["method"]),
            resolution=tuple(doc["resolution"]),
            residual_norms=np.asarray(doc["residual_norms"], dtype=float),
            metadata=dict(doc.get("metadata", {})),
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("index,eigenvalue_rescaled,eigenvalue_physical,residual\n")
        physical = self.physical_values
        for i, (v, p, r) in enumerate(
            zip(self.values, physical, self.residual_norms)
        ):
            out.write("%d,%r,%r,%r\n" % (i, float(v), float(p), float(r)))
        return out.getvalue()


def cluster_eigenvalues(values: np.ndarray, tol: float) -> list[np.ndarray]:
    """Group sorted eigenvalues whose consecutive gaps are at most `tol`.

    Returns the clusters in ascending order; each physical level of a
    doubled spectrum is one cluster, and its representative value is the
    cluster mean.
    """
    vals = np.sort(np.asarray(values, dtype=float))
    if tol < 0:
        raise ValidationError("cluster tolerance must be nonnegative")
    if len(vals) == 0:
        return []
    splits = np.where(np.diff(vals) > tol)[0] + 1
    return [np.asarray(c) for c in np.split(vals, splits)]


def cluster_means(values: np.ndarray, tol: float) -> np.ndarray:
    """Representative (mean) value of each cluster."""
    return np.array([float(np.mean(c)) for c in cluster_eigenvalues(values, tol)])
