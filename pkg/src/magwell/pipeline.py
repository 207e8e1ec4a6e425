"""Experiment orchestration: fiber data to 2D validation in one run.

A run walks the reduction end to end for every h in the config: fiber
critical points and dispersive tables, effective symbol grids, harmonic
predictions, Weyl quantizations (orders 0 and 1), Bohr-Sommerfeld
spectra, the direct 2D solve, and a window-and-rank comparison between
the two routes.  Every artifact is a JSON document persisted under a run
directory named by the config hash; the manifest records content hashes
and stage timings.  Numerical artifacts are byte-identical across reruns
of the same config; the manifest is not, because it carries timings.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .effective import (
    action_profile,
    bohr_sommerfeld_spectrum,
    effective_principal,
    effective_subprincipal,
    harmonic_prediction,
    quantize_1d,
)
from .errors import PipelineError, ValidationError
from .geometry import validate_assumptions
from .magnetic2d import TubeDiscretization, assemble_2d, solve_2d
from .montgomery import critical_point_cached, dispersive_curve
from .spectra import SpectrumResult, cluster_means


@dataclass(frozen=True)
class ComparisonReport:
    """Window-and-rank comparison of two spectra.

    Both lists are clustered with `cluster_tol` (multiplicity emulation:
    the 2D solve resolves momentum-reversal pairs that the 1D models
    collapse), the cluster means inside the window are paired in order,
    and the rank surrogate checks every interval with endpoints at
    cluster means +- cluster_tol in both directions, so the outcome is
    symmetric under swapping the lists.
    """

    window: tuple
    spectra: tuple
    pairing: tuple
    hausdorff_like: float
    rank_check: bool
    cluster_tol: float
    note: str = ""

    def to_json(self) -> str:
        payload = {
            "kind": "comparison_report",
            "version": 1,
            "window": list(self.window),
            "spectra": [
                {"tag": tag, "values": list(values)}
                for tag, values in self.spectra
            ],
            "pairing": [list(p) for p in self.pairing],
            "hausdorff_like": self.hausdorff_like,
            "rank_check": self.rank_check,
            "cluster_tol": self.cluster_tol,
            "note": self.note,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ComparisonReport":
        payload = json.loads(text)
        if payload.get("kind") != "comparison_report":
            raise ValidationError("not a comparison_report document")
        if payload.get("version") != 1:
            raise ValidationError("unsupported comparison_report version")
        return cls(
            window=tuple(payload["window"]),
            spectra=tuple(
                (entry["tag"], tuple(entry["values"]))
                for entry in payload["spectra"]
            ),
            pairing=tuple(tuple(p) for p in payload["pairing"]),
            hausdorff_like=payload["hausdorff_like"],
            rank_check=payload["rank_check"],
            cluster_tol=payload["cluster_tol"],
            note=payload["note"],
        )


def _count_in(values: np.ndarray, lo: float, hi: float) -> int:
    return int(
        np.searchsorted(values, hi, side="right")
        - np.searchsorted(values, lo, side="left")
    )


def _rank_surrogate(p: np.ndarray, q: np.ndarray, tol: float):
    """Check count(p in I) <= count(q in I inflated by tol) for every
    interval I with endpoints at p-values +- tol."""
    for i in range(p.size):
        for j in range(i, p.size):
            lo = p[i] - tol
            hi = p[j] + tol
            if _count_in(p, lo, hi) > _count_in(q, lo - tol, hi + tol):
                return False, (float(lo), float(hi))
    return True, None


def compare_spectra(
    a: SpectrumResult,
    b: SpectrumResult,
    window: tuple,
    cluster_tol: float = None,
) -> ComparisonReport:
    """Compare two eigenvalue lists inside a window.

    The default cluster tolerance is ten times the larger of the two
    solver tolerances; 2D-vs-1D comparisons should pass the momentum-pair
    splitting scale 0.25 h^(2/3) instead, which is what the pipeline does.
    Unequal cluster counts are a reported outcome (rank_check false), not
    an error.
    """
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValidationError("comparison window must be increasing")
    if cluster_tol is None:
        tol_a = float(a.metadata.get("tol", 1e-12))
        tol_b = float(b.metadata.get("tol", 1e-12))
        cluster_tol = 10.0 * max(tol_a, tol_b)
    if cluster_tol <= 0:
        raise ValidationError("cluster_tol must be positive")

    in_a = a.values[(a.values >= lo) & (a.values <= hi)]
    in_b = b.values[(b.values >= lo) & (b.values <= hi)]
    means_a = cluster_means(in_a, cluster_tol) if in_a.size else np.array([])
    means_b = cluster_means(in_b, cluster_tol) if in_b.size else np.array([])

    paired = min(means_a.size, means_b.size)
    pairing = tuple((i, i) for i in range(paired))
    hausdorff = float(
        np.max(np.abs(means_a[:paired] - means_b[:paired])) if paired else 0.0
    )

    note = ""
    if means_a.size != means_b.size:
        rank_check = False
        note = "interval [%.6g, %.6g] holds %d vs %d clusters" % (
            lo, hi, means_a.size, means_b.size,
        )
    else:
        rank_check, offending = _rank_surrogate(means_a, means_b, cluster_tol)
        if rank_check:
            rank_check, offending = _rank_surrogate(
                means_b, means_a, cluster_tol
            )
        if not rank_check:
            note = "rank surrogate fails on [%.6g, %.6g]" % offending

    return ComparisonReport(
        window=(lo, hi),
        spectra=(
            (a.method, tuple(float(v) for v in in_a)),
            (b.method, tuple(float(v) for v in in_b)),
        ),
        pairing=pairing,
        hausdorff_like=hausdorff,
        rank_check=bool(rank_check),
        cluster_tol=float(cluster_tol),
        note=note,
    )


class _StageFailure(Exception):
    """Internal: carries the stage name out of a per-h worker."""

    def __init__(self, stage_name: str, cause: Exception):
        super().__init__(str(cause))
        self.stage_name = stage_name
        self.cause = cause


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _h_tag(h: float) -> str:
    return "h_%g" % h


def run_pipeline(config: ExperimentConfig) -> dict:
    """Execute every stage of an experiment and persist the artifacts.

    Returns the manifest dictionary (also written to manifest.json in the
    run directory).  Per-h stages run concurrently in a small thread pool
    (the heavy solver calls release the GIL) and their artifacts are
    persisted in h order so reruns stay byte-identical.  Any stage failure
    is re-raised as PipelineError with the stage name after the partial
    manifest has been written; artifacts persisted before the failure stay
    on disk.
    """
    config.validate()
    model = config.model()
    assumptions = validate_assumptions(model)
    if not assumptions.all_passed:
        failed = [c.name for c in assumptions.checks if c.passed is False]
        raise ValidationError(
            "model %s fails assumption checks: %s"
            % (model.name, ", ".join(failed))
        )

    run_dir = Path(config.outputs_dir) / ("run_" + config.content_hash()[:12])
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "run_manifest",
        "version": 1,
        "config_hash": config.content_hash(),
        "model": model.name,
        "run_dir": str(run_dir),
        "status": "running",
        "stages": [],
        "artifacts": {},
        "comparisons": [],
    }

    def write_manifest():
        (run_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True)
        )

    def persist(rel: str, text: str, stage: str):
        path = run_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        manifest["artifacts"][rel] = {"sha256": _sha256(text), "stage": stage}

    def stage(name, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            manifest["status"] = "failed"
            manifest["failed_stage"] = name
            manifest["error"] = "%s: %s" % (type(exc).__name__, exc)
            write_manifest()
            raise PipelineError(
                "stage '%s' failed: %s" % (name, exc)
            ) from exc
        manifest["stages"].append(
            {"name": name, "seconds": round(time.perf_counter() - start, 3)}
        )
        return result

    persist("config.json", config.to_json(), "setup")
    persist("assumptions.json", assumptions.to_json(), "setup")
    e1, e2 = config.energy_window

    def fiber_stage():
        crit = critical_point_cached(1)
        persist("critical_band1.json", crit.to_json(), "fiber")
        x_probe = np.linspace(
            -config.x_half_width, config.x_half_width, 101
        )
        third = np.cbrt(np.asarray(model.field.delta(x_probe), dtype=float))
        nus = np.outer(config.xi_window, 1.0 / third)
        nu_lo = float(nus.min()) - 0.05
        nu_hi = float(nus.max()) + 0.05
        tables = {}
        for band in range(1, config.bands + 1):
            tables[band] = dispersive_curve(
                band, nu_lo, nu_hi, samples=config.curve_samples
            )
            persist(
                "table_band%d.json" % band, tables[band].to_json(), "fiber"
            )
        return crit, tables

    crit, tables = stage("fiber", fiber_stage)

    def effective_stage():
        x_grid = np.linspace(
            -config.x_half_width, config.x_half_width, config.x_points
        )
        xi_grid = np.linspace(
            config.xi_window[0], config.xi_window[1], config.xi_points
        )
        grids = []
        for band in range(1, config.bands + 1):
            grid = effective_principal(model, band, x_grid, xi_grid)
            if float(grid.principal.min()) > e2:
                break
            grids.append(effective_subprincipal(model, band, grid))
        if not grids:
            raise ValidationError(
                "no band symbol dips below the energy window top %.6g" % e2
            )
        return grids

    grids = stage("effective", effective_stage)

    prediction = stage(
        "harmonic",
        lambda: harmonic_prediction(
            model, crit, band=1, h_values=config.h_list
        ),
    )
    persist("harmonic.json", prediction.to_json(), "harmonic")

    profile = stage(
        "action",
        lambda: action_profile(
            grids[0], (e1, e2), samples=config.action_samples
        ),
    )
    persist("action_band1.json", profile.to_json(), "action")

    def compute_h(h: float) -> dict:
        """All per-h work; pure compute, artifacts returned not written."""
        tag = _h_tag(h)
        hbar = h ** (1.0 / 3.0)
        timings = []
        artifacts = []

        def timed(name, fn):
            start = time.perf_counter()
            try:
                result = fn()
            except Exception as exc:
                raise _StageFailure(name, exc) from exc
            timings.append(
                {"name": name, "seconds": round(time.perf_counter() - start, 3)}
            )
            return result

        def quantize_stage():
            results = {}
            for order in (0, 1):
                op = quantize_1d(
                    grids[0], order, hbar,
                    modes=config.modes, energy_window=(e1, e2),
                )
                values = op.eigenvalues()
                values = values[values <= e2]
                results[order] = SpectrumResult(
                    values=values,
                    h=h,
                    method="weyl_order%d" % order,
                    resolution=(config.modes,),
                    residual_norms=np.zeros_like(values),
                    metadata={
                        "model": model.name,
                        "band": 1,
                        "order": order,
                        "hbar": hbar,
                        "tol": 1e-12,
                    },
                )
            return results

        quantized = timed("quantize %s" % tag, quantize_stage)
        for order in (0, 1):
            artifacts.append((
                "%s/quantized_order%d.json" % (tag, order),
                quantized[order].to_json(),
                "quantize %s" % tag,
            ))
        for band, grid in enumerate(grids, start=1):
            artifacts.append((
                "%s/effective_band%d.json" % (tag, band),
                grid.to_json(),
                "effective",
            ))

        bohr = timed(
            "bohr %s" % tag,
            lambda: bohr_sommerfeld_spectrum(profile, hbar),
        )
        artifacts.append(("%s/bohr.json" % tag, bohr.to_json(),
                          "bohr %s" % tag))

        def direct_stage():
            disc = TubeDiscretization(
                h=h,
                x_half_width=config.tube_x_half_width,
                x_points=config.tube_x_points,
                t_half_width=config.tube_t_half_width,
                t_points=config.tube_t_points,
                energy_window_top=e2,
            )
            disc.validate_against(model)
            operator = assemble_2d(model, disc)
            return solve_2d(
                operator, config.count, tol=config.tol, method=config.method
            )

        direct = timed("direct2d %s" % tag, direct_stage)
        artifacts.append(("%s/direct2d.json" % tag, direct.to_json(),
                          "direct2d %s" % tag))

        comparison = timed(
            "compare %s" % tag,
            lambda: compare_spectra(
                direct,
                quantized[1],
                window=(e1, e2),
                cluster_tol=0.25 * h ** (2.0 / 3.0),
            ),
        )
        rel = "%s/comparison.json" % tag
        artifacts.append((rel, comparison.to_json(), "compare %s" % tag))
        return {"timings": timings, "artifacts": artifacts, "comparison": rel}

    # fan out over h; artifacts land in h order so reruns are byte-stable
    pool = ThreadPoolExecutor(max_workers=min(len(config.h_list), 3))
    try:
        futures = [pool.submit(compute_h, h) for h in config.h_list]
        for future in futures:
            try:
                result = future.result()
            except _StageFailure as failure:
                manifest["status"] = "failed"
                manifest["failed_stage"] = failure.stage_name
                manifest["error"] = "%s: %s" % (
                    type(failure.cause).__name__, failure.cause
                )
                write_manifest()
                raise PipelineError(
                    "stage '%s' failed: %s"
                    % (failure.stage_name, failure.cause)
                ) from failure.cause
            for rel, text, stage_name in result["artifacts"]:
                persist(rel, text, stage_name)
            manifest["stages"].extend(result["timings"])
            manifest["comparisons"].append(result["comparison"])
    finally:
        pool.shutdown(wait=True, cancel_futures=True)

    manifest["status"] = "complete"
    write_manifest()
    return manifest


def _load_manifest(manifest) -> tuple[dict, Path]:
    if isinstance(manifest, dict):
        return manifest, Path(manifest["run_dir"])
    path = Path(manifest)
    data = json.loads(path.read_text())
    if data.get("kind") != "run_manifest":
        raise ValidationError("not a run_manifest document")
    return data, path.parent


def _artifact(run_dir: Path, rel: str) -> dict:
    return json.loads((run_dir / rel).read_text())


def emit_report(manifest, emit_plots: bool = None) -> list:
    """Write CSV tables, a JSON summary, and optional SVG plots.

    `manifest` is the dictionary returned by run_pipeline or a path to a
    manifest.json.  Every number in the CSVs is read back from the JSON
    artifacts, so the tables cannot drift from the single source of
    truth.  Returns the list of written paths.
    """
    data, run_dir = _load_manifest(manifest)
    if data.get("status") != "complete":
        raise ValidationError(
            "manifest status is %r; only complete runs can be reported"
            % data.get("status")
        )
    config = json.loads((run_dir / "config.json").read_text())
    if emit_plots is None:
        emit_plots = bool(config["emit_plots"])
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)
    written = []

    def write(name: str, text: str):
        path = report_dir / name
        path.write_text(text)
        written.append(path)

    h_list = [float(h) for h in config["h_list"]]
    sources = ["direct2d", "quantized_order0", "quantized_order1", "bohr"]
    lines = ["h,source,index,value_rescaled,value_physical"]
    spectra = {}
    for h in h_list:
        tag = _h_tag(h)
        for source in sources:
            doc = _artifact(run_dir, "%s/%s.json" % (tag, source))
            spectra[(h, source)] = doc
            for index, value in enumerate(doc["values"]):
                lines.append(
                    "%r,%s,%d,%r,%r"
                    % (h, doc["method"], index, value,
                       value * h ** (4.0 / 3.0))
                )
    write("eigenvalues.csv", "\n".join(lines) + "\n")

    harmonic = _artifact(run_dir, "harmonic.json")
    pred_lines = ["h,level,lambda_paper,lambda_hessian"]
    for h_key in sorted(harmonic["lambda_table"], key=float, reverse=True):
        rows = harmonic["lambda_table"][h_key]
        for n, (lp, lh) in enumerate(
            zip(rows["c1_paper"], rows["c1_hessian"]), start=1
        ):
            pred_lines.append("%s,%d,%r,%r" % (h_key, n, lp, lh))
    write("predictions.csv", "\n".join(pred_lines) + "\n")

    # ground-level error against both coefficient candidates, rescaled
    mu_c = _artifact(run_dir, "critical_band1.json")["mu_c"]
    err_lines = [
        "h,lambda1_direct,prediction_paper,prediction_hessian,"
        "abs_err_paper,abs_err_hessian,winner"
    ]
    winner_errors = []
    summary_rows = {}
    for h in h_list:
        doc = spectra[(h, "direct2d")]
        values = np.asarray(doc["values"], dtype=float)
        means = cluster_means(values, 0.25 * h ** (2.0 / 3.0))
        lam1 = float(means[0]) if means.size else float("nan")
        hbar = h ** (1.0 / 3.0)
        preds = {
            name: _rescaled_ground(harmonic, mu_c, name, hbar)
            for name in ("c1_paper", "c1_hessian")
        }
        err = {name: abs(lam1 - preds[name]) for name in preds}
        winner = min(err, key=err.get)
        winner_errors.append(err[winner])
        err_lines.append(
            "%r,%r,%r,%r,%r,%r,%s"
            % (h, lam1, preds["c1_paper"], preds["c1_hessian"],
               err["c1_paper"], err["c1_hessian"], winner)
        )
        comparison = _artifact(run_dir, "%s/comparison.json" % _h_tag(h))
        summary_rows[repr(h)] = {
            "lambda1_direct": lam1,
            "winner": winner,
            "abs_err_paper": err["c1_paper"],
            "abs_err_hessian": err["c1_hessian"],
            "hausdorff_like": comparison["hausdorff_like"],
            "rank_check": comparison["rank_check"],
        }
    write("errors_vs_h.csv", "\n".join(err_lines) + "\n")

    finite = [
        (h, e) for h, e in zip(h_list, winner_errors)
        if np.isfinite(e) and e > 0
    ]
    slope = None
    if len(finite) >= 2:
        log_h = np.log([h for h, _ in finite])
        log_e = np.log([e for _, e in finite])
        slope = float(np.polyfit(log_h, log_e, 1)[0])
    hausdorff_values = [
        summary_rows[repr(h)]["hausdorff_like"] for h in h_list
    ]
    summary = {
        "kind": "run_summary",
        "version": 1,
        "config_hash": data["config_hash"],
        "model": data["model"],
        "h_list": h_list,
        "per_h": summary_rows,
        "overall_winner": summary_rows[repr(h_list[-1])]["winner"],
        "error_slope_vs_h": slope,
        "hausdorff_decreasing": bool(
            all(b < a for a, b in zip(hausdorff_values, hausdorff_values[1:]))
        ),
    }
    write("summary.json", json.dumps(summary, indent=2, sort_keys=True))

    if emit_plots:
        written.extend(
            _emit_plots(run_dir, report_dir, config, harmonic, mu_c)
        )
    return written


def _rescaled_ground(harmonic: dict, mu_c: float, name: str,
                     hbar: float) -> float:
    """Rescaled two-term ground prediction delta_c^(2/3)(mu_c + hbar c1)
    from a harmonic artifact dictionary."""
    return harmonic["delta_c"] ** (2.0 / 3.0) * (mu_c + hbar * harmonic[name])


def _emit_plots(run_dir: Path, report_dir: Path, config: dict,
                harmonic: dict, mu_c: float) -> list:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "magwell"
    import matplotlib.pyplot as plt

    written = []

    def save(fig, name: str):
        path = report_dir / name
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    for band in range(1, int(config["bands"]) + 1):
        rel = "table_band%d.json" % band
        if not (run_dir / rel).exists():
            break
        table = _artifact(run_dir, rel)
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.plot(table["nu_grid"], table["values"], marker="o",
                markersize=2.5, linewidth=1.0)
        ax.set_xlabel("nu")
        ax.set_ylabel("band %d value" % band)
        ax.set_title("dispersive curve, band %d" % band)
        fig.tight_layout()
        save(fig, "dispersive_band%d.svg" % band)

    h_list = [float(h) for h in config["h_list"]]
    first_tag = _h_tag(h_list[0])
    grid_doc = _artifact(run_dir, "%s/effective_band1.json" % first_tag)
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    mesh = ax.contourf(
        grid_doc["x_grid"], grid_doc["xi_grid"],
        np.asarray(grid_doc["principal"]).T, levels=24,
    )
    fig.colorbar(mesh, ax=ax, label="principal symbol")
    ax.set_xlabel("x")
    ax.set_ylabel("xi")
    ax.set_title("effective symbol, band 1")
    fig.tight_layout()
    save(fig, "symbol_band1.svg")

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    hbars = [h ** (1.0 / 3.0) for h in h_list]
    levels = {}
    for h in h_list:
        doc = _artifact(run_dir, "%s/direct2d.json" % _h_tag(h))
        values = np.asarray(doc["values"], dtype=float)
        means = cluster_means(values, 0.25 * h ** (2.0 / 3.0))
        for n, value in enumerate(means[:3]):
            levels.setdefault(n, []).append((h ** (1.0 / 3.0), value))
    for n, points in sorted(levels.items()):
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        ax.plot(xs, ys, marker="o", markersize=3, label="level %d" % (n + 1))
    for name, style in (("c1_paper", "--"), ("c1_hessian", ":")):
        dense = np.linspace(0.0, max(hbars), 50)
        ax.plot(
            dense,
            [_rescaled_ground(harmonic, mu_c, name, hb) for hb in dense],
            style, linewidth=1.0, label=name,
        )
    ax.set_xlabel("h^(1/3)")
    ax.set_ylabel("eigenvalue / h^(4/3)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    save(fig, "convergence.svg")
    return written
