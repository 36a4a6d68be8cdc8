"""Seeded experiment pipeline and the ``mrxcs`` command line.

Verbs: ``run``, ``sweep``, ``leadfield``, ``spectrum``, ``lcurve``.
Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .analysis import evaluate, l_curve, singular_spectrum
from .config import ConfigError, ExperimentConfig, load_config
from .model import (GeometryError, LeadField, MeasurementSet, SingularityError,
                    assemble_lead_field, build_geometry, simulate_data)
from .phantom import make_phantom
from .sensing import compose_operator, compress_data, make_activation
from .solvers import (SolverError, douglas_rachford_solve, forward_backward_solve,
                      quadratic_tikhonov)

log = logging.getLogger("mrxcs")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL_ERRORS = (ArithmeticError, np.linalg.LinAlgError, FloatingPointError)


# ---------------------------------------------------------------------------
# stages

def _default_cache_dir() -> Path:
    return Path(os.environ.get("MRXCS_CACHE", Path.home() / ".cache" / "mrxcs"))


def load_lead_field(cfg: ExperimentConfig, use_cache: bool = True) -> tuple[LeadField, bool]:
    """Assemble the lead field, or load it from the cache keyed by the geometry digest."""
    geometry = build_geometry(cfg.geometry)
    cache = Path(cfg.cache_dir) if cfg.cache_dir else _default_cache_dir()
    path = cache / f"leadfield-{cfg.geometry.digest()}.npz"
    if use_cache and path.exists():
        with np.load(path) as z:
            lead = LeadField(z["matrix"], float(z["scale"]), geometry.n_coils,
                             geometry.n_sensors, geometry.grid)
        return lead, True
    lead = assemble_lead_field(geometry)
    if use_cache:
        cache.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, matrix=lead.matrix, scale=lead.scale)
        os.replace(tmp, path)
    return lead, False


@dataclass
class Problem:
    """Operator and normalized data ready for a solver, plus what produced them."""

    operator: np.ndarray
    data: np.ndarray
    measured: MeasurementSet
    activation: object = None
    m: int | None = None
    scheme: str = "full"


def build_problem(cfg: ExperimentConfig, lead: LeadField, full: MeasurementSet,
                  scheme: str | None = None, m: int | None = None) -> Problem:
    scheme = scheme or cfg.sensing.scheme
    if m is None:
        return Problem(lead.matrix, full.values, full, None, None, "full")
    act = make_activation(scheme, m, lead.n_coils, cfg.stage_seed("activation"))
    if cfg.sensing.noise_placement == "compressed":
        clean = MeasurementSet(lead.matrix @ _phantom_values(cfg, lead), lead.n_sensors)
        measured = compress_data(clean, act, cfg.snr_db, cfg.stage_seed("compressed_noise"))
    else:
        measured = compress_data(full, act)
    op = compose_operator(lead, act)
    return Problem(op.matrix, op.normalize_data(measured), measured, act, m, scheme)


def _phantom_values(cfg: ExperimentConfig, lead: LeadField) -> np.ndarray:
    return make_phantom(cfg.phantom, lead.grid).values


def simulate_full(cfg: ExperimentConfig, lead: LeadField, phantom) -> MeasurementSet:
    snr = cfg.snr_db
    if cfg.sensing.m is not None and cfg.sensing.noise_placement == "compressed":
        snr = math.inf
    return simulate_data(lead, phantom, snr, cfg.stage_seed("noise"))


def solve(cfg: ExperimentConfig, problem: Problem, method: str, shape):
    """Run one reconstruction; returns (values, ReconResult or None)."""
    if method == "tikhonov":
        x = quadratic_tikhonov(problem.operator, problem.data, cfg.solver.tikhonov_mu)
        return x, None
    solver = douglas_rachford_solve if method == "douglas_rachford" else forward_backward_solve
    res = solver(problem.operator, problem.data, cfg.solver.params, shape=shape)
    return res.values, res


# ---------------------------------------------------------------------------
# artifact staging

class Staging:
    """Write artifacts into a scratch directory, then publish them atomically-ish."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out.name}-", dir=self.out.parent))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.tmp / name

    def hashes(self) -> dict:
        return {name: io.sha256_file(self.tmp / name) for name in sorted(self.files)}

    def publish(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for name in os.listdir(self.tmp):
            os.replace(self.tmp / name, self.out / name)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _manifest(cfg: ExperimentConfig, stage: Staging, kind: str, extra=None) -> dict:
    # locations are left out so a manifest does not depend on where it was written
    echo = {k: v for k, v in cfg.to_dict().items() if k not in ("output_dir", "cache_dir")}
    man = {
        "toolkit": "mrxcs",
        "version": __version__,
        "kind": kind,
        "config": echo,
        "geometry_digest": cfg.geometry.digest(),
        "seeds": {"master": cfg.seed, "noise": cfg.stage_seed("noise"),
                  "activation": cfg.stage_seed("activation"),
                  "compressed_noise": cfg.stage_seed("compressed_noise")},
        "artifacts": stage.hashes(),
    }
    if extra:
        man.update(extra)
    return man


def _finish(cfg, stage: Staging, kind: str, timings: dict, extra=None) -> dict:
    man = _manifest(cfg, stage, kind, extra)
    io.write_json(stage.tmp / "manifest.json", man)
    # wall times vary run to run, so they stay out of the manifest
    io.write_json(stage.tmp / "timings.json", {k: round(v, 6) for k, v in timings.items()})
    stage.publish()
    return man


def _metrics_row(rep) -> list:
    return [rep.phantom, rep.method, rep.scheme, rep.m, rep.relative_rmse, rep.snr_db, rep.pearson]


METRIC_HEADER = ["phantom", "method", "scheme", "m", "relative_rmse", "snr_db", "pearson"]


# ---------------------------------------------------------------------------
# experiments

def run_experiment(cfg: ExperimentConfig) -> dict:
    """Full pipeline for one configuration; returns the manifest."""
    timings = {}
    t = time.perf_counter()
    lead, hit = load_lead_field(cfg)
    timings["lead_field"] = time.perf_counter() - t
    log.info("lead field %s (%s)", lead.matrix.shape, "cache hit" if hit else "assembled")

    stage = Staging(cfg.output_dir)
    try:
        grid = lead.grid
        phantom = make_phantom(cfg.phantom, grid)
        t = time.perf_counter()
        full = simulate_full(cfg, lead, phantom)
        problem = build_problem(cfg, lead, full, cfg.sensing.scheme, cfg.sensing.m)
        timings["simulate"] = time.perf_counter() - t

        t = time.perf_counter()
        recon, res = solve(cfg, problem, cfg.solver.method, grid.shape)
        timings["reconstruct"] = time.perf_counter() - t
        report = evaluate(phantom, recon, cfg.phantom, cfg.solver.method,
                          problem.m if problem.m is not None else lead.n_coils, problem.scheme)
        log.info("rmse %.4f  snr %.2f dB  pearson %s", report.relative_rmse, report.snr_db,
                 report.pearson)

        io.write_pgm(stage.path("phantom.pgm"), phantom.as_image(), phantom.n_max)
        io.write_vector_csv(stage.path("phantom.csv"), phantom.values)
        io.write_vector_csv(stage.path("data.csv"), problem.measured.values)
        if problem.activation is not None:
            io.write_matrix_csv(stage.path("activation.csv"), problem.activation.matrix)
        n_max = cfg.solver.params.n_max
        io.write_pgm(stage.path("recon.pgm"), recon.reshape(grid.shape), n_max)
        io.write_vector_csv(stage.path("recon.csv"), recon)
        trace_rows = [] if res is None else [
            [r.iteration, r.objective, r.rel_change, r.infeasibility, r.infeasibility_n]
            for r in res.trace]
        io.write_rows_csv(stage.path("trace.csv"),
                          ["iteration", "objective", "rel_change", "infeasibility", "infeasibility_n"],
                          trace_rows)
        io.write_rows_csv(stage.path("metrics.csv"), METRIC_HEADER, [_metrics_row(report)])
        io.write_json(stage.path("metrics.json"), {**report.to_dict(),
                                                   "iterations": 0 if res is None else res.iterations})
        return _finish(cfg, stage, "run", timings)
    except BaseException:
        stage.discard()
        raise


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """One metrics row per (scheme, m, method); failing points are flagged, not fatal."""
    sw = cfg.sweep
    if sw is None or not sw.m_values:
        raise ConfigError("sweep needs a nonempty sweep.m_values list")
    schemes = sw.schemes or (cfg.sensing.scheme,)
    methods = sw.methods or (cfg.solver.method,)
    timings = {}
    t = time.perf_counter()
    lead, _ = load_lead_field(cfg)
    timings["lead_field"] = time.perf_counter() - t
    grid = lead.grid
    phantom = make_phantom(cfg.phantom, grid)
    full = simulate_full(cfg, lead, phantom)

    rows = []
    stage = Staging(cfg.output_dir)
    try:
        t = time.perf_counter()
        for scheme in schemes:
            for m in sw.m_values:
                for method in methods:
                    row = {"phantom": cfg.phantom, "scheme": scheme, "m": m, "method": method,
                           "relative_rmse": None, "snr_db": None, "pearson": None,
                           "status": "ok", "error": ""}
                    try:
                        problem = build_problem(cfg, lead, full, scheme, m)
                        recon, _ = solve(cfg, problem, method, grid.shape)
                        rep = evaluate(phantom, recon)
                        row.update(relative_rmse=rep.relative_rmse, snr_db=rep.snr_db,
                                   pearson=rep.pearson)
                    except (ValueError, *NUMERICAL_ERRORS) as exc:
                        row.update(status="failed", error=str(exc))
                        log.warning("sweep point scheme=%s m=%s method=%s failed: %s",
                                    scheme, m, method, exc)
                    rows.append(row)
                    log.info("%s m=%d %s rmse=%s", scheme, m, method, row["relative_rmse"])
        timings["sweep"] = time.perf_counter() - t
        header = list(rows[0]) if rows else []
        io.write_rows_csv(stage.path("sweep.csv"), header, [list(r.values()) for r in rows])
        io.write_pgm(stage.path("phantom.pgm"), phantom.as_image(), phantom.n_max)
        _finish(cfg, stage, "sweep", timings)
        return rows
    except BaseException:
        stage.discard()
        raise


def run_leadfield(cfg: ExperimentConfig, export_csv: bool = False) -> dict:
    t = time.perf_counter()
    lead, hit = load_lead_field(cfg)
    stage = Staging(cfg.output_dir)
    try:
        info = {"shape": list(lead.matrix.shape), "scale": lead.scale, "cache_hit": hit,
                "n_coils": lead.n_coils, "n_sensors": lead.n_sensors}
        io.write_json(stage.path("leadfield.json"), {k: v for k, v in info.items() if k != "cache_hit"})
        if export_csv:
            io.write_matrix_csv(stage.path("leadfield.csv"), lead.matrix)
        return _finish(cfg, stage, "leadfield", {"lead_field": time.perf_counter() - t})
    except BaseException:
        stage.discard()
        raise


def run_spectrum(cfg: ExperimentConfig) -> np.ndarray:
    t = time.perf_counter()
    lead, _ = load_lead_field(cfg)
    sv = singular_spectrum(lead.matrix)
    stage = Staging(cfg.output_dir)
    try:
        io.write_rows_csv(stage.path("spectrum.csv"), ["index", "sigma"],
                          [[i, float(s)] for i, s in enumerate(sv)])
        _finish(cfg, stage, "spectrum", {"spectrum": time.perf_counter() - t},
                {"condition_number": float(sv[0] / sv[-1]) if sv[-1] > 0 else "inf"})
        return sv
    except BaseException:
        stage.discard()
        raise


DEFAULT_MU_GRID = tuple(10.0 ** e for e in range(-16, -5))


def run_lcurve(cfg: ExperimentConfig):
    """Tikhonov L-curve on full data for the configured phantom."""
    t = time.perf_counter()
    lead, _ = load_lead_field(cfg)
    phantom = make_phantom(cfg.phantom, lead.grid)
    full = simulate_data(lead, phantom, cfg.snr_db, cfg.stage_seed("noise"))
    grid_mu = (cfg.sweep.mu_grid if cfg.sweep and cfg.sweep.mu_grid else DEFAULT_MU_GRID)
    points = l_curve(lead.matrix, full.values, grid_mu)
    stage = Staging(cfg.output_dir)
    try:
        io.write_rows_csv(stage.path("lcurve.csv"),
                          ["mu", "log_residual", "log_solution_norm", "status"],
                          [[p.mu, p.log_residual, p.log_solution_norm, "ok" if p.ok else "failed"]
                           for p in points])
        _finish(cfg, stage, "lcurve", {"lcurve": time.perf_counter() - t})
        return points
    except BaseException:
        stage.discard()
        raise


# ---------------------------------------------------------------------------
# command line

def _error_record(kind: str, exc: BaseException) -> str:
    return json.dumps({"status": "error", "kind": kind, "type": type(exc).__name__,
                       "message": str(exc)})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrxcs", description="CS magnetorelaxometry toolkit")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in [("run", "simulate and reconstruct one configuration"),
                       ("sweep", "activation-count sweep (sweep.m_values)"),
                       ("leadfield", "assemble and cache the lead field"),
                       ("spectrum", "singular values of the full lead field"),
                       ("lcurve", "Tikhonov L-curve on full data")]:
        p = sub.add_parser(verb, help=text)
        p.add_argument("config", help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides seed)")
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
        if verb == "leadfield":
            p.add_argument("--csv", action="store_true", help="also export the matrix as CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg = cfg.with_output(args.out)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg = cfg.with_seed(args.seed)
        if args.verb == "sweep" and (cfg.sweep is None or not cfg.sweep.m_values):
            raise ConfigError("sweep needs a nonempty sweep.m_values list")
        if args.verb in ("run", "sweep"):
            make_phantom(cfg.phantom, build_geometry(cfg.geometry).grid)
    except (ConfigError, GeometryError, ValueError, OSError) as exc:
        print(_error_record("validation", exc), file=sys.stderr)
        return EXIT_VALIDATION

    try:
        if args.verb == "run":
            run_experiment(cfg)
        elif args.verb == "sweep":
            run_sweep(cfg)
        elif args.verb == "leadfield":
            run_leadfield(cfg, args.csv)
        elif args.verb == "spectrum":
            run_spectrum(cfg)
        else:
            run_lcurve(cfg)
    except (SolverError, SingularityError, *NUMERICAL_ERRORS) as exc:
        print(_error_record("numerical", exc), file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as exc:
        print(_error_record("validation", exc), file=sys.stderr)
        return EXIT_VALIDATION
    if not args.quiet:
        print(json.dumps({"status": "ok", "verb": args.verb, "output_dir": cfg.output_dir}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
