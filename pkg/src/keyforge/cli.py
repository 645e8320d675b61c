"""Command-line front end: ``keyforge {asymptotic,finite,decoy,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 computation failure.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import asymptotic, decoy, finitekey, sdpcore
from .config import build_scenario, parse_document, validate, with_parameter
from .errors import ConfigValidation, KeyforgeError

log = logging.getLogger("keyforge")

HEADER = (
    "parameter",
    "method",
    "certified_lower_bound",
    "raw_rate",
    "clamped_rate",
    "certificate_residual",
    "iterations",
    "runtime_seconds",
    "status",
)
RESIDUAL_LIMIT = 1e-7
EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3


@dataclass
class ResultRow:
    parameter: Optional[float]
    method: str
    certified_lower_bound: Optional[float]
    raw_rate: Optional[float]
    clamped_rate: Optional[float]
    certificate_residual: Optional[float]
    iterations: Optional[int]
    runtime_seconds: Optional[float]
    status: str
    error: bool = False


def _row(parameter, method, bound, raw, clamped, residual, iterations, runtime, status="ok"):
    # a bound is only emitted when its certificate re-validates; a solver that
    # stopped early still yields a valid (looser) bound
    valid = residual is not None and residual <= RESIDUAL_LIMIT
    return ResultRow(
        parameter, method, bound if valid else None, raw, clamped, residual, iterations, runtime, status
    )


def _failure_row(parameter, method, exc, runtime):
    return ResultRow(parameter, method, None, None, None, None, None, runtime, type(exc).__name__, True)


# --- jobs ---------------------------------------------------------------------------


def _solver_options():
    return sdpcore.SolverOptions.from_env()


def _default_parameter(cfg):
    sc = cfg.scenario
    if sc is not None and sc.protocol == "bb84":
        return sc.qber
    return None


def _asymptotic_report(method, scenario, mcfg, opts):
    if method == "frank_wolfe":
        return asymptotic.fw_rate(scenario, mcfg.eps_stop, mcfg.max_iter, mcfg.eps_pert, opts)
    if method == "gauss_radau":
        return asymptotic.gr_rate(scenario, mcfg.m, opts, kappa=mcfg.kappa)
    return asymptotic.hmin_rate(scenario, opts)


def run_asymptotic(cfg, parameter=None):
    parameter = _default_parameter(cfg) if parameter is None else parameter
    opts = _solver_options()
    rows = []
    scenario = None
    for method in cfg.method.names:
        t0 = time.perf_counter()
        try:
            if scenario is None:
                scenario = build_scenario(cfg.scenario)
            rep = _asymptotic_report(method, scenario, cfg.method, opts)
        except KeyforgeError as exc:
            log.info("%s failed: %s", method, exc)
            rows.append(_failure_row(parameter, method, exc, time.perf_counter() - t0))
            continue
        rows.append(
            _row(parameter, method, rep.raw_rate, rep.raw_rate, rep.rate, rep.residual, rep.iterations, rep.runtime, rep.status)
        )
    return rows


def _error_rates(cfg):
    f, sc = cfg.finite, cfg.scenario
    q_z = f.q_z if f.q_z is not None else (sc.qber if sc is not None else None)
    q_x = f.q_x if f.q_x is not None else (sc.qber_x if sc is not None and sc.qber_x is not None else q_z)
    return q_x, q_z


def _finite_length(cfg, opts):
    """(method label, KeyLength, residual, iterations) for the configured framework."""
    f = cfg.finite
    params = finitekey.SecurityParams(f.eps_pa, f.eps_ir, f.eps_smooth)
    q_x, q_z = _error_rates(cfg)
    if f.framework == "eur":
        spec = finitekey.FiniteRunSpec(f.n, f.m_test, q_x, q_z, f.d_a, f.d)
        key, _ = finitekey.eur_bb84_key_length(spec, params, f.leak_mode, f.f_ec)
        return "eur", key, 0.0, 0
    residual, iterations = 0.0, 0
    if f.h is not None:
        h = f.h
    else:
        method = cfg.method.names[0]
        rep = _asymptotic_report(method, build_scenario(cfg.scenario), cfg.method, opts)
        h, residual, iterations = rep.bound, rep.residual, rep.iterations
    if q_z is None:
        raise KeyforgeError("the error-correction cost needs q_z or a bb84 scenario")
    leak = finitekey.leak_ir_bound(f.n, q_z, f.eps_smooth, f.eps_ir, f.leak_mode, f.f_ec)
    if f.framework == "postselection":
        hmin = finitekey.aep_correction(f.n, h, 0.0, math.log2(f.d_a), f.eps_smooth)
        key = finitekey.key_length_leftover(hmin, leak, f.eps_pa)
        lifted, _ = finitekey.postselection_lift(key.raw, params.eps_sec, f.n, f.d)
        key = finitekey.KeyLength(max(0, lifted), float(lifted))
        return "postselection", key, residual, iterations
    hmin = finitekey.eat_rate(f.n, h, f.d_a, f.grad_norm, f.eps_smooth, f.p_omega)
    return "eat", finitekey.key_length_leftover(hmin, leak, f.eps_pa), residual, iterations


def run_finite(cfg, parameter=None):
    parameter = _default_parameter(cfg) if parameter is None else parameter
    t0 = time.perf_counter()
    label = cfg.finite.framework
    try:
        label, key, residual, iterations = _finite_length(cfg, _solver_options())
    except KeyforgeError as exc:
        log.info("finite-key computation failed: %s", exc)
        return [_failure_row(parameter, label, exc, time.perf_counter() - t0)]
    n = cfg.finite.n
    return [
        _row(parameter, label, key.length / n, key.raw / n, key.length / n, residual, iterations, time.perf_counter() - t0)
    ]


def run_decoy(cfg, parameter=None):
    d = cfg.decoy
    parameter = d.intensities[0] if parameter is None else parameter
    t0 = time.perf_counter()
    try:
        model = decoy.DecoyModel(tuple(d.intensities), tuple(d.gains), tuple(d.error_gains), d.cutoff, d.y0_bounds)
        bounds = decoy.decoy_lp_bounds(model)
        rate = decoy.decoy_asymptotic_rate(model, d.q_x1_upper, d.q_z, d.f_ec)
    except KeyforgeError as exc:
        log.info("decoy computation failed: %s", exc)
        return [_failure_row(parameter, "decoy", exc, time.perf_counter() - t0)]
    residual = max(bounds.yield_lp.gap, bounds.error_lp.gap)
    return [_row(parameter, "decoy", rate, rate, max(0.0, rate), residual, 0, time.perf_counter() - t0)]


RUNNERS = {"asymptotic": run_asymptotic, "finite": run_finite, "decoy": run_decoy}


def _sweep_kind(cfg):
    if cfg.sweep.kind is not None:
        return cfg.sweep.kind
    head = cfg.sweep.parameter.split(".")[0]
    if head in ("finite", "decoy"):
        return head
    if cfg.finite is not None:
        return "finite"
    if cfg.decoy is not None and cfg.scenario is None:
        return "decoy"
    return "asymptotic"


def _point_job(args):
    kind, doc, value = args
    return RUNNERS[kind](validate(doc), value)


def sweep_points(cfg):
    s = cfg.sweep
    if s.steps == 1:
        return [float(s.start)]
    return [float(v) for v in np.linspace(s.start, s.stop, s.steps)]


def run_sweep(cfg, raw, jobs=1):
    """Every point is an independent job; rows come back in parameter order."""
    kind = _sweep_kind(cfg)
    base = dict(raw)
    base.pop("sweep")
    tasks = []
    for value in sweep_points(cfg):
        doc = with_parameter(base, cfg.sweep.parameter, value)
        validate(doc)
        tasks.append((kind, doc, value))
    if jobs <= 1 or len(tasks) <= 1:
        results = [_point_job(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_point_job, tasks))
    return [row for rows in results for row in rows]


# --- output -----------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def render_csv(rows, timing=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        rec = asdict(r)
        if not timing:
            rec["runtime_seconds"] = None
        w.writerow([_fmt(rec[k]) for k in HEADER])
    return buf.getvalue()


def render_json(rows, timing=False):
    recs = []
    for r in rows:
        rec = asdict(r)
        if not timing:
            rec["runtime_seconds"] = None
        recs.append({k: rec[k] for k in HEADER})
    return json.dumps(recs, indent=2) + "\n"


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


# --- entry point ------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="keyforge", description="Certified QKD key-rate bounds.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_text in (
        ("asymptotic", "asymptotic key rate for each configured method"),
        ("finite", "finite-size key length"),
        ("decoy", "decoy-state single-photon rate"),
        ("sweep", "run a parameter sweep"),
    ):
        s = sub.add_parser(verb, help=help_text)
        s.add_argument("--config", required=True, help="YAML or JSON configuration document")
        s.add_argument("--out", default="-", help="output path (default: stdout)")
        s.add_argument("--json", action="store_true", help="emit JSON records instead of CSV")
        s.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes for sweeps")
        s.add_argument("--verbose", action="store_true", help="log progress to stderr")
        s.add_argument(
            "--timing",
            action="store_true",
            help="record wall-clock runtimes (output is then no longer byte-reproducible)",
        )
    return p


REQUIRED = {"asymptotic": ("scenario",), "finite": ("finite",), "decoy": ("decoy",), "sweep": ("sweep",)}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with open(args.config) as fh:
            raw = parse_document(fh.read())
        cfg = validate(raw)
        missing = [(k, f"section required by '{args.verb}'") for k in REQUIRED[args.verb] if getattr(cfg, k) is None]
        if missing:
            raise ConfigValidation(missing)
        if args.verb == "sweep":
            rows = run_sweep(cfg, raw, max(1, args.jobs))
        else:
            rows = RUNNERS[args.verb](cfg)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigValidation as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    text = render_json(rows, args.timing) if args.json else render_csv(rows, args.timing)
    _emit(text, args.out)
    for r in rows:
        log.info("%s %s -> %s (%s)", r.parameter, r.method, r.clamped_rate, r.status)
    return EXIT_COMPUTE if any(r.error for r in rows) else EXIT_OK

