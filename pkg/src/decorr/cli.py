"""Command-line experiment driver.

Each subcommand writes ``<out>/<subcommand>/summary.json`` (resolved
config, timestamp, estimates, assertion outcomes) and ``results.csv``
(one row per ladder point or trial; no timestamps, so the file is
byte-identical for the same config and seed on any worker count).

Exit status: 0 when every assertion passes, 1 when one fails (its name is
printed), 2 for invalid configuration or a missing file.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import checks, montecarlo, pointprocess
from .config import ConfigError, ExperimentConfig
from .eigstats import jacobian_threshold
from .model_builder import ModelError, alloy_parameters, build_hamiltonian, sample_disorder
from .montecarlo import RegimeError
from .spectral import EnergyWindow, eigendecompose, localization_diagnostics

log = logging.getLogger("decorr")

Outcome = tuple[list[dict], dict, dict[str, bool]]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(rows[0].keys())
        for row in rows:
            writer.writerow(_fmt(v) for v in row.values())
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _fit_dict(fit) -> dict | None:
    if fit is None:
        return None
    return {"slope": fit.slope, "stderr": fit.stderr, "intercept": fit.intercept, "used": fit.used}


def _prob_cols(prefix: str, est) -> dict:
    lo, hi = est.interval
    return {prefix: est.point, f"{prefix}_lo": lo, f"{prefix}_hi": hi, f"{prefix}_successes": est.successes}


def _windows(cfg: ExperimentConfig, L: float):
    return EnergyWindow.scaled(cfg.E, cfg.I, L, cfg.d), EnergyWindow.scaled(cfg.Eprime, cfg.J, L, cfg.d)


def cmd_spectrum(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    box = model.box_for(cfg.d, cfg.L)
    omega = sample_disorder(dist, box, model, cfg.seed, 0)
    spec = eigendecompose(build_hamiltonian(box, model, omega))
    prof = localization_diagnostics(spec, box)
    rows = [
        {
            "index": p.index,
            "eigenvalue": spec.eigenvalues[p.index],
            "center": " ".join(map(str, p.center)),
            "max_amplitude": p.max_amplitude,
            "decay_rate": p.decay_rate,
        }
        for p in prof
    ]
    summary = {"order": spec.order, "min": spec.eigenvalues[0], "max": spec.eigenvalues[-1]}
    return rows, summary, {}


def cmd_wegner(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    res = montecarlo.wegner_scan(model, dist, cfg.d, cfg.E, tuple(cfg.I), cfg.ladder, cfg.L, cfg.trials, cfg.seed, cfg.workers)
    rows = [{"ell": p.size, **_prob_cols("p", p.estimate), "trials": p.estimate.trials} for p in res.points]
    ok = {}
    if res.fit is not None:
        ok["wegner slope within d +- 0.3"] = res.fit.within(res.expected, 0.3)
    return rows, {"fit": _fit_dict(res.fit), "expected_slope": res.expected}, ok


def cmd_minami(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    res = montecarlo.minami_scan(model, dist, cfg.d, cfg.E, tuple(cfg.I), cfg.ladder, cfg.L, cfg.trials, cfg.seed, cfg.workers)
    rows = [
        {
            "ell": ell,
            "ell_over_L": p.size,
            **_prob_cols("p_exceed", p.estimate),
            "statistic": p.statistic.mean,
            "statistic_stderr": p.statistic.stderr,
            "trials": p.estimate.trials,
        }
        for ell, p in zip(cfg.ladder, res.points)
    ]
    ok = {}
    if res.rank == 1 and res.prob_fit is not None:
        ok["minami slope within 2d +- 0.5"] = res.prob_fit.within(res.expected, 0.5)
    if res.rank > 1 and res.stat_fit is not None:
        ok["extended minami slope within 2d +- 0.6"] = res.stat_fit.within(res.expected, 0.6)
    summary = {"rank": res.rank, "prob_fit": _fit_dict(res.prob_fit), "stat_fit": _fit_dict(res.stat_fit), "expected_slope": res.expected}
    return rows, summary, ok


def cmd_decorrelate(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    res = montecarlo.decorrelation_scan(
        model, dist, cfg.d, cfg.E, cfg.Eprime, tuple(cfg.I), tuple(cfg.J), cfg.alpha, cfg.ladder,
        cfg.trials, cfg.seed, log_scale_C=cfg.C, strict=cfg.strict, workers=cfg.workers,
    )
    rows = []
    for scale, pts in (("L_alpha", res.points), ("log", res.log_scale)):
        for p in pts:
            rows.append(
                {
                    "scale": scale,
                    "L": p.L,
                    "ell": p.ell,
                    **_prob_cols("joint", p.joint),
                    "marginal_E": p.marginal_E.point,
                    "marginal_Eprime": p.marginal_Ep.point,
                    "product": p.product,
                    "difference": p.difference.mean,
                    "difference_stderr": p.difference.stderr,
                }
            )
    joints = [p.joint.point for p in res.points]
    ok = {
        "joint <= each marginal": all(
            p.joint.point <= min(p.marginal_E.point, p.marginal_Ep.point) for p in res.points + res.log_scale
        ),
        "joint probability strictly decreasing in L": all(b < a for a, b in zip(joints, joints[1:])),
    }
    return rows, {"fit": _fit_dict(res.fit), "in_regime": res.in_regime}, ok


def cmd_jacobian(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    box = model.box_for(cfg.d, cfg.L)
    w1, w2 = _windows(cfg, cfg.L)
    K = cfg.K if cfg.K is not None else dist.M
    lam = jacobian_threshold(abs(cfg.E - cfg.Eprime), cfg.d, K, cfg.beta, max(cfg.L, 2), cfg.C)
    res = montecarlo.jacobian_event_scan(model, dist, box, w1, w2, lam, cfg.trials, cfg.seed, workers=cfg.workers)
    r = res.records
    rows = [
        {"trial": t, **{k: r[k][t] for k in r}}
        for t in range(res.trials)
        if r["qualifies"][t]
    ]
    summary = {
        "threshold": lam,
        "qualifying": res.qualifying,
        "event": None if res.event is None else {"p": res.event.point, "ci": res.event.interval},
        "klopp_checked": res.klopp_checked,
        "klopp_violations": res.klopp_violations,
    }
    return rows, summary, {"determinant lower bound on every qualifying trial": res.klopp_violations == 0}


def cmd_independence(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    pts = pointprocess.independence_test(
        model, dist, cfg.d, cfg.E, cfg.Eprime, tuple(cfg.I), tuple(cfg.J), cfg.alpha, cfg.ladder,
        cfg.trials, cfg.seed, strict=cfg.strict, workers=cfg.workers,
    )
    rows = []
    for p in pts:
        counts = np.bincount(p.eta.max(axis=1).ravel())
        rows.append(
            {
                "L": p.L,
                "ell": p.ell,
                "N_L": p.n_cubes,
                "E": cfg.E,
                "Eprime": cfg.Eprime,
                **_prob_cols("joint", p.joint),
                "product": p.product,
                "double_sum": p.double_sum,
                "error": p.error.mean,
                "error_stderr": p.error.stderr,
                "correlation": p.correlation,
                "cross_cov_z": p.cross_z,
                "max_eta_freq": " ".join(str(int(c)) for c in counts),
            }
        )
    ok = {
        "|error term| strictly decreasing, first/last CIs disjoint": pointprocess.error_magnitude_decreasing(pts),
        "cross-sub-box covariance within 3 sigma": all(abs(p.cross_z) <= 3 for p in pts),
    }
    return rows, {}, ok


def cmd_multiplicity(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    window = EnergyWindow(cfg.I[0], cfg.I[1])
    pts = pointprocess.multiplicity_scan(model, dist, cfg.d, window, cfg.q, cfg.ladder, cfg.trials, cfg.seed, cfg.rank, cfg.workers)
    m = model.rank(cfg.d) if cfg.rank is None else cfg.rank
    rows = [
        {
            "L": p.L,
            "resolution": p.resolution,
            "covering_intervals": pointprocess.subinterval_cover(window, p.L, cfg.q),
            **_prob_cols("freq", p.estimate),
            "trials": p.estimate.trials,
        }
        for p in pts
    ]
    ok = {"frequency non-increasing in L": pointprocess.frequencies_nonincreasing(pts)}
    return rows, {"rank": m}, ok


def cmd_alloy_check(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    params = alloy_parameters(model.profile, cfg.c, dist.M)
    box = model.box_for(cfg.d, cfg.L)
    res = checks.alloy_lemma_scan(model, dist, box, params, cfg.trials, cfg.seed, cfg.workers)
    r = res.records
    rows = [
        {"trial": t, "norm_j": r["norm_j"][t], "norm_k": r["norm_k"][t], "difference": r["difference"][t],
         "sum": r["sum"][t], "passed": r["passed"][t]}
        for t in range(res.trials)
        if r["admissible"][t]
    ]
    summary = {
        "delta": params.delta, "mean": params.mean, "constraint": params.constraint, "K": params.K,
        "min_abs_fourier": params.min_abs_fourier, "admissible": res.admissible,
        "min_difference": res.min_difference, "min_sum": res.min_sum,
    }
    ok = {
        "profile constraint positive": params.satisfies_constraint,
        "gradient lemma on every admissible trial": res.violations == 0,
    }
    return rows, summary, ok


def cmd_gradcheck(cfg: ExperimentConfig) -> Outcome:
    model, dist = cfg.model_spec(), cfg.disorder_spec()
    res = checks.gradcheck_sweep(model, dist, model.box_for(cfg.d, cfg.L), cfg.trials, cfg.seed, workers=cfg.workers)
    r = res.records
    rows = [{"trial": t, "flagged": r["flagged"][t], "k": r["k"][t], "rel_error": r["rel_error"][t]} for t in range(res.trials)]
    summary = {"checked": res.checked, "max_rel_error": res.max_rel_error}
    return rows, summary, {"analytic vs finite-difference gradient within 1e-6": res.checked > 0 and res.max_rel_error <= 1e-6}


def cmd_tensor_check(cfg: ExperimentConfig) -> Outcome:
    r = checks.tensor_sweep(cfg.trials, cfg.seed, cfg.workers)
    rows = [{"trial": t, "n": r["n"][t], "k": r["k"][t], "residual": r["residual"][t]} for t in range(cfg.trials)]
    worst = float(r["residual"].max())
    return rows, {"max_residual": worst}, {"tensor residual <= 1e-10": worst <= 1e-10}


COMMANDS: dict[str, Callable[[ExperimentConfig], Outcome]] = {
    "spectrum": cmd_spectrum,
    "wegner": cmd_wegner,
    "minami": cmd_minami,
    "decorrelate": cmd_decorrelate,
    "jacobian": cmd_jacobian,
    "independence": cmd_independence,
    "multiplicity": cmd_multiplicity,
    "alloy-check": cmd_alloy_check,
    "gradcheck": cmd_gradcheck,
    "tensor-check": cmd_tensor_check,
}


def _ladder(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad ladder {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--workers", type=int, help="process count (default: $DECORR_WORKERS or 1)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--strict", action="store_true", default=None, help="reject |E-E'| <= 4d")
    common.add_argument("--E", type=float)
    common.add_argument("--Eprime", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--q", type=float)
    common.add_argument("--L", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--ladder", type=_ladder, help="comma-separated sizes")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="decorr", description="Eigenvalue statistics of random lattice operators.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


OVERRIDES = ("seed", "trials", "workers", "out", "strict", "E", "Eprime", "alpha", "beta", "q", "L", "d", "ladder")


def run(command: str, cfg: ExperimentConfig) -> tuple[dict[str, bool], Path]:
    cfg.validate(command)
    rows, summary, ok = COMMANDS[command](cfg)
    outdir = Path(cfg.out) / command
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "results.csv").write_text(render_csv(rows))
    doc = {
        "command": command,
        "config": cfg.to_dict(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "results": summary,
        "assertions": ok,
        "passed": all(ok.values()),
    }
    (outdir / "summary.json").write_text(json.dumps(_jsonable(doc), indent=2) + "\n")
    return ok, outdir


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, {k: getattr(args, k) for k in OVERRIDES})
        ok, outdir = run(args.command, cfg)
    except (ConfigError, RegimeError, ModelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    failed = [name for name, good in ok.items() if not good]
    for name in failed:
        print(f"assertion failed: {name}", file=sys.stderr)
    print(f"wrote {outdir}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
