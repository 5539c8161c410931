"""Command-line front end: metric sweeps, POVM tables, fringe fits, simulation and certification."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .discrimination import DiscriminationError, diagonal_baseline, optimize_povm, usd_overlap
from .fockspace import build_uniform_single_mode_state
from .fringe import (
    DEFAULT_REFERENCE_VISIBILITY,
    DataError,
    FitError,
    FringeDataset,
    Method,
    Normalization,
    correct_visibility,
    extrema_visibility,
    fit_fringe,
    visibility_to_sigma,
)
from .laser import (
    ConfigError,
    DriveConfig,
    GaussianWalk,
    UniformRandom,
    default_phase_points,
    derived_quantities,
    simulate_amzi_fringe,
    simulate_phase_train,
)
from .security import (
    ConvergenceError,
    coin_imbalance,
    coin_imbalance_visibility_target,
    decoy_distinguishability,
    decoy_visibility_target,
    default_sigma_grid,
    find_convergence_sigma,
    Metric,
    relative_error,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NONCONVERGENCE = 4

# the three parameter sets of the discrimination figure: (theta0, p_inc)
POVM_DEFAULT_CASES = ((0.0, 0.983), (math.pi, 0.983), (math.pi, 0.712))


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    parameters: dict
    seed: int
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: _timestamp())

    def to_dict(self) -> dict:
        return asdict(self)


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the clock so reruns can be compared byte for byte
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%SZ")


_ANGLE = re.compile(r"^\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+)?)\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


def parse_angle(text: str) -> float:
    """Radians as a plain number or a multiple of pi (``pi``, ``-pi/2``, ``0.5pi``)."""
    m = _ANGLE.match(text.lower())
    if m:
        coef = m.group(1)
        value = float(coef + "1" if coef in ("", "+", "-") else coef) * math.pi
        return value / float(m.group(2)) if m.group(2) else value
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an angle: {text!r}") from None


def _json_number(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    return _json_number(obj)


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[h]) for h in header])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the target directory and rename into place."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(args, manifest: RunManifest, payload: dict, header: Optional[list[str]] = None,
         rows: Optional[list[dict]] = None, sidecars: Optional[dict] = None) -> None:
    """Write the result in the requested format.

    JSON embeds the manifest.  CSV is written alongside ``<out>.manifest.json``
    (stdout CSV carries no manifest).
    """
    fmt = args.format or ("csv" if rows is not None else "json")
    if fmt == "csv" and rows is None:
        header, rows = list(payload), [{k: _flat(v) for k, v in payload.items()}]
    if fmt == "json":
        doc = dict(payload)
        if rows is not None:
            doc["rows"] = rows
        doc["manifest"] = manifest.to_dict()
        text = dumps_json(doc)
    else:
        text = rows_to_csv(header, rows)
    out = args.out
    if out is None or str(out) == "-":
        sys.stdout.write(text)
        return
    out = Path(out)
    write_atomic(out, text)
    if fmt == "csv":
        write_atomic(out.with_name(out.name + ".manifest.json"), dumps_json(manifest.to_dict()))
    for suffix, doc in (sidecars or {}).items():
        write_atomic(out.with_name(out.name + suffix), dumps_json(doc))


def _flat(v):
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(_clean(v), sort_keys=True)
    if v is None:
        return ""
    return v


def note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _grid(args) -> np.ndarray:
    if args.sigma_step <= 0 or args.sigma_max < 0:
        raise UsageError("--sigma-max must be >= 0 and --sigma-step > 0")
    return default_sigma_grid(args.sigma_max, args.sigma_step)


# --- subcommands ------------------------------------------------------------------------------

def cmd_coin_imbalance(args) -> int:
    grid = _grid(args)
    if args.mu < 0:
        raise UsageError(f"--mu must be >= 0, got {args.mu}")
    target = find_convergence_sigma(
        lambda s: coin_imbalance(args.mu, args.theta0, s, args.n_max).delta, args.rel_tol, grid,
        kind=Metric.COIN_IMBALANCE, params={"mu": args.mu, "theta0": args.theta0, "n_max": args.n_max})
    # the scan stops at the first violation; fill in the rest of the sweep
    known = dict(zip(target.sigmas, target.values))
    asym = target.asymptote
    rows = []
    for s in grid:
        s = float(s)
        delta = known[s] if s in known else coin_imbalance(args.mu, args.theta0, s, args.n_max).delta
        rel = relative_error(delta, asym)
        rows.append({"sigma": s, "delta": delta, "rel_error": rel})
    note(f"sigma* = {target.sigma_star:.1f}  target visibility = {target.visibility_star:.4g}")
    manifest = RunManifest("coin-imbalance", _params(args, "mu", "theta0", "sigma_max", "sigma_step",
                                                     "n_max", "rel_tol"), args.seed)
    emit(args, manifest, {"target": target.to_dict()}, ["sigma", "delta", "rel_error"], rows)
    return EXIT_OK


def cmd_decoy(args) -> int:
    grid = _grid(args)
    if args.mu < 0 or args.nu < 0:
        raise UsageError("--mu and --nu must be >= 0")
    metric = lambda s: decoy_distinguishability(args.mu, args.nu, args.theta0, s, args.n_max)  # noqa: E731
    randomized = metric(math.inf)
    coherent = metric(0.0)
    target = find_convergence_sigma(metric, args.rel_tol, grid, asymptote=randomized,
                                    kind=Metric.DECOY_DISTINGUISHABILITY,
                                    params={"mu": args.mu, "nu": args.nu, "theta0": args.theta0,
                                            "n_max": args.n_max})
    known = dict(zip(target.sigmas, target.values))
    rows = [{"sigma": float(s), "distinguishability": known.get(float(s), None),
             "randomized_ref": randomized, "coherent_ref": coherent} for s in grid]
    for row in rows:
        if row["distinguishability"] is None:
            row["distinguishability"] = metric(row["sigma"])
    note(f"sigma* = {target.sigma_star:.1f}  target visibility = {target.visibility_star:.4g}")
    manifest = RunManifest("decoy", _params(args, "mu", "nu", "theta0", "sigma_max", "sigma_step",
                                            "n_max", "rel_tol"), args.seed)
    payload = {"target": target.to_dict(), "randomized_ref": randomized, "coherent_ref": coherent}
    emit(args, manifest, payload, ["sigma", "distinguishability", "randomized_ref", "coherent_ref"], rows)
    return EXIT_OK


def cmd_povm(args) -> int:
    from .security import signal_decoy_states

    grid = _grid(args)
    if args.theta0 or args.p_inc:
        thetas = args.theta0 or [math.pi]
        pincs = args.p_inc or [0.983, 0.712]
        cases = [(th, q) for th in thetas for q in pincs]
    else:
        cases = list(POVM_DEFAULT_CASES)
    rows = []
    n_bad = 0
    for theta0, q in cases:
        for s in grid:
            r1, r2 = signal_decoy_states(args.mu, args.nu, theta0, float(s), args.n_max)
            res = optimize_povm(r1, r2, args.prior, q, args.tol, args.max_iter, args.method)
            n_bad += not res.converged
            rows.append({"kind": "optimized", "theta0": theta0, "p_inc_requested": q, "sigma": float(s),
                         "p_correct": res.p_correct, "p_correct_conclusive": res.p_correct_conclusive,
                         "p_inc_achieved": res.p_inc_achieved, "upper_bound": res.upper_bound,
                         "converged": res.converged})
    for q in sorted({q for _, q in cases}, reverse=True):
        # fully randomized states are photon-number diagonal and independent of theta0
        d1 = build_uniform_single_mode_state(args.mu / 2, args.n_max).diagonal()
        d2 = build_uniform_single_mode_state(args.nu / 2, args.n_max).diagonal()
        pc, _ = diagonal_baseline(d1, d2, args.prior, q)
        rows.append({"kind": "diagonal_baseline", "theta0": "", "p_inc_requested": q, "sigma": math.inf,
                     "p_correct": pc, "p_correct_conclusive": pc / (1 - q), "p_inc_achieved": q,
                     "upper_bound": pc, "converged": True})
    if n_bad:
        note(f"warning: {n_bad} optimization(s) did not certify convergence; see the converged column")
    manifest = RunManifest("povm", _params(args, "mu", "nu", "theta0", "p_inc", "prior", "sigma_max",
                                           "sigma_step", "n_max", "tol", "max_iter", "method"), args.seed)
    overlaps = {f"{th:.6g}": usd_overlap(math.sqrt(args.mu / 2), math.sqrt(args.nu / 2), th)
                for th in sorted({th for th, _ in cases})}
    header = ["kind", "theta0", "p_inc_requested", "sigma", "p_correct", "p_correct_conclusive",
              "p_inc_achieved", "upper_bound", "converged"]
    emit(args, manifest, {"usd_overlap": overlaps}, header, rows)
    return EXIT_OK


def _load_fringe(path, normalization) -> FringeDataset:
    try:
        return FringeDataset.from_csv(path, Normalization(normalization))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def _sigma_or_none(theta: float):
    return visibility_to_sigma(theta) if theta > 0 else None


def fit_summary(data: FringeDataset, reference: float, method: str) -> dict:
    if Method(method) is Method.FIT:
        fit = fit_fringe(data)
        raw = fit.visibility
        out = fit.to_dict()
    else:
        raw = extrema_visibility(data)
        out = {"n_samples": len(data)}
    est = correct_visibility(raw, reference, Method(method))
    out.update({
        "method": est.method.value,
        "raw_visibility": est.raw,
        "corrected_visibility": est.corrected,
        "reference_visibility": reference,
        "sigma_equivalent": _sigma_or_none(est.raw),
        "sigma_equivalent_corrected": _sigma_or_none(est.corrected),
    })
    return out


def cmd_fit(args) -> int:
    data = _load_fringe(args.csv_in, args.normalization)
    summary = fit_summary(data, args.reference_visibility, args.method)
    manifest = RunManifest("fit", _params(args, "csv_in", "reference_visibility", "normalization", "method"),
                           args.seed)
    emit(args, manifest, summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.model == "gaussian":
        if args.sigma is None:
            raise UsageError("--sigma is required for the gaussian model")
        model = GaussianWalk(args.sigma, args.theta0)
    else:
        model = UniformRandom()
    if args.accumulations < 1 or args.phase_points < 4:
        raise UsageError("--accumulations must be >= 1 and --phase-points >= 4")
    drive = DriveConfig.from_file(args.config) if args.config else None
    phases = default_phase_points(args.phase_points)
    train = simulate_phase_train(model, args.accumulations * phases.size + 1, args.seed)
    data = simulate_amzi_fringe(train, phases, args.accumulations, args.snr_db, args.seed,
                                args.instrument_visibility)
    derived = derived_quantities(drive, args.tau_ph) if drive else None
    params = _params(args, "config", "model", "sigma", "theta0", "accumulations", "snr_db", "phase_points",
                     "instrument_visibility", "tau_ph")
    if drive:
        params["drive"] = drive.to_mapping()
    manifest = RunManifest("simulate", params, args.seed)
    rows = [{"phase_rad": float(p), "intensity": float(i)} for p, i in zip(data.phases, data.intensities)]
    payload = {"derived": derived}
    fmt = args.format or "csv"
    sidecars = {".derived.json": {"derived": derived, "manifest": manifest.to_dict()}} if fmt == "csv" else None
    emit(args, manifest, payload, ["phase_rad", "intensity"], rows, sidecars)
    if derived:
        tau = derived["tau_eff_ps"]
        note(f"lambda = {derived['lambda']:.4g}  turn-off = {derived['turn_off_ps']:.3g} ps  "
             f"tau_eff = {'inf' if tau is None else f'{tau:.3g} ps'}")
    return EXIT_OK


def cmd_certify(args) -> int:
    if args.csv_in is not None:
        data = _load_fringe(args.csv_in, args.normalization)
        summary = fit_summary(data, args.reference_visibility, "fit")
        theta, raw = summary["corrected_visibility"], summary["raw_visibility"]
    else:
        raw = args.visibility
        if not 0 <= raw <= 1:
            raise UsageError(f"--visibility must be in [0, 1], got {raw}")
        theta = correct_visibility(raw, args.reference_visibility).corrected if args.apply_correction else raw
    checks = []
    if args.mu is None:
        note("warning: --mu not given; coin-imbalance check skipped")
    else:
        t = coin_imbalance_visibility_target(args.mu, args.n_max, args.rel_tol)
        checks.append({"check": "coin_imbalance", "params": {"mu": args.mu, "theta0": t.params["theta0"]},
                       "sigma_star": t.sigma_star, "target_visibility": t.visibility_star})
    if not args.skip_decoy:
        t = decoy_visibility_target(args.signal_mu, args.nu, args.n_max, args.rel_tol)
        checks.append({"check": "decoy", "params": {"mu": args.signal_mu, "nu": args.nu, "theta0": math.pi},
                       "sigma_star": t.sigma_star, "target_visibility": t.visibility_star})
    if not checks:
        raise UsageError("no applicable checks")
    for c in checks:
        c["margin"] = c["target_visibility"] - theta
        c["passed"] = theta <= c["target_visibility"]
    verdict = "PASS" if all(c["passed"] for c in checks) else "FAIL"
    payload = {"verdict": verdict, "visibility": theta, "raw_visibility": raw,
               "sigma_equivalent": _sigma_or_none(theta), "checks": checks}
    note(f"{verdict}: visibility {theta:.4g} vs targets "
         + ", ".join(f"{c['check']} {c['target_visibility']:.4g}" for c in checks))
    manifest = RunManifest("certify", _params(args, "csv_in", "visibility", "apply_correction",
                                              "reference_visibility", "mu", "signal_mu", "nu",
                                              "skip_decoy", "n_max", "rel_tol"), args.seed)
    if (args.format or "json") == "csv":
        rows = [{"check": c["check"], "target_visibility": c["target_visibility"], "sigma_star": c["sigma_star"],
                 "visibility": theta, "margin": c["margin"], "passed": c["passed"]} for c in checks]
        emit(args, manifest, payload, list(rows[0]), rows)
    else:
        emit(args, manifest, payload)
    return EXIT_OK


def _params(args, *names) -> dict:
    return {n: getattr(args, n) for n in names if hasattr(args, n)}


# --- parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_options(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags; SUPPRESS keeps them from resetting values given earlier
        def default(v):
            return argparse.SUPPRESS if suppress else v

        holder = argparse.ArgumentParser(add_help=False)
        g = holder.add_argument_group("global options")
        g.add_argument("--out", default=default(None), help="output path (default: stdout)")
        g.add_argument("--seed", type=int, default=default(0), help="RNG seed (default: 0)")
        g.add_argument("--n-max", type=int, default=default(16), help="photon-number cutoff (default: 16)")
        g.add_argument("--format", choices=("csv", "json"), default=default(None),
                       help="output format (default depends on command)")
        return holder

    common = global_options(suppress=True)
    parser = argparse.ArgumentParser(prog="qkdphase", parents=[global_options(suppress=False)],
                                     description="Phase-correlation analysis for QKD light sources.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def sweep_args(p, sigma_max=8.0, sigma_step=0.1):
        p.add_argument("--sigma-max", type=float, default=sigma_max)
        p.add_argument("--sigma-step", type=float, default=sigma_step)

    p = sub.add_parser("coin-imbalance", parents=[common], help="quantum-coin imbalance versus sigma")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--theta0", type=parse_angle, default=0.0, help="central phase, e.g. 0 or pi")
    p.add_argument("--rel-tol", type=float, default=1e-2)
    sweep_args(p)
    p.set_defaults(func=cmd_coin_imbalance)

    p = sub.add_parser("decoy", parents=[common], help="signal/decoy distinguishability versus sigma")
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--theta0", type=parse_angle, default=math.pi)
    p.add_argument("--rel-tol", type=float, default=1e-2)
    sweep_args(p)
    p.set_defaults(func=cmd_decoy)

    p = sub.add_parser("povm", parents=[common], help="optimal discrimination probability versus sigma")
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--theta0", type=parse_angle, action="append",
                   help="central phase (repeatable); default: the three reference cases")
    p.add_argument("--p-inc", type=float, action="append", help="inconclusive probability (repeatable)")
    p.add_argument("--prior", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--method", choices=("barrier", "fiurasek-jezek"), default="barrier")
    sweep_args(p, 3.0, 0.25)
    p.set_defaults(func=cmd_povm)

    p = sub.add_parser("fit", parents=[common], help="fit a fringe CSV and correct its visibility")
    p.add_argument("csv_in", help="CSV with columns phase_rad,intensity[,intensity_err]")
    p.add_argument("--reference-visibility", type=float, default=DEFAULT_REFERENCE_VISIBILITY)
    p.add_argument("--normalization", choices=[n.value for n in Normalization], default="raw")
    p.add_argument("--method", choices=[m.value for m in Method], default="fit")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", parents=[common], help="simulate an interferometer fringe")
    p.add_argument("--config", help="drive configuration (JSON or TOML)")
    p.add_argument("--model", choices=("gaussian", "uniform"), default="gaussian")
    p.add_argument("--sigma", type=float)
    p.add_argument("--theta0", type=parse_angle, default=0.0)
    p.add_argument("--accumulations", type=int, default=256)
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--phase-points", type=int, default=41)
    p.add_argument("--instrument-visibility", type=float, default=DEFAULT_REFERENCE_VISIBILITY)
    p.add_argument("--tau-ph", type=float, default=3.0, help="cavity photon lifetime in ps")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certify", parents=[common], help="compare a visibility against security targets")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv", dest="csv_in", help="fringe CSV to fit")
    src.add_argument("--visibility", type=float, help="visibility already corrected for the interferometer")
    p.add_argument("--apply-correction", action="store_true",
                   help="treat --visibility as raw and divide by the reference visibility")
    p.add_argument("--reference-visibility", type=float, default=DEFAULT_REFERENCE_VISIBILITY)
    p.add_argument("--normalization", choices=[n.value for n in Normalization], default="raw")
    p.add_argument("--mu", type=float, help="mean photon number for the coin-imbalance target")
    p.add_argument("--signal-mu", type=float, default=0.5, help="signal mean photon number for the decoy target")
    p.add_argument("--nu", type=float, default=0.1, help="decoy mean photon number")
    p.add_argument("--skip-decoy", action="store_true")
    p.add_argument("--rel-tol", type=float, default=1e-2)
    p.set_defaults(func=cmd_certify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.n_max < 1:
        parser.error("--n-max must be >= 1")
    try:
        return args.func(args)
    except (DataError, ConfigError) as exc:
        note(f"error: {exc}")
        return EXIT_DATA
    except (ConvergenceError, FitError) as exc:
        note(f"error: {exc}")
        return EXIT_NONCONVERGENCE
    except (UsageError, DiscriminationError, ValueError) as exc:
        note(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
