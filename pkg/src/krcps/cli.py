"""Batch experiment harness: calibrate, validate and the two-feature toy.

Every command is deterministic given its config and ``--seed``. Trials run in
a thread pool capped by ``KRCPS_THREADS``; rows are sorted by trial before
anything is written.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import synth
from .bounds import UcbKind, ucb
from .core import IntervalBundle, RiskSpec, split_calibration
from .exceptions import InfeasibleError, NumericalError, RiskControlError
from .losses import coverage_need
from .procedure import SCHEMA_VERSION, conformalize, krcps, krcps_metadata, rcps
from .quantiles import calibrated_quantiles
from .rcps import empirical_risk01

__all__ = ["main", "Experiment", "load_config", "run_trial"]

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 1, 2, 3
# validate: the violation rate exceeded its threshold
EXIT_INVALID = 4

TRIAL_COLUMNS = [
    "trial",
    "method",
    "mean_interval_length",
    "empirical_risk",
    "ucb_at_solution",
    "true_risk_if_oracle",
    "seed",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Experiment:
    truth: synth.GaussianModel
    sampler: synth.GaussianModel
    spec: RiskSpec
    n_cal: int
    m: int
    n_val: int
    n_opt: int


def _model(block: dict, d: int | None = None) -> synth.GaussianModel:
    try:
        d = int(block.get("d", d))
        mu = np.broadcast_to(np.asarray(block.get("mu", 0.0), dtype=float), (d,))
        noise = np.broadcast_to(np.asarray(block.get("sigma0_2", 0.5), dtype=float), (d,))
        return synth.GaussianModel(mu.copy(), float(block.get("tau2", 1.0)), noise.copy())
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model block: {exc}") from exc


def load_config(path, ucb_kind: str | None = None, seed: int | None = None) -> Experiment:
    """Parse a JSON config into an :class:`Experiment`; CLI flags override the file."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise ConfigError("config needs a 'model' block")
    truth = _model(cfg["model"])
    sampler = _model(cfg["sampler"], truth.d) if "sampler" in cfg else truth
    if sampler.d != truth.d:
        raise ConfigError("sampler and model dimensions differ")
    spec_block = dict(cfg.get("spec", {}))
    data = cfg.get("data", {})
    n_opt = int(spec_block.pop("n_opt", data.get("n_opt", 128)))
    if ucb_kind is not None:
        spec_block["ucb_kind"] = ucb_kind
    if seed is not None:
        spec_block["seed"] = seed
    try:
        spec = RiskSpec(**spec_block)
        exp = Experiment(
            truth,
            sampler,
            spec,
            n_cal=int(data.get("n_cal", 512)),
            m=int(data.get("m", 128)),
            n_val=int(data.get("n_val", 128)),
            n_opt=n_opt,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad spec/data block: {exc}") from exc
    if exp.n_cal < 2 or exp.m < 1 or exp.n_val < 1:
        raise ConfigError("need n_cal >= 2, m >= 1 and n_val >= 1")
    if not 1 <= exp.n_opt < exp.n_cal:
        raise ConfigError(f"n_opt must lie in [1, n_cal), got {exp.n_opt}")
    return exp


def _bundle(exp: Experiment, y, seed):
    return calibrated_quantiles(synth.exact_posterior_sampler(exp.sampler, y, exp.m, seed), exp.spec.alpha)


def run_trial(exp: Experiment, trial: int, methods) -> list[dict]:
    """One calibration draw, one fresh validation draw, one row per method.

    The interval length is measured on ``n_val`` fresh observations; the true
    risk comes from the closed-form oracle.
    """
    seed = exp.spec.seed
    x, y = synth.draw_pairs(exp.truth, exp.n_cal, [seed, trial, 0])
    bundle = _bundle(exp, y, [seed, trial, 1])
    _, y_val = synth.draw_pairs(exp.truth, exp.n_val, [seed, trial, 2])
    base_len = float(np.mean(_bundle(exp, y_val, [seed, trial, 3]).base_width))

    rows = []
    for method in methods:
        if method == "rcps":
            res = rcps(x, bundle, exp.spec)
            lam, rhat, bound, extra = res.lam, res.empirical_risk, res.ucb, None
        else:
            calib = split_calibration(x, y, exp.n_opt, [seed, trial, 4])
            res = krcps(calib, bundle.take(calib.permutation), exp.spec)
            lam, rhat, bound, extra = res.lam, res.sweep.empirical_risk, res.sweep.ucb, res
        true_risk = synth.calibrated_true_risk(exp.truth, exp.m, exp.spec.alpha, lam, exp.sampler)
        rows.append(
            {
                "trial": trial,
                "method": method,
                "mean_interval_length": base_len + 2.0 * float(np.mean(lam)),
                "empirical_risk": rhat,
                "ucb_at_solution": bound,
                "true_risk_if_oracle": true_risk,
                "seed": seed,
                "_lam": lam,
                "_result": extra,
            }
        )
    return rows


def _threads() -> int:
    raw = os.environ.get("KRCPS_THREADS")
    if raw is None:
        return max(1, min(8, os.cpu_count() or 1))
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"KRCPS_THREADS must be an integer, got {raw!r}") from None


def run_trials(exp: Experiment, trials: int, methods) -> list[dict]:
    if trials < 1:
        raise ConfigError("--trials must be >= 1")
    workers = min(_threads(), trials)
    if workers == 1:
        batches = [run_trial(exp, t, methods) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(lambda t: run_trial(exp, t, methods), range(trials)))
    rows = [r for batch in batches for r in batch]
    rows.sort(key=lambda r: (r["trial"], methods.index(r["method"])))
    return rows


def _write_rows(path: Path, rows, columns) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    path.write_text(buf.getvalue())


def _methods(choice: str) -> list[str]:
    return ["rcps", "krcps"] if choice == "both" else [choice]


def _manifest(out: Path, command: str, exp: Experiment, args, files) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "method": args.method,
        "trials": args.trials,
        "seed": exp.spec.seed,
        "ucb_kind": exp.spec.ucb_kind.value,
        "files": sorted(files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_calibrate(args) -> int:
    exp = load_config(args.config, args.ucb, args.seed)
    methods = _methods(args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_trials(exp, args.trials, methods)
    files = ["trials.csv"]
    _write_rows(out / "trials.csv", rows, TRIAL_COLUMNS)
    # the lambda map is the trial-0 calibration; lambda does not depend on y
    for r in rows:
        if r["trial"] != 0:
            continue
        meta = krcps_metadata(exp.spec, r["_result"])
        meta.update(method=r["method"], trial=0, n_cal=exp.n_cal, m=exp.m)
        meta["n_opt"] = exp.n_opt if r["method"] == "krcps" else 0
        lam = r["_lam"]
        cmap = conformalize(_zero_bundle(lam.size), lam, meta)
        a, b = cmap.export(out / f"lambda_{r['method']}", binary=args.binary)
        files += [a.name, b.name]
    _manifest(out, "calibrate", exp, args, files)
    for r in rows:
        if r["trial"] == 0:
            print(f"{r['method']}: mean interval length {r['mean_interval_length']:.6f}, "
                  f"ucb {r['ucb_at_solution']:.6f}, true risk {r['true_risk_if_oracle']:.6f}")
    return EXIT_OK


def _zero_bundle(d: int) -> IntervalBundle:
    return IntervalBundle(np.zeros(d), np.zeros(d))


def violation_threshold(delta: float, trials: int) -> float:
    return delta + 3.0 * math.sqrt(delta * (1.0 - delta) / trials)


def cmd_validate(args) -> int:
    exp = load_config(args.config, args.ucb, args.seed)
    methods = _methods(args.method)
    rows = run_trials(exp, args.trials, methods)
    eps, delta = exp.spec.epsilon, exp.spec.delta
    limit = violation_threshold(delta, args.trials)
    summary = {"schema_version": SCHEMA_VERSION, "epsilon": eps, "delta": delta,
               "trials": args.trials, "threshold": limit, "methods": {}}
    ok = True
    for method in methods:
        mine = [r for r in rows if r["method"] == method]
        hits = sum(r["true_risk_if_oracle"] > eps for r in mine)
        ci = binomtest(hits, len(mine)).proportion_ci(confidence_level=0.95, method="exact")
        frac = hits / len(mine)
        passed = frac <= limit
        ok &= passed
        lengths = [r["mean_interval_length"] for r in mine]
        summary["methods"][method] = {
            "violations": hits,
            "violation_fraction": frac,
            "ci95": [ci.low, ci.high],
            "passed": passed,
            "mean_interval_length": float(np.mean(lengths)),
            "mean_interval_lengths": lengths,
        }
        print(f"{method}: violation fraction {frac:.4f} (95% CI [{ci.low:.4f}, {ci.high:.4f}]), "
              f"threshold {limit:.4f}, {'PASS' if passed else 'FAIL'}; "
              f"mean interval length {np.mean(lengths):.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "validate.csv", rows, TRIAL_COLUMNS)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        _manifest(out, "validate", exp, args, ["validate.csv", "summary.json"])
    return EXIT_OK if ok else EXIT_INVALID


FIG1_COLUMNS = ["kind", "lambda_1", "lambda_2", "ucb", "feasible"]


def fig1_rows(mu, n: int, K: int, epsilon: float, delta: float, seed: int, n_opt: int,
              ucb_kind="hybrid-split", grid: int = 61, grid_max: float = 3.0) -> list[dict]:
    """UCB over a ``grid x grid`` lattice of ``(lam_1, lam_2)`` plus the two solutions."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (2,):
        raise ConfigError(f"the toy problem needs d = 2, got d = {mu.size}")
    if K not in (1, 2):
        raise ConfigError("K must be 1 or 2 when d = 2")
    spec = RiskSpec(epsilon=epsilon, delta=delta, K=K, d_opt=2, beta_max=grid_max * 2, ucb_kind=ucb_kind, seed=seed)
    x = synth.fig1_toy(mu, n, seed)
    bundle = synth.fig1_bundle()
    need = coverage_need(x, bundle.rows(n))
    rows = []
    axis = np.linspace(0.0, grid_max, grid)
    best = None
    for l1 in axis:
        for l2 in axis:
            lam = np.array([l1, l2])
            u = ucb(spec.ucb_kind, n, delta, empirical_risk01(need, lam))
            feasible = u < epsilon
            rows.append({"kind": "grid", "lambda_1": float(l1), "lambda_2": float(l2), "ucb": u, "feasible": int(feasible)})
            if feasible and (best is None or l1 + l2 < best[0] + best[1] - 1e-12):
                best = (float(l1), float(l2), u)
    r = rcps(x, bundle, spec)
    rows.append({"kind": "rcps", "lambda_1": float(r.lam[0]), "lambda_2": float(r.lam[1]), "ucb": r.ucb, "feasible": 1})
    k = krcps(split_calibration(x, x, n_opt, seed), bundle, spec)
    rows.append({"kind": "krcps", "lambda_1": float(k.lam[0]), "lambda_2": float(k.lam[1]), "ucb": k.sweep.ucb, "feasible": 1})
    if best is not None:
        rows.append({"kind": "grid-optimum", "lambda_1": best[0], "lambda_2": best[1], "ucb": best[2], "feasible": 1})
    return rows


def cmd_fig1(args) -> int:
    rows = fig1_rows(args.mu, args.n, args.K, args.epsilon, args.delta, args.seed, args.n_opt,
                     args.ucb or "hybrid-split", args.grid, args.grid_max)
    out = Path(args.out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "fig1.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out, rows, FIG1_COLUMNS)
    for r in rows:
        if r["kind"] != "grid":
            print(f"{r['kind']}: lambda = ({r['lambda_1']:.4f}, {r['lambda_2']:.4f}), ucb {r['ucb']:.4f}")
    return EXIT_OK


def _ucb_choice(value: str) -> str:
    try:
        return UcbKind.parse(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="krcps", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials_default):
        sp.add_argument("--config", required=True)
        sp.add_argument("--method", choices=["rcps", "krcps", "both"], default="both")
        sp.add_argument("--ucb", type=_ucb_choice, default=None,
                        help="hoeffding, bentkus, hybrid or hybrid-split (default)")
        sp.add_argument("--ucb-split", action="store_true",
                        help="shorthand for --ucb hybrid-split")
        sp.add_argument("--trials", type=int, default=trials_default)
        sp.add_argument("--seed", type=int, default=None)

    c = sub.add_parser("calibrate", help="calibrate and write the lambda map and trial log")
    common(c, 1)
    c.add_argument("--out", required=True)
    c.add_argument("--binary", action="store_true", help="write the lambda map in the binary format")
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("validate", help="repeat calibration and check the violation rate")
    common(v, 200)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("fig1", help="two-feature toy: UCB grid and both solutions")
    f.add_argument("--mu", type=float, nargs="+", default=[-2.0, 0.75])
    f.add_argument("--n", type=int, default=128)
    f.add_argument("--n-opt", type=int, default=32)
    f.add_argument("--K", type=int, default=2)
    f.add_argument("--epsilon", type=float, default=0.1)
    f.add_argument("--delta", type=float, default=0.1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--ucb", type=_ucb_choice, default=None)
    f.add_argument("--ucb-split", action="store_true")
    f.add_argument("--grid", type=int, default=61)
    f.add_argument("--grid-max", type=float, default=3.0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fig1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.ucb_split:
        args.ucb = UcbKind.HYBRID_SPLIT.value
    try:
        return args.func(args)
    except (InfeasibleError, RiskControlError) as exc:
        print(f"krcps: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalError, FloatingPointError) as exc:
        print(f"krcps: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"krcps: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
