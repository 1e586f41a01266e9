"""One executable for every computation: constants, DP scans, and experiments.

Configuration comes from an optional JSON file plus flag overrides; every run
writes a resolved-config echo next to its outputs, and feeding that echo back
in reproduces the outputs bit for bit (runtimes aside).  Numeric tables go to
CSV with a header row and 17-significant-digit floats; experiment reports go
to JSON.  Exit codes: 0 ok, 1 validation error, 2 budget error, 3 a
statistical test ran and failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .chains import (
    chain_kernel,
    d_return_probs,
    h_return_probs,
    losA_scan,
    renewal_residuals,
)
from .errors import BudgetError, DegenerateLawError, MeanConditionError, QuadratureError
from .identities import (
    corollary1_cov_scan_d1,
    corollary1_cov_scan_d2,
    prop1_scan_d1,
)
from .limits import limit_constants
from .mc import (
    ExperimentConfig,
    clt_experiment,
    condition3_diagnostic,
    fdd_experiment_d1,
    mean_with_se,
    variance_ci,
)
from .potential import (
    frakA,
    lemma4_prediction,
    potential_context,
    potential_kernel,
)
from .surface import fluctuation_sample
from .weights import (
    compute_moments,
    d_origin_step_law,
    drift_stats,
    h_step_law,
    law_from_dict,
    law_to_dict,
    ref1_law,
    ref2_law,
    slope_vector,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BUDGET = 2
EXIT_STATFAIL = 3

_COMMON_KEYS = {
    "command", "law", "lam", "seed", "threads", "out", "budget_cells",
    "replicas", "alpha",
}
_CMD_KEYS = {
    "constants": {"h_grid"},
    "green": {"x", "nmax"},
    "losa-scan": {"l", "lp", "nmax"},
    "variance-scan": {"A", "xs"},
    "cov-scan": {"A", "n", "times", "zs"},
    "forward-sim": {"x", "steps"},
    "clt": {"x", "A", "sampler"},
    "fdd": {"times", "n", "A"},
    "condition3": {"x", "A"},
}
_H_GRID_DEFAULT = (2.0, 4.0, 16.0, 64.0, 256.0)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path: str, command: str) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    allowed = _COMMON_KEYS | _CMD_KEYS[command]
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)} for {command}")
    if cfg.get("command", command) != command:
        raise ValueError(
            f"config is for command {cfg['command']!r}, not {command!r}")
    return cfg


def _resolve(args: argparse.Namespace) -> dict:
    """Merge config file and flags; flags win.  Returns the echoable dict."""
    cfg = _load_config(args.config, args.command) if args.config else {}
    cfg["command"] = args.command
    for key in ("seed", "threads", "out", "alpha"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "budget_cells", None) is not None:
        cfg["budget_cells"] = args.budget_cells
    if getattr(args, "replicas", None) is not None:
        cfg["replicas"] = args.replicas
    for key in sorted(_CMD_KEYS[args.command] | {"law", "lam"}):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            cfg[key] = val
    if "threads" not in cfg:
        env = os.environ.get("RAPSCALE_THREADS")
        cfg["threads"] = int(env) if env else (os.cpu_count() or 1)
    cfg.setdefault("out", ".")
    return cfg


def _echo_config(cfg: dict) -> None:
    out = cfg.get("out", ".")
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, f"{cfg['command']}_resolved_config.json"), cfg)


def _law_of(cfg: dict):
    raw = cfg.get("law", "ref1")
    if isinstance(raw, str):
        if raw == "ref1":
            return ref1_law()
        if raw == "ref2":
            return ref2_law()
        raise ValueError(f"unknown law name {raw!r} (use ref1, ref2, or a dict)")
    return law_from_dict(raw)


def _lam_of(cfg: dict, dim: int):
    lam = cfg.get("lam", 1.0 if dim == 1 else (1.0, 0.0))
    return slope_vector(lam, dim)


def _site_arg(value, dim: int) -> tuple:
    vals = [int(v) for v in str(value).replace(",", " ").split()]
    if len(vals) != dim:
        raise ValueError(f"x needs {dim} coordinates, got {len(vals)}")
    return tuple(vals)


def _budget(cfg: dict):
    return cfg.get("budget_cells")


def cmd_constants(cfg: dict) -> int:
    law = _law_of(cfg)
    mom = compute_moments(law)
    dim = mom.spec.dimension
    lam = _lam_of(cfg, dim)
    mu, sigma2, drift = drift_stats(mom, lam)
    q_h = h_step_law(mom)
    q_d = d_origin_step_law(mom)
    ctx = potential_context(mom)
    frak_a = frakA(ctx, q_d)
    quad = ctx.sigma_h2 if dim == 1 else ctx.det_quad
    lc = limit_constants(dim, sigma2, frak_a, quad)
    a_table = [
        (",".join(str(int(v)) for v in off), float(p), potential_kernel(ctx, off))
        for off, p in zip(q_d.offsets, q_d.probs)
    ]
    h_grid = cfg.get("h_grid", list(_H_GRID_DEFAULT)) if dim == 1 else []
    result = {
        "law": law_to_dict(law),
        "lam": np.asarray(lam).tolist(),
        "mu": mu,
        "sigma2": sigma2,
        "drift_mean": np.asarray(drift).tolist(),
        "q_h": {str(tuple(o)): float(p) for o, p in zip(q_h.offsets.tolist(), q_h.probs)},
        "q_d": {str(tuple(o)): float(p) for o, p in zip(q_d.offsets.tolist(), q_d.probs)},
        ("sigma_h2" if dim == 1 else "quad_det"): quad,
        "frak_a": frak_a,
        "c": lc.c,
        "c_prime": lc.cprime,
        "a_table": {site: a for site, _, a in a_table},
        "h_table": {str(a): lc.h(a) for a in h_grid},
    }
    out = cfg["out"]
    _write_json(os.path.join(out, "constants.json"), result)
    print(f"sigma2 = {_fmt(sigma2)}   mu = {_fmt(mu)}")
    sig_label = "sigma_H^2" if dim == 1 else "det Q"
    print(f"{sig_label} = {_fmt(quad)}   frakA = {_fmt(frak_a)}")
    cp = _fmt(lc.cprime) if np.isfinite(lc.cprime) else "n/a (d=1 only)"
    print(f"c({dim}) = {_fmt(lc.c)}   c' = {cp}")
    for site, p, a in a_table:
        print(f"a({site}) = {_fmt(a)}   q_D({site}) = {_fmt(p)}")
    for a in h_grid:
        print(f"h({_fmt(float(a))}) = {_fmt(lc.h(a))}")
    rows = [(site.replace(",", ";"), p, a) for site, p, a in a_table]
    _write_csv(os.path.join(out, "constants_potential.csv"),
               ("site", "q_d", "a"), rows)
    return EXIT_OK


def cmd_green(cfg: dict) -> int:
    law = _law_of(cfg)
    mom = compute_moments(law)
    dim = mom.spec.dimension
    kern = chain_kernel(mom)
    nmax = int(cfg.get("nmax", 1000))
    x = _site_arg(cfg.get("x", "8" if dim == 1 else "8 0"), dim)
    budget = _budget(cfg)
    h = h_return_probs(kern, nmax, budget=budget)
    d0 = d_return_probs(kern, (0,) * dim, nmax, budget=budget)
    dx = d_return_probs(kern, x, nmax, budget=budget)
    res = renewal_residuals(kern, x, nmax, budget=budget)
    rows = [(n, h[n], d0[n], dx[n], res[n]) for n in range(nmax + 1)]
    out = cfg["out"]
    _write_csv(os.path.join(out, "green.csv"),
               ("n", "h_return", "d_return_origin", "d_return_x", "renewal_residual"),
               rows)
    ctx = potential_context(mom)
    frak_a = frakA(ctx, d_origin_step_law(mom))
    print(f"max |renewal residual| over n <= {nmax}: {_fmt(float(np.abs(res).max()))}")
    if dim == 1:
        ratio = d0[nmax] / lemma4_prediction(ctx, frak_a, nmax)
        print(f"return-asymptotics ratio at n={nmax}: {_fmt(float(ratio))}")
    else:
        ns = np.array([nmax // 4, nmax // 2, nmax])
        sum_d = np.cumsum(d0)[ns]
        sum_h = np.cumsum(h)[ns]
        ratio = sum_d[-1] * frak_a / sum_h[-1]
        print(f"green-sum ratio (d * frakA / h) at n={nmax}: {_fmt(float(ratio))}")
        two_pi_root = 2.0 * np.pi * np.sqrt(ctx.det_quad)
        fitted = sum_d * frak_a * two_pi_root - np.log(ns.astype(float))
        for n_i, c_i in zip(ns, fitted):
            print(f"fitted additive constant at n={n_i}: {_fmt(float(c_i))}")
    return EXIT_OK


def cmd_losa_scan(cfg: dict) -> int:
    law = _law_of(cfg)
    kern = chain_kernel(compute_moments(law))
    dim = kern.dimension
    l = _site_arg(cfg.get("l", "1" if dim == 1 else "1 0"), dim)
    lp = _site_arg(cfg.get("lp", "-1" if dim == 1 else "-1 0"), dim)
    nmax = int(cfg.get("nmax", 10_000))
    values, running = losA_scan(kern, l, lp, nmax, budget=_budget(cfg))
    rows = [(n, values[n], running[n]) for n in range(nmax + 1)]
    _write_csv(os.path.join(cfg["out"], "losa_scan.csv"),
               ("n", "partial_sum", "running_max"), rows)
    half = nmax // 2
    first, second = running[half], running[-1]
    growth = (second - first) / first if first > 0 else 0.0
    print(f"running max: first half {_fmt(float(first))}, "
          f"final {_fmt(float(second))}, growth {_fmt(float(growth))}")
    return EXIT_OK


def cmd_variance_scan(cfg: dict) -> int:
    law = _law_of(cfg)
    mom = compute_moments(law)
    lam = _lam_of(cfg, mom.spec.dimension)
    A = float(cfg.get("A", 2.0))
    xs = cfg.get("xs", (8, 16, 32))
    xs = [int(v) for v in (xs if not isinstance(xs, str) else xs.split())]
    rep = prop1_scan_d1(law, lam, A, xs, budget=_budget(cfg))
    rows = [
        (r.scale, r.horizon, r.raw, r.normalized, r.predicted, r.ratio)
        for r in rep.rows
    ]
    _write_csv(os.path.join(cfg["out"], "variance_scan.csv"),
               ("x", "N", "raw", "normalized", "predicted", "ratio"), rows)
    for row in rows:
        print(f"x={row[0]} N={row[1]} normalized={_fmt(row[3])} "
              f"predicted={_fmt(row[4])} ratio={_fmt(row[5])}")
    return EXIT_OK


def cmd_cov_scan(cfg: dict) -> int:
    law = _law_of(cfg)
    mom = compute_moments(law)
    dim = mom.spec.dimension
    lam = _lam_of(cfg, dim)
    n = int(cfg.get("n", 16))
    if dim == 1:
        times = tuple(float(t) for t in cfg.get("times", (0.5, 1.0)))
        scan = corollary1_cov_scan_d1(law, lam, float(cfg.get("A", 2.0)), n,
                                      times, budget=_budget(cfg))
        labels = [f"t={t}" for t in times]
    else:
        zs = [tuple(int(v) for v in z) for z in cfg.get("zs", ((1, 0), (1, 1)))]
        scan = corollary1_cov_scan_d2(law, lam, zs, n, budget=_budget(cfg))
        labels = [f"z={z[0]};{z[1]}" for z in zs]
    rows = []
    k = len(labels)
    for i in range(k):
        for j in range(i, k):
            pred = scan.predicted[i, j]
            ratio = scan.normalized[i, j] / pred if pred != 0 else float("nan")
            rows.append((f"{labels[i]}|{labels[j]}", scan.horizon,
                         scan.matrix[i, j], scan.normalized[i, j], pred, ratio))
    _write_csv(os.path.join(cfg["out"], "cov_scan.csv"),
               ("pair", "N", "raw", "normalized", "predicted", "ratio"), rows)
    for row in rows:
        print(f"{row[0]}: normalized={_fmt(row[3])} predicted={_fmt(row[4])} "
              f"ratio={_fmt(row[5])}")
    return EXIT_OK


def cmd_forward_sim(cfg: dict) -> int:
    law = _law_of(cfg)
    mom = compute_moments(law)
    dim = mom.spec.dimension
    lam = _lam_of(cfg, dim)
    if "seed" not in cfg:
        raise ValueError("seed is required for forward-sim")
    x = _site_arg(cfg.get("x", "4" if dim == 1 else "2 2"), dim)
    steps = int(cfg.get("steps", 16))
    reps = int(cfg.get("replicas", 200))
    seed = int(cfg["seed"])
    budget = cfg.get("budget_cells")
    rows = []
    for r in range(reps):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, r))))
        kwargs = {"budget": budget} if budget is not None else {}
        rows.append((r, fluctuation_sample(law, lam, x, steps, rng, **kwargs)))
    _write_csv(os.path.join(cfg["out"], "forward_sim.csv"),
               ("replica", "fluctuation"), rows)
    vals = np.array([v for _, v in rows])
    mean, se = mean_with_se(vals)
    var, lo, hi = variance_ci(vals)
    print(f"mean = {_fmt(mean)} (se {_fmt(se)})")
    print(f"var  = {_fmt(var)} (99% CI {_fmt(lo)} .. {_fmt(hi)})")
    return EXIT_OK


def _experiment_config(cfg: dict, kind: str, **extra) -> ExperimentConfig:
    if "seed" not in cfg:
        raise ValueError(f"seed is required for {kind}")
    law = _law_of(cfg)
    dim = law.spec.dimension
    return ExperimentConfig(
        law=law,
        lam=_lam_of(cfg, dim),
        kind=kind,
        R=int(cfg.get("replicas", 1000)),
        seed=int(cfg["seed"]),
        threads=int(cfg.get("threads", 1)),
        alpha=float(cfg.get("alpha", 0.01)),
        budget=cfg.get("budget_cells"),
        **extra,
    )


def _finish_experiment(cfg: dict, report) -> int:
    out = cfg["out"]
    kind = report.experiment
    _write_json(os.path.join(out, f"{kind}_report.json"), report.to_dict())
    if report.detail is not None:
        _write_json(os.path.join(out, f"{kind}_detail.json"), report.detail)
    if kind == "condition3":
        rows = [
            (";".join(str(v) for v in r["x"]), r["pair"], r["n_terms"],
             r["mean"], r["se"], r["var"])
            for r in report.detail["rows"]
        ]
        _write_csv(os.path.join(out, "condition3_rows.csv"),
                   ("x", "pair", "N", "mean", "se", "var"), rows)
    print(f"{kind}: pass={report.passed} mean={_fmt(report.mean)} "
          f"var={_fmt(report.var)} ks_p={_fmt(report.ks_p)} "
          f"anomalies={report.anomalies}")
    return EXIT_OK if report.passed else EXIT_STATFAIL


def cmd_clt(cfg: dict) -> int:
    law = _law_of(cfg)
    dim = law.spec.dimension
    x = _site_arg(cfg.get("x", "8" if dim == 1 else "4 0"), dim)
    ec = _experiment_config(cfg, "clt", x=x, A=float(cfg.get("A", 2.0)),
                            sampler=cfg.get("sampler", "dual"))
    return _finish_experiment(cfg, clt_experiment(ec))


def cmd_fdd(cfg: dict) -> int:
    times = tuple(float(t) for t in cfg.get("times", (0.5, 1.0)))
    ec = _experiment_config(cfg, "fdd", times=times,
                            n=int(cfg.get("n", 16)), A=float(cfg.get("A", 2.0)))
    return _finish_experiment(cfg, fdd_experiment_d1(ec))


def cmd_condition3(cfg: dict) -> int:
    law = _law_of(cfg)
    dim = law.spec.dimension
    xs = cfg.get("x", (8, 16, 32))
    if isinstance(xs, str):
        xs = tuple(_site_arg(part, dim) for part in xs.split(";"))
    ec = _experiment_config(cfg, "condition3", x=xs, A=float(cfg.get("A", 2.0)))
    return _finish_experiment(cfg, condition3_diagnostic(ec))


_DISPATCH = {
    "constants": cmd_constants,
    "green": cmd_green,
    "losa-scan": cmd_losa_scan,
    "variance-scan": cmd_variance_scan,
    "cov-scan": cmd_cov_scan,
    "forward-sim": cmd_forward_sim,
    "clt": cmd_clt,
    "fdd": cmd_fdd,
    "condition3": cmd_condition3,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rapscale",
        description="Random average surfaces: exact identities, constants, "
                    "and Monte Carlo experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _DISPATCH:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--law", help="ref1 or ref2")
        p.add_argument("--lam", type=float, nargs="+", help="slope vector")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--budget-cells", type=float, dest="budget_cells")
        p.add_argument("--replicas", type=int)
        p.add_argument("--alpha", type=float, help="significance level")
        if name in ("green", "forward-sim", "clt", "condition3"):
            p.add_argument("--x", help="site, comma- or space-separated ints")
        if name in ("green", "losa-scan"):
            p.add_argument("--nmax", type=int)
        if name == "losa-scan":
            p.add_argument("--l", help="first start site")
            p.add_argument("--lp", help="second start site")
        if name in ("variance-scan", "cov-scan", "clt", "fdd", "condition3"):
            p.add_argument("--A", type=float, dest="A")
        if name == "variance-scan":
            p.add_argument("--xs", type=int, nargs="+")
        if name in ("cov-scan", "fdd"):
            p.add_argument("--times", type=float, nargs="+")
            p.add_argument("--n", type=int, dest="n")
        if name == "cov-scan":
            p.add_argument("--zs", help="z points as 'a,b;c,d'")
        if name == "forward-sim":
            p.add_argument("--steps", type=int)
        if name == "clt":
            p.add_argument("--sampler", choices=("dual", "forward"))
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "lam", None) is not None and len(args.lam) == 1:
        args.lam = args.lam[0]
    if getattr(args, "zs", None) is not None:
        args.zs = [tuple(int(v) for v in part.split(","))
                   for part in args.zs.split(";")]
    try:
        cfg = _resolve(args)
        _echo_config(cfg)
        code = _DISPATCH[args.command](cfg)
    except BudgetError as e:
        print(f"budget error: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, TypeError, KeyError, OSError, json.JSONDecodeError,
            MeanConditionError, DegenerateLawError, QuadratureError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return code


if __name__ == "__main__":
    sys.exit(main())
