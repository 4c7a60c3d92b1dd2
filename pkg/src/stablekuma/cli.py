"""Command-line front end.

Subcommands: ``diagnose``, ``dist``, ``sample``, ``gradcheck``, ``bandit``
and ``oracle-regen``.  Every subcommand writes a ``<name>.meta.json``
sidecar into ``--out-dir`` with the resolved arguments.  ``--config FILE``
reads ``key = value`` lines (``#`` starts a comment) whose keys are flag
names without the leading dashes.  Flags given on the command line win
over the file.
"""

import argparse
import itertools
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bandit, diagnostics, kumaraswamy as ks, oracle
from .kumaraswamy import BetaParams, LogParams, UnitValue
from .scalar import DomainError
from .tables import SCHEMAS, write_sidecar, write_table

log = logging.getLogger("stablekuma")

GRAD_TOL = 1e-5
GRID_LOG_PARAMS = (-5.0, -2.0, 0.0, 2.0, 5.0, 12.0)
GRID_POINTS = (1e-6, 0.01, 0.5, 0.99, 1 - 1e-6)


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------


def read_config(path):
    """Parse ``key = value`` lines; keys use dashes or underscores."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _out_path(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _sidecar(args, extra=None):
    write_sidecar(_out_path(args, f"{args.command}.meta.json"), args.command, vars(args), extra)


def cmd_diagnose(args):
    rng = np.random.default_rng(args.seed)
    log2_min = args.log2_min if args.log2_min is not None else (-30.0 if args.precision == "single" else -60.0)
    sweep = diagnostics.log1mexp_sweep(args.grid_points, args.precision, log2_min=log2_min)
    write_table(
        _out_path(args, "log1mexp.csv"), SCHEMAS["log1mexp"],
        zip(sweep.log2_abs_x, sweep.x.astype(np.float64), sweep.oracle, sweep.stable.astype(np.float64),
            sweep.naive.astype(np.float64), sweep.stable_rel_err, sweep.naive_rel_err),
    )
    write_table(_out_path(args, "icdf_logpdf.csv"), SCHEMAS["icdf_logpdf"],
                diagnostics.icdf_logpdf_rows(args.a_values, args.log2_b, args.u_points, args.precision))
    pm_rows = []
    for k in args.pointmass_log2_b:
        for a in args.a_values:
            pm = diagnostics.point_mass(k, a, args.draws, args.precision, rng)
            pm_rows.append((pm.log2_b, pm.a, pm.n_draws, pm.naive_zero_fraction, pm.stable_zero_fraction,
                            pm.oracle_fraction))
    write_table(_out_path(args, "pointmass.csv"), SCHEMAS["pointmass"], pm_rows)

    stable_worst = float(np.max(sweep.stable_rel_err))
    onset = sweep.log2_abs_x[np.isinf(sweep.naive)]
    summary = {
        "stable_max_rel_err": stable_worst,
        "stable_all_finite": bool(np.all(np.isfinite(sweep.stable))),
        "naive_neg_inf_count": int(onset.size),
        "naive_neg_inf_max_log2_abs_x": float(onset.max()) if onset.size else None,
    }
    print(json.dumps(summary, indent=2))
    _sidecar(args, {"summary": summary})
    return 0 if summary["stable_all_finite"] else 1


def _params_from(args):
    if args.a is not None or args.b is not None:
        if args.log_a is not None or args.log_b is not None:
            raise DomainError("give either --a/--b or --log-a/--log-b, not both")
        return LogParams.from_ab(1.0 if args.a is None else args.a, 1.0 if args.b is None else args.b)
    return LogParams(0.0 if args.log_a is None else args.log_a, 0.0 if args.log_b is None else args.log_b)


def _unit(value, name):
    try:
        return UnitValue.from_linear(float(value))
    except DomainError as exc:
        raise DomainError(f"{name}={value}: {exc}") from None


def cmd_dist(args):
    p = _params_from(args)
    q = args.query
    vals = args.values
    grads = None

    def need(n):
        if len(vals) != n:
            raise DomainError(f"{q} takes {n} argument(s), got {len(vals)}")

    if q == "logpdf":
        need(1)
        x = _unit(vals[0], "x")
        value = ks.log_pdf(x, p)
        g = ks.log_pdf_grads(x, p)
        grads = {"d_log_a": g.d_log_a, "d_log_b": g.d_log_b, "d_log_x": g.d_log_x}
    elif q == "icdf":
        need(1)
        u = _unit(vals[0], "u")
        value = ks.icdf(u, p).value
        g = ks.icdf_grads(u, p)
        grads = {"d_log_a": g.d_log_a, "d_log_b": g.d_log_b}
    elif q in ("cdf", "sf"):
        need(1)
        value = (ks.cdf if q == "cdf" else ks.sf)(_unit(vals[0], "x"), p)
    elif q == "entropy":
        need(0)
        value = ks.entropy(p)
        g = ks.entropy_grads(p)
        grads = {"d_log_a": g.d_log_a, "d_log_b": g.d_log_b}
    elif q == "moment":
        need(1)
        n = float(vals[0])
        if n != int(n):
            raise DomainError(f"moment: n must be a positive integer, got {vals[0]}")
        value = ks.moment(int(n), p)
    elif q == "kl-beta":
        need(2)
        prior = BetaParams(float(vals[0]), float(vals[1]))
        value = ks.kl_to_beta(p, prior, args.kl_terms)
        g = ks.kl_to_beta_grads(p, prior, args.kl_terms)
        grads = {"d_log_a": g.d_log_a, "d_log_b": g.d_log_b}
    else:  # pragma: no cover - argparse restricts choices
        raise DomainError(f"unknown query {q}")

    print(f"{float(value):.17g}")
    result = {"value": float(value)}
    if args.grads:
        if grads is None:
            raise DomainError(f"{q}: no analytic gradients available")
        for k, v in grads.items():
            print(f"{k} {float(v):.17g}")
        result["grads"] = {k: float(v) for k, v in grads.items()}
    _sidecar(args, {"result": result})
    return 0


def cmd_sample(args):
    p = _params_from(args)
    if args.precision == "single":
        p = p.astype(np.float32)
    rng = np.random.default_rng(args.seed)
    x = ks.sample(p, rng, size=args.n)
    lx = np.asarray(x.log_value, dtype=np.float64)
    write_table(_out_path(args, "samples.csv"), SCHEMAS["samples"], zip(np.exp(lx), lx))
    _sidecar(args, {"n_written": int(args.n)})
    return 0


def gradcheck_rows(log_params=GRID_LOG_PARAMS, points=GRID_POINTS, method="ridders"):
    """Analytic versus finite-difference gradients over the parameter grid.

    Yields ``(quantity, log_a, log_b, point, analytic, finite_diff, rel_error)``.
    Inverse-CDF derivatives are differenced in ``log x`` and multiplied by
    ``x``, which resolves them even when ``x`` is within ``1e-13`` of 1.
    """
    pts = UnitValue.from_linear(np.asarray(points, dtype=np.float64))
    for la, lb in itertools.product(log_params, log_params):
        p = LogParams(float(la), float(lb))
        g = ks.log_pdf_grads(pts, p)
        fd = oracle.fd_gradient(lambda q: ks.log_pdf(pts, q), p, method=method)
        fdx = oracle.fd_derivative(lambda lx: ks.log_pdf(UnitValue(lx), p), pts.log_value, method=method)
        gi = ks.icdf_grads(pts, p)
        fdi = oracle.fd_gradient(lambda q: ks.icdf(pts, q).log_value, p, method=method)
        x = ks.icdf(pts, p).value
        comps = {
            "logpdf_d_log_a": (g.d_log_a, fd.d_log_a),
            "logpdf_d_log_b": (g.d_log_b, fd.d_log_b),
            "logpdf_d_log_x": (g.d_log_x, fdx),
            "icdf_d_log_a": (gi.d_log_a, x * fdi.d_log_a),
            "icdf_d_log_b": (gi.d_log_b, x * fdi.d_log_b),
        }
        report = oracle.grad_check(comps)
        for name in comps:
            for i, pt in enumerate(points):
                yield (name, la, lb, pt, report.analytic[name][i], report.numeric[name][i],
                       report.rel_error[name][i])
        ge = ks.entropy_grads(p)
        fde = oracle.fd_gradient(ks.entropy, p, method=method)
        # a = b = 1 maximizes entropy; both partials are exactly zero there
        suffix = "_stationary" if la == 0 and lb == 0 else ""
        report = oracle.grad_check({"entropy_d_log_a" + suffix: (ge.d_log_a, fde.d_log_a),
                                    "entropy_d_log_b" + suffix: (ge.d_log_b, fde.d_log_b)})
        for name in report.rel_error:
            yield (name, la, lb, float("nan"), float(report.analytic[name]), float(report.numeric[name]),
                   float(report.rel_error[name]))


STATIONARY_ABS_TOL = 1e-12


def summarize_gradcheck(rows, tol=GRAD_TOL):
    """Worst error per quantity and its verdict.

    Ordinary quantities use the relative error.  ``*_stationary`` rows sit
    where the exact gradient is zero, so the relative error only measures
    round-off against the ``1e-12`` floor; they must instead have both
    values within ``STATIONARY_ABS_TOL`` of zero.
    """
    out = {}
    for name, _, _, _, analytic, fd, err in rows:
        if name.endswith("_stationary"):
            metric, limit, kind = max(abs(analytic), abs(fd)), STATIONARY_ABS_TOL, "max_abs_value"
        else:
            metric, limit, kind = err, tol, "worst_rel_error"
        prev = out.get(name)
        worst = metric if prev is None else max(prev["worst"], metric)
        out[name] = {"worst": worst, "limit": limit, "metric": kind, "passed": worst <= limit}
    return out


def cmd_gradcheck(args):
    rows = list(gradcheck_rows(args.log_params, args.points, args.method))
    write_table(_out_path(args, "gradcheck.csv"), SCHEMAS["gradcheck"], rows)
    summary = summarize_gradcheck(rows, args.tol)
    ok = all(v["passed"] for v in summary.values())
    for name, v in summary.items():
        print(f"{name:<28s} {v['metric']}={v['worst']:.3e} limit={v['limit']:.0e} {'PASS' if v['passed'] else 'FAIL'}")
    _sidecar(args, {"summary": summary, "passed": ok})
    return 0 if ok else 1


def _run_one(job):
    """Worker body for one (policy, seed): returns a summary dict."""
    policy, seed, inst_args, cfg_kwargs, out_dir = job
    inst = bandit.generate_instance(inst_args["K"], inst_args["d"], inst_args["power"], np.random.default_rng([seed, 1]))
    cfg = bandit.VbeConfig(seed=seed, **cfg_kwargs)
    path = os.path.join(out_dir, f"trace_{policy}_seed{seed}.csv")
    start = time.perf_counter()
    try:
        trace = bandit.run(inst, cfg, policy, np.random.default_rng([seed, 2]))
        status = {"aborted_step": None, "error": None}
    except bandit.NonFiniteError as exc:
        trace = exc.trace
        status = {"aborted_step": exc.step, "error": str(exc)}
    write_table(path, SCHEMAS["trace"], [
        (i + 1, trace.arms[i], trace.rewards[i], trace.inst_regret[i], trace.cum_regret[i]) for i in range(len(trace))
    ])
    return {
        "policy": policy,
        "seed": seed,
        "instance_hash": inst.fingerprint(),
        "cum_regret": trace.total_regret,
        "steps": len(trace),
        "random_expected_regret": cfg.T * (inst.best_prob - float(inst.true_probs.mean())),
        "seconds": time.perf_counter() - start,
        "trace_csv": os.path.basename(path),
        **status,
    }


def cmd_bandit(args):
    os.makedirs(args.out_dir, exist_ok=True)
    beta = args.beta_kl
    if beta != bandit.INVERSE_PULLED:
        beta = float(beta)
    minibatch = args.minibatch if args.minibatch == "full" else int(args.minibatch)
    cfg_kwargs = dict(T=args.T, beta_kl=beta, learning_rate=args.lr, minibatch=minibatch,
                      clip_norm=None if args.clip_norm <= 0 else args.clip_norm,
                      hidden_widths=tuple(args.hidden))
    bandit.VbeConfig(**cfg_kwargs)  # validate before fanning out
    inst_args = {"K": args.K, "d": args.d, "power": args.power}
    seeds = [args.seed + i for i in range(args.seeds)]
    jobs = [(pol, s, inst_args, cfg_kwargs, args.out_dir) for pol in args.policy for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    summary = {"runs": results, "policies": {}}
    for pol in args.policy:
        rs = [r for r in results if r["policy"] == pol]
        regrets = np.array([r["cum_regret"] for r in rs])
        summary["policies"][pol] = {
            "mean_cum_regret": float(regrets.mean()),
            "stdv_cum_regret": float(regrets.std(ddof=1)) if len(rs) > 1 else 0.0,
            "n_seeds": len(rs),
            "aborted": [{"seed": r["seed"], "step": r["aborted_step"], "error": r["error"]}
                        for r in rs if r["aborted_step"] is not None],
        }
        print(f"{pol:<18s} cum_regret {regrets.mean():.2f} +- {summary['policies'][pol]['stdv_cum_regret']:.2f}")
    with open(_out_path(args, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _sidecar(args, {"config": cfg_kwargs, "instance": inst_args, "seeds": seeds})
    return 0 if all(not s["aborted"] for s in summary["policies"].values()) else 2


def oracle_rows(seed=0, mc_draws=10**6):
    """Regenerate the derived reference constants from the oracles alone."""
    rng = np.random.default_rng(seed)
    rows = []
    a, b = 2.0, 3.0
    rows.append(("log_pdf(x=0.3;a=2,b=3)", float(oracle.reference_log_pdf(np.log(0.3), a, b)), "reference density"))
    p12 = LogParams.from_ab(1.0, 2.0)
    rows.append(("entropy(a=1,b=2)", oracle.quadrature_expectation(
        lambda x: -oracle.reference_log_pdf(x.log_value, 1.0, 2.0, x.log1m), p12, tol=1e-11), "quadrature"))
    for k in (24.0,):
        rows.append((f"naive_zero_fraction_single(log2_b={k:g})", diagnostics.point_mass_oracle(k, "single"),
                     "rounding threshold 1-exp(-b 2^-25)"))
        rows.append((f"naive_zero_fraction_double(log2_b={k:g})", diagnostics.point_mass_oracle(k, "double"),
                     "rounding threshold 1-exp(-b 2^-54)"))
    p22 = LogParams.from_ab(2.0, 2.0)
    for n in (1, 2, 3):
        rows.append((f"moment(n={n};a=2,b=2)", oracle.quadrature_expectation(lambda x, n=n: x.value ** n, p22, tol=1e-12),
                     "quadrature"))
    p23 = LogParams.from_ab(2.0, 3.0)
    prior = BetaParams(2.5, 3.5)
    from scipy.special import betaln

    def kl_integrand(x):
        lx, l1m = np.asarray(x.log_value), np.asarray(x.log1m)
        logq = oracle.reference_log_pdf(lx, 2.0, 3.0, l1m)
        logp = (prior.alpha - 1) * lx + (prior.beta - 1) * l1m - betaln(prior.alpha, prior.beta)
        return logq - logp

    est = oracle.mc_expectation(kl_integrand, p23, mc_draws, rng)
    rows.append(("kl_to_beta(a=2,b=3||Beta(2.5,3.5)) mc_mean", est.mean, f"monte carlo n={est.n}"))
    rows.append(("kl_to_beta(a=2,b=3||Beta(2.5,3.5)) mc_se", est.standard_error, f"monte carlo n={est.n}"))
    rows.append(("kl_to_beta(a=2,b=3||Beta(2.5,3.5)) quad", oracle.quadrature_expectation(kl_integrand, p23, tol=1e-11),
                 "quadrature"))
    return rows


def cmd_oracle_regen(args):
    rows = oracle_rows(args.seed, args.mc_draws)
    write_table(_out_path(args, "oracle.csv"), SCHEMAS["oracle"], rows)
    for name, value, method in rows:
        print(f"{name:<48s} {value:.17g}  ({method})")
    _sidecar(args)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_params(sp):
    sp.add_argument("--log-a", type=float, default=None)
    sp.add_argument("--log-b", type=float, default=None)
    sp.add_argument("--a", type=float, default=None, help="linear a (alternative to --log-a)")
    sp.add_argument("--b", type=float, default=None, help="linear b (alternative to --log-b)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global random seed")
    common.add_argument("--config", default=None, help="key = value file; command-line flags take precedence")
    common.add_argument("--out-dir", default="stablekuma_out", help="directory for CSV and JSON output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stablekuma", description="Stable Kumaraswamy tools")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("diagnose", parents=[common], help="naive vs stable precision tables")
    sp.add_argument("--precision", choices=sorted(diagnostics.PRECISIONS), default="single")
    sp.add_argument("--grid-points", type=int, default=10**6)
    sp.add_argument("--log2-min", type=float, default=None, help="smallest log2|x| (default -30 single, -60 double)")
    sp.add_argument("--a-values", type=_float_list, default=[0.5, 1.0, 2.0, 5.0])
    sp.add_argument("--log2-b", type=float, default=24.0)
    sp.add_argument("--u-points", type=int, default=201)
    sp.add_argument("--pointmass-log2-b", type=_float_list, default=[20.0, 22.0, 23.0, 24.0, 25.0, 26.0])
    sp.add_argument("--draws", type=int, default=10**6)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("dist", parents=[common], help="evaluate one distribution quantity")
    _add_params(sp)
    sp.add_argument("--grads", action="store_true", help="also print analytic gradients")
    sp.add_argument("--kl-terms", type=int, default=ks.KL_DEFAULT_TERMS)
    sp.add_argument("query", choices=["logpdf", "icdf", "cdf", "sf", "entropy", "moment", "kl-beta"])
    sp.add_argument("values", nargs="*")
    sp.set_defaults(func=cmd_dist)

    sp = sub.add_parser("sample", parents=[common], help="draw samples to CSV")
    _add_params(sp)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--precision", choices=sorted(diagnostics.PRECISIONS), default="double")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    sp.add_argument("--log-params", type=_float_list, default=list(GRID_LOG_PARAMS))
    sp.add_argument("--points", type=_float_list, default=list(GRID_POINTS))
    sp.add_argument("--method", choices=["ridders", "central"], default="ridders")
    sp.add_argument("--tol", type=float, default=GRAD_TOL)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("bandit", parents=[common], help="run bandit experiments")
    sp.add_argument("--policy", nargs="+", choices=[p for p in bandit.POLICIES if p != "oracle"], default=["vbe-ks"])
    sp.add_argument("--K", type=int, default=1000)
    sp.add_argument("--d", type=int, default=5)
    sp.add_argument("--power", type=int, default=5)
    sp.add_argument("--T", type=int, default=2000)
    sp.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--minibatch", default="256", help="records per step or 'full'")
    sp.add_argument("--beta-kl", default=bandit.INVERSE_PULLED)
    sp.add_argument("--clip-norm", type=float, default=1.0, help="gradient norm cap; <= 0 disables")
    sp.add_argument("--hidden", type=_int_list, default=[32, 32, 32])
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_bandit)

    sp = sub.add_parser("oracle-regen", parents=[common], help="recompute derived reference values")
    sp.add_argument("--mc-draws", type=int, default=10**6)
    sp.set_defaults(func=cmd_oracle_regen)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        conf = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in conf.items():
            if key not in known or key in ("config", "help", "command"):
                parser.error(f"config key {key!r} is not an option of {args.command}")
            action = known[key]
            conv = action.type or str
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    defaults[key] = raw.lower() in ("1", "true", "yes", "on")
                elif action.nargs in ("+", "*"):
                    defaults[key] = [conv(v) for v in raw.replace(",", " ").split()]
                else:
                    defaults[key] = conv(raw)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"config key {key!r}: bad value {raw!r} ({exc})")
            if action.choices is not None:
                vals = defaults[key] if isinstance(defaults[key], list) else [defaults[key]]
                bad = [v for v in vals if v not in action.choices]
                if bad:
                    parser.error(f"config key {key!r}: invalid choice {bad[0]!r}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
