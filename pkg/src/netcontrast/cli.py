"""Command-line interface.

Subcommands: generate (synthetic observation sets), recover (node-support
recovery on matrices from disk), refine (low-rank refinement given a
support), experiment (preset/config Monte-Carlo sweeps to CSV), oracle
(exhaustive least-squares support search for small matrices).

Exit codes: 0 success, 1 configuration/usage error, 2 solver
non-convergence (or total estimator failure) in single-shot modes.
"""

import argparse
import json
import logging
import math
import sys

from pathlib import Path

import numpy as np

from . import harness, matio, model, refine, spectral, support
from .harness import ConfigError

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_solver_flags(p):
    p.add_argument("--sdp-rank", type=int, default=3, help="factor width of the SDP solver")
    p.add_argument("--sdp-feas-tol", type=float, default=1e-6, help="relative feasibility tolerance")
    p.add_argument("--sdp-restarts", type=int, default=3, help="jittered restarts, best kept")
    p.add_argument("--gl-rho", type=float, default=1.0, help="ADMM penalty parameter")
    p.add_argument("--gl-tol", type=float, default=None, help="ADMM stopping tolerance (default 1e-6*||Y||_F)")
    p.add_argument("--gl-max-iter", type=int, default=5000, help="ADMM iteration cap")
    p.add_argument("--gl-grid", type=int, default=40, help="penalty-path grid size")
    p.add_argument("--seed", type=int, default=0, help="solver RNG seed")


def _sdp_opts_from(args):
    return support.SdpOptions(
        factor_rank=args.sdp_rank,
        feas_tol=args.sdp_feas_tol,
        restarts=args.sdp_restarts,
    )


def _build_parser():
    parser = _Parser(prog="netcontrast",
                     description="Shared low-rank structure and node-sparse "
                                 "contrasts between groups of networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic observation set")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--r", type=int, default=3)
    g.add_argument("--mu", default="log(n)", help="coherence target (expression in n, r)")
    g.add_argument("--m", default="10", help="support size (expression in n, r)")
    g.add_argument("--sigma-b", default="2*n**(-0.25)*log(n)**0.25",
                   help="perturbation scale (expression in n, r)")
    g.add_argument("--eigenvalues", default="3*sqrt(n) + (r - i)*log(n)",
                   help="eigenvalue rule (expression in n, r, i)")
    g.add_argument("--noise", default="gaussian-iid", choices=model.NOISE_FAMILIES)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--sigma-min", type=float, default=0.8)
    g.add_argument("--sigma-max", type=float, default=1.3)
    g.add_argument("--g0", type=int, default=1, help="number of control observations")
    g.add_argument("--g1", type=int, default=1, help="number of treatment observations")
    g.add_argument("--shared", action="store_true",
                   help="all treatments share one perturbation")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("recover", help="node-support recovery on matrices from disk")
    r.add_argument("--y1", nargs="+", required=True, help="treatment matrices")
    r.add_argument("--y0", nargs="*", default=[], help="control matrices")
    r.add_argument("--rank", type=int, default=0, help="shared-structure rank (0 = none)")
    r.add_argument("--method", default="sdp",
                   choices=["sdp", "sdp-trunc", "sdp-multi", "glasso", "hard", "lse"])
    r.add_argument("--m", type=int, default=None, help="support size")
    r.add_argument("--m-auto", action="store_true", help="select the support size automatically")
    r.add_argument("--c-thresh", type=float, default=1.0, help="m-selection slack constant")
    r.add_argument("--no-screen", action="store_true", help="skip coherence screening")
    r.add_argument("--c-screen", type=float, default=2.0, help="screening constant")
    r.add_argument("--out", default=None, help="write the JSON record here (default stdout)")
    _add_solver_flags(r)
    r.set_defaults(func=_cmd_recover)

    f = sub.add_parser("refine", help="refine the shared low-rank matrix")
    f.add_argument("--y1", nargs="*", default=[], help="treatment matrices")
    f.add_argument("--y0", nargs="+", required=True, help="control matrices")
    f.add_argument("--rank", type=int, required=True)
    f.add_argument("--support", default="", help="comma-separated node indices to mask")
    f.add_argument("--refine", default="all", choices=["spec", "mhat1", "mhat2", "all"],
                   dest="which", help="which estimators to emit")
    f.add_argument("--truth", default=None, help="matrix to report linf errors against")
    f.add_argument("--truth-support", default=None,
                   help="true support for the contamination flag")
    f.add_argument("--emit", default=None, help="directory for estimate matrices")
    f.add_argument("--out", default=None, help="write the JSON record here (default stdout)")
    f.set_defaults(func=_cmd_refine)

    e = sub.add_parser("experiment", help="run a Monte-Carlo preset or config file")
    group = e.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=harness.preset_names())
    group.add_argument("--config", help="flat key=value config file")
    e.add_argument("--out", default=None, help="results CSV path")
    e.add_argument("--summary", default=None, help="summary CSV path")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--timing", action="store_true", help="record per-method runtimes")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--trials", type=int, default=None)
    e.add_argument("--n", default=None, help="comma-separated n values")
    e.add_argument("--methods", default=None, help="comma-separated method names")
    e.add_argument("--params", default=None, help="comma-separated parameter points")
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    e.set_defaults(func=_cmd_experiment)

    o = sub.add_parser("oracle", help="exhaustive least-squares support search")
    o.add_argument("--matrix", required=True)
    o.add_argument("--m", type=int, required=True)
    o.add_argument("--limit", type=int, default=16)
    o.add_argument("--out", default=None)
    o.set_defaults(func=_cmd_oracle)

    return parser


def _emit_json(record, path):
    text = json.dumps(record, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_generate(args):
    rng = np.random.default_rng(args.seed)
    n, r = args.n, args.r
    mu = harness.eval_rule(args.mu, n=n, r=r)
    m = int(round(harness.eval_rule(args.m, n=n, r=r)))
    sigma_b = harness.eval_rule(args.sigma_b, n=n, r=r)
    vals = np.array([harness.eval_rule(args.eigenvalues, n=n, r=r, i=i)
                     for i in range(1, r + 1)])
    noise = model.NoiseSpec(family=args.noise, sigma=args.sigma,
                            sigma_min=args.sigma_min, sigma_max=args.sigma_max)
    basis = model.sample_incoherent_basis(n, r, mu, rng)
    n_perturb = 1 if args.shared else args.g1
    perturbations = [model.sample_node_sparse(n, m, sigma_b, rng)
                     for _ in range(n_perturb)]
    truth = model.GroundTruth(basis=basis, eigenvalues=vals, perturbations=perturbations)
    obs = model.assemble_observations(truth, noise, args.g0, args.g1, rng,
                                      shared=args.shared)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matio.write_matrix(out / "mstar.txt", truth.shared_matrix())
    for k, y in enumerate(obs.g0):
        matio.write_matrix(out / f"y0_{k:02d}.txt", y)
    for j, y in enumerate(obs.g1):
        matio.write_matrix(out / f"y1_{j:02d}.txt", y)
    for j, (b, _) in enumerate(truth.perturbations):
        matio.write_matrix(out / f"b_{j:02d}.txt", b)
    meta = {
        "n": n, "r": r, "m": m, "mu_target": mu, "mu_realized": truth.mu,
        "kappa": truth.kappa, "sigma_b": sigma_b,
        "eigenvalues": [float(v) for v in truth.eigenvalues],
        "supports": [[int(i) for i in sup] for _, sup in truth.perturbations],
        "noise": {"family": noise.family, "sigma": noise.sigma,
                  "sigma_min": noise.sigma_min, "sigma_max": noise.sigma_max},
        "g0": args.g0, "g1": args.g1, "shared": args.shared, "seed": args.seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    print(f"wrote {args.g0} control and {args.g1} treatment matrices to {out}")
    return 0


def _read_matrices(paths):
    return [matio.read_matrix(p) for p in paths]


def _cmd_recover(args):
    try:
        y1s = _read_matrices(args.y1)
        y0s = _read_matrices(args.y0)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    n = y1s[0].shape[0]
    rank = args.rank
    if rank > 0 and not y0s:
        raise ConfigError("--rank > 0 needs at least one control matrix (--y0)")
    base = y0s if y0s else [y1s[0]]
    dec = spectral.spectral_init(base, rank)
    if args.no_screen:
        kept = None
        resids = [spectral.form_residual(y, dec) for y in y1s]
    else:
        screening = spectral.select_low_coherence(dec, args.c_screen)
        kept = screening.kept
        resids = [spectral.form_residual(y, dec, screening) for y in y1s]
    try:
        tau = spectral.estimate_noise_scale(base[0], dec)
    except ValueError:
        tau = None
    avg = resids[0] if len(resids) == 1 else np.mean(np.stack(resids), axis=0)
    nt = avg.shape[0]

    record = {"n": n, "rank": rank, "method": args.method,
              "kept_count": int(nt), "tau": tau}
    rng = np.random.default_rng(args.seed)
    opts = _sdp_opts_from(args)

    m = args.m
    if args.m_auto:
        if tau is None:
            raise ConfigError("--m-auto needs a noise-scale estimate")
        m0 = m if m is not None else int(math.ceil(2 * math.log(nt)))
        sel = support.select_m(avg, tau, m0, c_thresh=args.c_thresh, opts=opts, rng=rng)
        m = sel.m
        record["m_auto"] = {"m": int(sel.m), "converged": sel.converged,
                            "steps": sel.steps}
    if m is None:
        raise ConfigError("either --m or --m-auto is required")
    record["m"] = int(m)

    converged = True
    if args.method in ("sdp", "sdp-trunc", "sdp-multi"):
        if args.method == "sdp":
            cost = support.build_cost(avg)
        elif args.method == "sdp-trunc":
            if tau is None:
                raise ConfigError("--method sdp-trunc needs a noise-scale estimate")
            cost = support.build_cost(avg, mode="truncated", tau=tau)
        else:
            if len(resids) < 2:
                raise ConfigError("--method sdp-multi needs at least two --y1 matrices")
            cost = support.build_cost(resids, mode="multi")
        sol = support.solve_sdp(cost, m, opts=opts, rng=rng)
        est = support.extract_support(sol, m)
        converged = sol.converged
        record["sdp"] = {"objective": sol.objective,
                         "trace_residual": sol.trace_residual,
                         "sum_residual": sol.sum_residual,
                         "iterations": sol.iterations,
                         "converged": sol.converged}
    elif args.method == "glasso":
        grid = support.lambda_grid(avg, num=args.gl_grid)
        est = support.group_lasso_support(avg, m, grid=grid, rho=args.gl_rho,
                                          tol=args.gl_tol, max_iter=args.gl_max_iter)
    elif args.method == "hard":
        est = support.hard_threshold(avg, m)
    else:
        est = support.exhaustive_support(avg, m)

    indices = est.indices if kept is None else np.asarray(kept, dtype=int)[est.indices]
    record["support"] = [int(i) for i in indices]
    record["converged"] = bool(converged)
    _emit_json(record, args.out)
    return 0 if converged else 2


def _parse_indices(text):
    text = text.strip()
    if not text:
        return np.array([], dtype=int)
    try:
        return np.array(sorted({int(tok) for tok in text.split(",")}), dtype=int)
    except ValueError:
        raise ConfigError(f"bad index list {text!r}") from None


def _cmd_refine(args):
    try:
        y1s = _read_matrices(args.y1)
        y0s = _read_matrices(args.y0)
        truth = matio.read_matrix(args.truth) if args.truth else None
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    sup = _parse_indices(args.support)
    masked1 = [refine.mask_support(y, sup) for y in y1s]
    masked0 = [refine.mask_support(y, sup) for y in y0s]
    if masked1:
        upper = np.mean(np.stack(masked1), axis=0)
        lower, extras = masked0[0], masked0[1:3]
    else:
        if len(masked0) < 2:
            raise ConfigError("refine needs either --y1 plus one --y0, or two --y0")
        upper, lower, extras = masked0[0], masked0[1], masked0[2:4]

    wanted = ["spec", "mhat1", "mhat2"] if args.which == "all" else [args.which]
    record = {"rank": args.rank, "support": [int(i) for i in sup], "estimators": {}}
    if args.truth_support is not None:
        truth_sup = _parse_indices(args.truth_support)
        record["contaminated"] = not set(truth_sup.tolist()) <= set(sup.tolist())

    dec = None
    estimates = {}
    for meth in wanted:
        try:
            if meth == "spec":
                est = refine.spectral_baseline(masked1 + masked0, args.rank)
            else:
                if dec is None:
                    composite = refine.asymmetric_combine(upper, lower)
                    dec = refine.asymmetric_eigenpairs(composite, args.rank)
                if meth == "mhat1":
                    est = refine.reconstruct_symmetric(
                        refine.debiased_eigenvectors(dec), dec.values)
                else:
                    if len(extras) < 2:
                        raise ValueError("mhat2 needs two extra control matrices")
                    corr = refine.eigenspace_correction(dec, extras[0], extras[1])
                    est = refine.whitened_reconstruction(dec, corr)
            entry = {"ok": True}
            if truth is not None:
                masked_truth = refine.mask_support(truth, sup)
                entry["linf_complement"] = refine.entry_error(est, masked_truth)
                entry["linf_full"] = refine.entry_error(est, truth)
            estimates[meth] = est
            record["estimators"][meth] = entry
        except (np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("estimator %s failed: %s", meth, exc)
            record["estimators"][meth] = {"ok": False, "error": str(exc)}

    if args.emit:
        out = Path(args.emit)
        out.mkdir(parents=True, exist_ok=True)
        for meth, est in estimates.items():
            matio.write_matrix(out / f"{meth}.txt", est)
            record["estimators"][meth]["file"] = str(out / f"{meth}.txt")
    _emit_json(record, args.out)
    return 0 if estimates else 2


def _cmd_experiment(args):
    if args.config:
        cfg = harness.read_config(args.config)
    else:
        cfg = harness.config_from_mapping({"preset": args.preset})
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.trials is not None:
        overrides["trials"] = str(args.trials)
    if args.n is not None:
        overrides["n"] = args.n
    if args.methods is not None:
        overrides["methods"] = args.methods
    if args.params is not None:
        overrides["params"] = args.params
    for item in args.set:
        key, eq, val = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = val.strip()
    if overrides or args.timing:
        merged = {"preset": cfg.preset, "seed": str(cfg.seed),
                  "timing": "1" if (cfg.timing or args.timing) else "0"}
        if cfg.n_list is not None:
            merged["n"] = ",".join(str(n) for n in cfg.n_list)
        if cfg.trials is not None:
            merged["trials"] = str(cfg.trials)
        if cfg.methods is not None:
            merged["methods"] = ",".join(cfg.methods)
        if cfg.params is not None:
            merged["params"] = ",".join(cfg.params)
        merged.update(cfg.options)
        merged.update(overrides)
        cfg = harness.config_from_mapping(merged)

    result = harness.run_experiment(cfg, threads=args.threads)
    if args.out:
        harness.write_results(result, args.out)
        print(f"wrote {len(result.rows)} rows to {args.out}")
    if args.summary:
        harness.write_summary(result, args.summary)
        print(f"wrote summary to {args.summary}")
    if not args.out and not args.summary:
        for g in result.summary():
            print(f"n={g['n']} method={g['method']} param={g['param']} "
                  f"mean={g['mean']:.4f} sd={g['sd']:.4f} "
                  f"ci=[{g['ci_low']:.4f}, {g['ci_high']:.4f}] count={g['count']}")
    return 0


def _cmd_oracle(args):
    try:
        mat = matio.read_matrix(args.matrix)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    try:
        est = support.exhaustive_support(mat, args.m, limit=args.limit)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    comp = np.setdiff1d(np.arange(mat.shape[0]), est.indices)
    block = mat[np.ix_(comp, comp)] ** 2
    record = {
        "n": int(mat.shape[0]),
        "m": int(args.m),
        "support": [int(i) for i in est.indices],
        "complement_energy": 0.5 * (float(block.sum()) + float(np.trace(block))),
    }
    _emit_json(record, args.out)
    return 0


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
