"""Reproducible Monte-Carlo experiment harness.

Presets mirror the synthetic studies behind the estimators at desk scale:
support-recovery phase transitions, the decoy construction where row-energy
methods fail, multi-copy and truncated costs under heteroscedastic or
heavy-tailed noise, screening on spiky eigenvectors, refinement error sweeps,
and the group-lasso penalty path.  Runs are deterministic for a given base
seed regardless of thread count: every trial derives its generators from
(seed, n-index, param-index, trial, stream) and rows are emitted in a fixed
order.
"""

import csv
import logging
import math
import time

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model, refine, spectral, support

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Invalid experiment configuration (bad key, value, rule, or preset)."""


# ---------------------------------------------------------------------------
# rule expressions

_RULE_NAMES = {
    name: getattr(math, name)
    for name in ("log", "log2", "log10", "sqrt", "exp", "ceil", "floor", "pi", "e")
}
_RULE_NAMES.update(abs=abs, min=min, max=max)


def eval_rule(expr, **variables):
    """Evaluate a scalar rule like "2*n**(-0.25)*log(n)**0.25".

    Only arithmetic, the math helpers (log, sqrt, ceil, floor, exp, pi, e,
    abs, min, max), and the supplied variables are visible.
    """
    try:
        value = eval(expr, {"__builtins__": {}}, {**_RULE_NAMES, **variables})
    except Exception as exc:
        raise ConfigError(f"cannot evaluate rule {expr!r}: {exc}") from None
    return float(value)


# ---------------------------------------------------------------------------
# configuration

_CONFIG_KEYS = {
    "preset", "n", "trials", "seed", "methods", "params", "timing", "threads",
    "r", "m", "mu", "sigma_b", "eigenvalues",
    "noise", "sigma", "sigma_min", "sigma_max", "truncation",
    "c_screen",
    "sdp_rank", "sdp_restarts", "sdp_feas_tol", "sdp_max_inner", "sdp_max_outer",
    "gl_rho", "gl_tol", "gl_max_iter", "gl_grid", "lambda_floor",
}


@dataclass
class ExperimentConfig:
    """A preset name plus overrides; None fields fall back to preset defaults."""

    preset: str
    n_list: tuple = None
    trials: int = None
    seed: int = 0
    methods: tuple = None
    params: tuple = None
    timing: bool = False
    options: dict = field(default_factory=dict)


def read_config(path):
    """Parse a flat key=value config file ('#' starts a comment)."""
    raw = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = text.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            if not val:
                raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
            raw[key] = val
    if "preset" not in raw:
        raise ConfigError(f"{path}: missing required key 'preset'")
    return config_from_mapping(raw)


def config_from_mapping(raw):
    raw = dict(raw)
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}")
    try:
        cfg = ExperimentConfig(
            preset=raw.pop("preset"),
            n_list=_int_tuple(raw.pop("n")) if "n" in raw else None,
            trials=int(raw.pop("trials")) if "trials" in raw else None,
            seed=int(raw.pop("seed", 0)),
            methods=_str_tuple(raw.pop("methods")) if "methods" in raw else None,
            params=_str_tuple(raw.pop("params")) if "params" in raw else None,
            timing=_parse_bool(raw.pop("timing", "0")),
            options=raw,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.trials is not None and cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    if cfg.n_list is not None and any(n < 1 for n in cfg.n_list):
        raise ConfigError("n values must be positive")
    return cfg


def _int_tuple(text):
    return tuple(int(tok) for tok in text.split(",") if tok.strip() != "")


def _str_tuple(text):
    return tuple(tok.strip() for tok in text.split(",") if tok.strip() != "")


def _parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# ---------------------------------------------------------------------------
# results

@dataclass
class ResultRow:
    n: int
    method: str
    param: str
    trial: int
    value: float
    runtime_ms: float
    converged: bool


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list

    def summary(self, level=0.95, resamples=1000):
        """Per-(n, method, param) mean, sd, bootstrap CI over non-nan values."""
        groups = {}
        order = []
        for row in self.rows:
            key = (row.n, row.method, row.param)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(row.value)
        out = []
        for gi, key in enumerate(order):
            vals = np.array([v for v in groups[key] if not math.isnan(v)])
            if vals.size == 0:
                out.append({"n": key[0], "method": key[1], "param": key[2],
                            "mean": math.nan, "sd": math.nan,
                            "ci_low": math.nan, "ci_high": math.nan, "count": 0})
                continue
            mean = float(vals.mean())
            sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            if vals.size > 1:
                rng = np.random.default_rng(
                    np.random.SeedSequence(self.config.seed, spawn_key=(1 << 20, gi)))
                lo, hi = bootstrap_ci(vals, level=level, resamples=resamples, rng=rng)
            else:
                lo = hi = mean
            out.append({"n": key[0], "method": key[1], "param": key[2],
                        "mean": mean, "sd": sd, "ci_low": lo, "ci_high": hi,
                        "count": int(vals.size)})
        return out


def bootstrap_ci(samples, level=0.95, resamples=1000, rng=None):
    """Percentile bootstrap interval for the mean."""
    arr = np.asarray(samples, dtype=float)
    if arr.size < 2:
        raise ValueError("need at least 2 samples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = rng.integers(0, arr.size, size=(resamples, arr.size))
    means = arr[idx].mean(axis=1)
    half = 100.0 * (1.0 - level) / 2.0
    return float(np.percentile(means, half)), float(np.percentile(means, 100.0 - half))


def _fmt_value(v):
    return "nan" if math.isnan(v) else f"{v:.10g}"


def write_results(result, path):
    """Rows as CSV with header n,method,param,trial,value,runtime_ms,converged."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "method", "param", "trial", "value", "runtime_ms", "converged"])
        for r in result.rows:
            writer.writerow([r.n, r.method, r.param, r.trial,
                             _fmt_value(r.value), f"{r.runtime_ms:.3f}", int(r.converged)])


def write_summary(result, path, level=0.95, resamples=1000):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "method", "param", "mean", "sd", "ci_low", "ci_high", "count"])
        for g in result.summary(level=level, resamples=resamples):
            writer.writerow([g["n"], g["method"], g["param"],
                             _fmt_value(g["mean"]), _fmt_value(g["sd"]),
                             _fmt_value(g["ci_low"]), _fmt_value(g["ci_high"]), g["count"]])


# ---------------------------------------------------------------------------
# engine

@dataclass
class _Plan:
    n_list: tuple
    trials: int
    methods: tuple
    params: tuple
    cell: object            # see per_trial
    per_trial: bool = False
    # cell signatures:
    #   per_trial=False: cell(n, param, data_rng, method_rngs, timing)
    #                    -> [(method, value, runtime_ms, converged), ...]
    #   per_trial=True:  cell(n, data_rng, method_rngs, timing)
    #                    -> [(method, param, value, runtime_ms, converged), ...]


def _child_rng(seed, ni, pj, trial, stream):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ni, pj, trial, stream)))


def run_experiment(cfg, threads=1):
    """Run a configured experiment; deterministic given cfg and seed.

    Per-trial failures are logged and recorded as nan rows with a cleared
    convergence flag; they never abort the sweep.
    """
    plan = build_plan(cfg)
    if plan.per_trial:
        tasks = [(ni, 0, t) for ni in range(len(plan.n_list)) for t in range(plan.trials)]
    else:
        tasks = [(ni, pj, t)
                 for ni in range(len(plan.n_list))
                 for pj in range(len(plan.params))
                 for t in range(plan.trials)]

    def work(key):
        ni, pj, t = key
        n = plan.n_list[ni]
        data_rng = _child_rng(cfg.seed, ni, pj, t, 0)
        mrngs = {meth: _child_rng(cfg.seed, ni, pj, t, 1 + k)
                 for k, meth in enumerate(plan.methods)}
        try:
            if plan.per_trial:
                out = plan.cell(n, data_rng, mrngs, cfg.timing)
            else:
                out = plan.cell(n, plan.params[pj], data_rng, mrngs, cfg.timing)
        except Exception:
            logger.warning("trial failed (n=%d, param-index=%d, trial=%d)",
                           n, pj, t, exc_info=True)
            if plan.per_trial:
                out = [(meth, param, math.nan, 0.0, False)
                       for param in plan.params for meth in plan.methods]
            else:
                out = [(meth, math.nan, 0.0, False) for meth in plan.methods]
        return key, out

    results = {}
    if threads <= 1:
        for key in tasks:
            key, out = work(key)
            results[key] = out
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for key, out in pool.map(work, tasks):
                results[key] = out

    rows = []
    for ni, n in enumerate(plan.n_list):
        for pj, param in enumerate(plan.params):
            for t in range(plan.trials):
                if plan.per_trial:
                    emitted = {(meth, par): (val, ms, conv)
                               for meth, par, val, ms, conv in results[(ni, 0, t)]}
                    for meth in plan.methods:
                        val, ms, conv = emitted.get((meth, param), (math.nan, 0.0, False))
                        rows.append(ResultRow(n, meth, param, t, val, ms, conv))
                else:
                    for meth, val, ms, conv in results[(ni, pj, t)]:
                        rows.append(ResultRow(n, meth, param, t, val, ms, conv))
    return ExperimentResult(config=cfg, rows=rows)


# ---------------------------------------------------------------------------
# shared cell helpers

def _timed(fn, timing):
    if not timing:
        return fn(), 0.0
    t0 = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - t0) * 1e3


def _sdp_opts(o):
    return support.SdpOptions(
        factor_rank=int(o.get("sdp_rank", 3)),
        feas_tol=float(o.get("sdp_feas_tol", 1e-6)),
        restarts=int(o.get("sdp_restarts", 3)),
        max_inner=int(o.get("sdp_max_inner", 300)),
        max_outer=int(o.get("sdp_max_outer", 80)),
    )


def _gl_kwargs(o):
    return {
        "rho": float(o.get("gl_rho", 1.0)),
        "tol": float(o["gl_tol"]) if "gl_tol" in o else None,
        "max_iter": int(o.get("gl_max_iter", 5000)),
    }


def _noise_from(o, default_family, default_sigma=1.0):
    try:
        return model.NoiseSpec(
            family=o.get("noise", default_family),
            sigma=float(o.get("sigma", default_sigma)),
            sigma_min=float(o.get("sigma_min", 0.8)),
            sigma_max=float(o.get("sigma_max", 1.3)),
            truncation=float(o["truncation"]) if "truncation" in o else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


_SUPPORT_METHODS = ("sdp", "sdp-trunc", "sdp-multi", "glasso", "hard", "lse")


def _support_fnr(methods, resids, tau, m, truth, kept, mrngs, o, timing):
    """One trial's FNR per support method; resids is a matrix or list of copies."""
    copies = [resids] if isinstance(resids, np.ndarray) else list(resids)
    avg = copies[0] if len(copies) == 1 else np.mean(np.stack(copies), axis=0)
    sdp_opts = _sdp_opts(o)
    gl = _gl_kwargs(o)
    rows = []
    for meth in methods:
        def run(meth=meth):
            conv = True
            if meth in ("sdp", "sdp-trunc", "sdp-multi"):
                if meth == "sdp":
                    cost = support.build_cost(avg)
                elif meth == "sdp-trunc":
                    cost = support.build_cost(avg, mode="truncated", tau=tau)
                else:
                    cost = support.build_cost(copies, mode="multi")
                sol = support.solve_sdp(cost, m, opts=sdp_opts, rng=mrngs[meth])
                est = support.extract_support(sol, m)
                conv = sol.converged
            elif meth == "glasso":
                grid = support.lambda_grid(avg, num=int(o.get("gl_grid", 40)),
                                           floor_ratio=float(o.get("lambda_floor", 0.85)))
                est = support.group_lasso_support(avg, m, grid=grid, **gl)
            elif meth == "hard":
                est = support.hard_threshold(avg, m)
            elif meth == "lse":
                est = support.exhaustive_support(avg, m)
            else:
                raise ConfigError(f"method {meth!r} is not a support method")
            idx = est.indices if kept is None else np.asarray(kept, dtype=int)[est.indices]
            return support.false_negative_rate(idx, truth), conv
        try:
            (value, conv), ms = _timed(run, timing)
        except Exception:
            logger.warning("method %s failed", meth, exc_info=True)
            value, conv, ms = math.nan, False, 0.0
        rows.append((meth, value, ms, conv))
    return rows


def _planted_truth(n, r, mu, eig_rule, data_rng, o):
    basis = model.sample_incoherent_basis(n, r, mu, data_rng)
    vals = np.array([eval_rule(eig_rule, n=n, i=i, r=r) for i in range(1, r + 1)])
    return basis, vals


def _check_methods(cfg, allowed, default):
    methods = cfg.methods or default
    bad = [m for m in methods if m not in allowed]
    if bad:
        raise ConfigError(f"methods {bad} not valid for preset {cfg.preset!r}")
    return methods


def _rule(o, key, default, n_list, positive=True, extra=None):
    expr = o.get(key, default)
    for n in n_list:
        val = eval_rule(expr, n=n, **(extra or {}))
        if positive and not val > 0:
            raise ConfigError(f"rule {key} = {expr!r} is not positive at n={n}")
    return expr


# ---------------------------------------------------------------------------
# presets

def _build_snr(cfg):
    """Planted-model FNR sweep over the perturbation scale coefficient C."""
    n_list = cfg.n_list or (300,)
    trials = cfg.trials or 20
    methods = _check_methods(cfg, _SUPPORT_METHODS, ("sdp", "glasso"))
    params = cfg.params or ("0.8", "1.2", "1.6", "2.0", "2.4")
    o = cfg.options
    r = int(o.get("r", 3))
    mu_rule = _rule(o, "mu", "log(n)", n_list, extra={"r": r})
    m_rule = _rule(o, "m", "10", n_list, extra={"r": r})
    sb_rule = _rule(o, "sigma_b", "C * n**(-0.25) * log(n)**0.25", n_list,
                    extra={"r": r, "C": 1.0})
    eig_rule = o.get("eigenvalues", "3*sqrt(n) + (r - i)*log(n)")
    noise = _noise_from(o, "gaussian-iid")
    c_screen = float(o.get("c_screen", 2.0))

    def cell(n, param, data_rng, mrngs, timing):
        coeff = float(param)
        mu = eval_rule(mu_rule, n=n, r=r)
        m = int(round(eval_rule(m_rule, n=n, r=r)))
        sigma_b = eval_rule(sb_rule, n=n, r=r, C=coeff)
        basis, vals = _planted_truth(n, r, mu, eig_rule, data_rng, o)
        b, truth_sup = model.sample_node_sparse(n, m, sigma_b, data_rng)
        gt = model.GroundTruth(basis=basis, eigenvalues=vals, perturbations=[(b, truth_sup)])
        obs = model.assemble_observations(gt, noise, 1, 1, data_rng)
        dec = spectral.spectral_init(obs.g0, r)
        keep = spectral.select_low_coherence(dec, c_screen)
        resid = spectral.form_residual(obs.g1[0], dec, keep)
        try:
            tau = spectral.estimate_noise_scale(obs.g0[0], dec)
        except ValueError:
            tau = None
        return _support_fnr(methods, resid, tau, m, truth_sup, keep.kept, mrngs, o, timing)

    return _Plan(n_list, trials, methods, params, cell)


def _build_glfail(cfg):
    """Decoy construction: planted rows plus decoy rows with larger energy."""
    n_list = cfg.n_list or (200,)
    trials = cfg.trials or 50
    methods = _check_methods(cfg, _SUPPORT_METHODS, ("sdp", "glasso", "hard"))
    params = cfg.params or ("decoy",)
    o = cfg.options
    noise = _noise_from(o, "gaussian-iid")

    def cell(n, param, data_rng, mrngs, timing):
        b, signal, _ = model.sample_decoy_perturbation(n, data_rng)
        y = b + model.sample_noise(n, noise, data_rng)
        return _support_fnr(methods, y, None, len(signal), signal, None, mrngs, o, timing)

    return _Plan(n_list, trials, methods, params, cell)


def _build_multicopy(cfg):
    """Product cost from two copies vs squared averaged copy, row-hetero noise."""
    n_list = cfg.n_list or (400,)
    trials = cfg.trials or 20
    methods = _check_methods(cfg, _SUPPORT_METHODS, ("sdp-multi", "sdp"))
    params = cfg.params or ("3.2",)
    o = cfg.options
    m_rule = _rule(o, "m", "ceil(2*log(n))", n_list)
    sb_rule = _rule(o, "sigma_b", "C * n**(-0.25) * log(n)**0.25", n_list, extra={"C": 1.0})
    noise = _noise_from(o, "gaussian-row-hetero")

    def cell(n, param, data_rng, mrngs, timing):
        coeff = float(param)
        m = int(round(eval_rule(m_rule, n=n)))
        sigma_b = eval_rule(sb_rule, n=n, C=coeff)
        b, truth_sup = model.sample_node_sparse(n, m, sigma_b, data_rng)
        y1 = b + model.sample_noise(n, noise, data_rng)
        y2 = b + model.sample_noise(n, noise, data_rng)
        return _support_fnr(methods, [y1, y2], None, m, truth_sup, None, mrngs, o, timing)

    return _Plan(n_list, trials, methods, params, cell)


def _build_heavytail(cfg):
    """Truncated vs vanilla cost under scaled Student-t(4) noise."""
    n_list = cfg.n_list or (400,)
    trials = cfg.trials or 20
    methods = _check_methods(cfg, _SUPPORT_METHODS, ("sdp-trunc", "sdp"))
    params = cfg.params or ("2.0",)
    o = cfg.options
    m_rule = _rule(o, "m", "ceil(2*log(n))", n_list)
    sb_rule = _rule(o, "sigma_b", "C * n**(-0.25) * log(n)**0.25", n_list, extra={"C": 1.0})
    noise = _noise_from(o, "scaled-t4")

    def cell(n, param, data_rng, mrngs, timing):
        coeff = float(param)
        m = int(round(eval_rule(m_rule, n=n)))
        sigma_b = eval_rule(sb_rule, n=n, C=coeff)
        b, truth_sup = model.sample_node_sparse(n, m, sigma_b, data_rng)
        y = b + model.sample_noise(n, noise, data_rng)
        dec0 = spectral.spectral_init(y, 0)
        tau = spectral.estimate_noise_scale(y, dec0)
        return _support_fnr(methods, y, tau, m, truth_sup, None, mrngs, o, timing)

    return _Plan(n_list, trials, methods, params, cell)


def _parse_param_fields(param):
    fields = {}
    for part in str(param).split("|"):
        key, _, val = part.partition("=")
        if not val:
            raise ConfigError(f"malformed param {param!r}; expected key=value|key=value")
        fields[key.strip()] = val.strip()
    return fields


def _build_coherence(cfg):
    """Screening on/off across eigenvector coherence levels."""
    n_list = cfg.n_list or (500,)
    trials = cfg.trials or 20
    methods = _check_methods(cfg, _SUPPORT_METHODS, ("sdp",))
    mu_exprs = ("log(n)", "sqrt(n/log(n))", "sqrt(n)*log(n)", "n**0.75")
    params = cfg.params or tuple(
        f"mu={expr}|screen={arm}" for expr in mu_exprs for arm in ("on", "off"))
    o = cfg.options
    # rank stays at 3 so the whole default mu grid respects the sampler cap
    # mu <= n/r; the screening-necessity band at mu = n^0.75 is sharper at
    # r=4 (spiky-row error energy grows with r) -- set r explicitly for that
    r = int(o.get("r", 3))
    m_rule = _rule(o, "m", "10", n_list, extra={"r": r})
    sb_rule = _rule(o, "sigma_b", "2 * n**(-0.25) * log(n)**0.25", n_list, extra={"r": r})
    eig_rule = o.get("eigenvalues", "3*sqrt(n) + (r - i)*log(n)")
    noise = _noise_from(o, "gaussian-iid")
    c_screen = float(o.get("c_screen", 2.0))

    def cell(n, param, data_rng, mrngs, timing):
        fields = _parse_param_fields(param)
        mu = eval_rule(fields["mu"], n=n, r=r)
        screen = _parse_bool(fields.get("screen", "on"))
        m = int(round(eval_rule(m_rule, n=n, r=r)))
        sigma_b = eval_rule(sb_rule, n=n, r=r)
        basis, vals = _planted_truth(n, r, mu, eig_rule, data_rng, o)
        pool = None
        if screen:
            norms = np.linalg.norm(basis, axis=1)
            quiet = np.flatnonzero(norms <= c_screen * n ** -0.25)
            if quiet.size > m:
                pool = quiet
        b, truth_sup = model.sample_node_sparse(n, m, sigma_b, data_rng, support_pool=pool)
        gt = model.GroundTruth(basis=basis, eigenvalues=vals, perturbations=[(b, truth_sup)])
        obs = model.assemble_observations(gt, noise, 1, 1, data_rng)
        dec = spectral.spectral_init(obs.g0, r)
        if screen:
            keep = spectral.select_low_coherence(dec, c_screen)
            resid = spectral.form_residual(obs.g1[0], dec, keep)
            kept = keep.kept
        else:
            resid = spectral.form_residual(obs.g1[0], dec)
            kept = None
        return _support_fnr(methods, resid, None, m, truth_sup, kept, mrngs, o, timing)

    return _Plan(n_list, trials, methods, params, cell)


_REFINE_METHODS = ("spec", "mhat1", "mhat2")


def _refine_estimates(mstar, copies, r, methods):
    """linf errors of the selected refinement estimators from four copies."""
    comp1 = refine.asymmetric_combine(copies[0], copies[1])
    comp2 = refine.asymmetric_combine(copies[2], copies[3])
    rows = []
    for meth in methods:
        try:
            if meth == "spec":
                est = refine.spectral_baseline(copies, r)
            elif meth == "mhat1":
                dec = refine.asymmetric_eigenpairs(0.5 * (comp1 + comp2), r)
                est = refine.reconstruct_symmetric(refine.debiased_eigenvectors(dec), dec.values)
            elif meth == "mhat2":
                dec = refine.asymmetric_eigenpairs(comp1, r)
                corr = refine.eigenspace_correction(dec, copies[2], copies[3])
                est = refine.whitened_reconstruction(dec, corr)
            else:
                raise ConfigError(f"method {meth!r} is not a refinement estimator")
            rows.append((meth, refine.entry_error(est, mstar), 0.0, True))
        except (np.linalg.LinAlgError, ValueError):
            logger.warning("refinement estimator %s failed", meth, exc_info=True)
            rows.append((meth, math.nan, 0.0, False))
    return rows


def _build_refine(cfg):
    """Refinement-estimator errors across coherence and signal-strength points."""
    n_list = cfg.n_list or (400,)
    trials = cfg.trials or 20
    methods = _check_methods(cfg, _REFINE_METHODS, _REFINE_METHODS)
    params = cfg.params or (
        "mu=n**0.8|lmin=2.05", "mu=n**(5/6)|lmin=2.05",
        "mu=n**0.8|lmin=3", "mu=n**(5/6)|lmin=3",
    )
    o = cfg.options
    r = int(o.get("r", 3))
    noise = _noise_from(o, "gaussian-iid")

    def cell(n, param, data_rng, mrngs, timing):
        fields = _parse_param_fields(param)
        mu = eval_rule(fields["mu"], n=n, r=r)
        lmin = eval_rule(fields["lmin"], n=n, r=r) * math.sqrt(n)
        vals = np.array([lmin + (r - i) * math.log(n) for i in range(1, r + 1)])
        basis = model.sample_incoherent_basis(n, r, mu, data_rng)
        gt = model.GroundTruth(basis=basis, eigenvalues=vals)
        mstar = gt.shared_matrix()
        copies = [mstar + model.sample_noise(n, noise, data_rng) for _ in range(4)]
        out, ms = _timed(lambda: _refine_estimates(mstar, copies, r, methods), timing)
        return [(meth, val, ms if timing else 0.0, conv) for meth, val, _, conv in out]

    return _Plan(n_list, trials, methods, params, cell)


def _build_eigengap(cfg):
    """Corrected-estimator error as the eigengap ratio grows."""
    n_list = cfg.n_list or (400,)
    trials = cfg.trials or 30
    methods = _check_methods(cfg, _REFINE_METHODS, ("mhat2",))
    params = cfg.params or ("1", "n**(1/6)", "n**(1/3)")
    o = cfg.options
    r = 3
    mu_rule = _rule(o, "mu", "sqrt(n)*log(n)", n_list, extra={"r": r})
    noise = _noise_from(o, "gaussian-iid")

    def cell(n, param, data_rng, mrngs, timing):
        ratio = eval_rule(str(param), n=n, r=r)
        mu = eval_rule(mu_rule, n=n, r=r)
        dmin = math.log(n)
        lam3 = 3.0 * math.sqrt(n)
        lam2 = lam3 + dmin
        lam1 = lam2 + ratio * dmin
        basis = model.sample_incoherent_basis(n, r, mu, data_rng)
        gt = model.GroundTruth(basis=basis, eigenvalues=np.array([lam1, lam2, lam3]))
        mstar = gt.shared_matrix()
        copies = [mstar + model.sample_noise(n, noise, data_rng) for _ in range(4)]
        out, ms = _timed(lambda: _refine_estimates(mstar, copies, r, methods), timing)
        return [(meth, val, ms if timing else 0.0, conv) for meth, val, _, conv in out]

    return _Plan(n_list, trials, methods, params, cell)


def _build_path(cfg):
    """Group-lasso activation path on a planted perturbation plus noise."""
    n_list = cfg.n_list or (300,)
    trials = cfg.trials or 20
    methods = _check_methods(cfg, ("active-count", "penalty"), ("active-count", "penalty"))
    o = cfg.options
    grid_size = int(o.get("gl_grid", 60))
    params = cfg.params or tuple(f"t{t:02d}" for t in range(grid_size))
    m_rule = _rule(o, "m", "5", n_list)
    sb_rule = _rule(o, "sigma_b", "1.9 * n**(-0.25) * log(n)**0.25", n_list)
    noise = _noise_from(o, "gaussian-iid")
    gl = _gl_kwargs(o)
    floor = float(o.get("lambda_floor", 0.85))

    def cell(n, data_rng, mrngs, timing):
        m = int(round(eval_rule(m_rule, n=n)))
        sigma_b = eval_rule(sb_rule, n=n)
        b, _ = model.sample_node_sparse(n, m, sigma_b, data_rng)
        y = b + model.sample_noise(n, noise, data_rng)
        grid = support.lambda_grid(y, num=grid_size, floor_ratio=floor)
        path, ms = _timed(lambda: support.group_lasso_path(y, grid, **gl), timing)
        per_point = ms / max(grid.size, 1)
        rows = []
        for t in range(grid.size):
            label = f"t{t:02d}"
            rows.append(("active-count", label, float((path.alphas[t] > 0).sum()),
                         per_point, bool(path.converged[t])))
            rows.append(("penalty", label, float(grid[t]), 0.0, True))
        return rows

    return _Plan(n_list, trials, methods, params, cell, per_trial=True)


PRESETS = {
    "exp-snr": _build_snr,
    "exp-glfail": _build_glfail,
    "table-exp2": _build_glfail,
    "exp-multicopy": _build_multicopy,
    "exp-heavytail": _build_heavytail,
    "exp-coherence": _build_coherence,
    "exp-refine": _build_refine,
    "exp-eigengap": _build_eigengap,
    "exp-path": _build_path,
}


def preset_names():
    return sorted(PRESETS)


def build_plan(cfg):
    if cfg.preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {cfg.preset!r}; available: {', '.join(preset_names())}")
    plan = PRESETS[cfg.preset](cfg)
    if plan.trials < 1:
        raise ConfigError("trials must be >= 1")
    return plan
