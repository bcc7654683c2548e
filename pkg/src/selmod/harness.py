"""Monte-Carlo experiment orchestration: per-replication pipelines for every
method, coverage/FCR/length aggregation against the population projection of
the truth, and machine-readable result emission.

Sub-seeds are derived from (master seed, replication index), so a batch is
reproducible under any parallel schedule; aggregation merges replications in
index order.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .comparators import (IntervalReport, TargetInterval, naive_intervals,
                          null_randomization, polyhedral_intervals,
                          splitting_intervals, wald_intervals)
from .design import FeatureMap, stack_design
from .errors import ConfigError
from .estimation import (DEFAULT_HISTORY_FEATURES, fit_nuisance, sandwich,
                         wcls_refit)
from .randlasso import draw_randomization, lambda_rule, solve, tau_rule
from .selective import QUAD_ORDER, selective_intervals
from .synth import SimConfig, generate

KNOWN_METHODS = ("si", "polyhedral", "splitting", "naive")
RESULT_HEADER = ("method", "setting", "coverage", "fcr",
                 "avg_length_finite", "pct_finite", "n_sel")
INTERVAL_HEADER = ("setting", "method", "rep", "column", "estimate",
                   "lower", "upper", "finite", "target", "covered", "length")


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    methods: tuple = KNOWN_METHODS
    replications: int = 500
    alpha: float = 0.1
    kappa: float = 1.0            # penalty-rule multiplier
    tau: float | None = None      # None: tau rule on each replication
    nuisance_fraction: float = 1.0 / 3.0
    select_fraction: float = 0.7  # splitting method's selection share
    seed: int = 0
    setting: str = "default"
    threads: int = 1
    oracle_cells: int = 1_000_000
    quad_order: int = QUAD_ORDER
    nuisance_features: tuple = DEFAULT_HISTORY_FEATURES

    def validate(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0,1)")
        bad = [m for m in self.methods if m not in KNOWN_METHODS
               and m not in EXTRA_METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}")
        self.sim.resolved()
        return self


# test hook: extra method name -> callable(design, ctx_dict) -> IntervalReport
EXTRA_METHODS = {}


@dataclass
class MetricsRow:
    method: str
    setting: str
    coverage: float | None
    fcr: float | None
    avg_length_finite: float | None
    pct_finite: float | None
    n_sel: int

    def as_tuple(self):
        return (self.method, self.setting, self.coverage, self.fcr,
                self.avg_length_finite, self.pct_finite, self.n_sel)


def config_hash(sim_cfg):
    cfg = sim_cfg.resolved()
    h = hashlib.sha256()
    payload = (cfg.n, cfg.T, cfg.p, cfg.active_size, cfg.c, cfg.rho,
               cfg.theta2, cfg.sigma_e, cfg.error_regime, cfg.action_coefs,
               cfg.action_clip, cfg.effect_intercept, cfg.laplace_scale,
               cfg.exponential_scale)
    h.update(repr(payload).encode())
    h.update(np.ascontiguousarray(cfg.theta1).tobytes())
    h.update(np.ascontiguousarray(cfg.Gamma0).tobytes())
    h.update(np.ascontiguousarray(cfg.Gamma1).tobytes())
    return h.hexdigest()[:16]


_PROJECTION_CACHE = {}


def population_projection_moments(sim_cfg, n_cells=1_000_000, chunk=2000):
    """Plug-in estimates of E[X'X] and E[X'Y] for the stacked design, from a
    large synthetic draw; any selected-model projection follows by solving
    the corresponding sub-system.

    The nuisance enters the stacked response only through history-measurable
    shifts, which are orthogonal to the centered design columns, so the
    moments are computed with a zero nuisance.
    """
    chash = config_hash(sim_cfg)
    key = (chash, n_cells)
    if key in _PROJECTION_CACHE:
        return _PROJECTION_CACHE[key]
    cfg = sim_cfg.resolved()
    total = max(1, int(np.ceil(n_cells / cfg.T)))
    G_sum = None
    c_sum = None
    done = 0
    block = 0
    while done < total:
        m = min(chunk, total - done)
        sub = replace(cfg, n=m, seed=np.random.SeedSequence(
            entropy=[0x9E3779B9, int(chash[:8], 16), block]))
        data, _ = generate(sub)
        design = stack_design(data, nuisance=None)
        Gn, c = design.gram()
        G_sum = Gn if G_sum is None else G_sum + Gn
        c_sum = c if c_sum is None else c_sum + c
        done += m
        block += 1
    M = G_sum / total
    v = c_sum / total
    _PROJECTION_CACHE[key] = (M, v)
    return M, v


def projected_truth(M, v, E):
    """Projection of the generating mean onto the selected columns."""
    E = list(E)
    return np.linalg.solve(M[np.ix_(E, E)], v[E])


def run_replication(cfg, rep, moments=None):
    """All requested methods on one simulated dataset; returns interval
    records as tuples matching INTERVAL_HEADER."""
    ss = np.random.SeedSequence(entropy=[int(cfg.seed), int(rep)])
    seeds = ss.spawn(8)

    data, _ = generate(cfg.sim.with_seed(seeds[0]))
    nuisance, analysis = fit_nuisance(data, cfg.nuisance_fraction, seed=seeds[1],
                                      feature_names=cfg.nuisance_features)
    design = stack_design(analysis, nuisance)
    tau = cfg.tau if cfg.tau is not None else tau_rule(design)

    reports = {}
    if "si" in cfg.methods:
        lam = lambda_rule(design, tau, seeds[2], kappa=cfg.kappa)
        rand = draw_randomization(design.p, tau, seeds[3])
        sel = solve(design, lam, rand)
        targets = sel.penalized_active()
        if targets:
            bhatE = wcls_refit(design, list(sel.E))
            sw = sandwich(design, list(sel.E), bhatE)
            ivs = selective_intervals(design, sel, sw, bhatE, cfg.alpha,
                                      rand.Omega, quad_order=cfg.quad_order)
            intervals = [TargetInterval(j=r["j"], estimate=r["estimate"],
                                        lower=r["lower"], upper=r["upper"],
                                        sigma=r["sigma"]) for r in ivs]
        else:
            intervals = []
        reports["si"] = IntervalReport(method="si", alpha=cfg.alpha,
                                       E=tuple(targets), intervals=intervals,
                                       meta={"lam": lam, "tau": tau})

    if "polyhedral" in cfg.methods or "naive" in cfg.methods:
        lam0 = lambda_rule(design, 0.0, seeds[4], kappa=cfg.kappa)
        sel0 = solve(design, lam0, null_randomization(design.p))
        if "polyhedral" in cfg.methods:
            reports["polyhedral"] = polyhedral_intervals(
                design, lam0, cfg.alpha, selection=sel0, meta={"lam": lam0})
        if "naive" in cfg.methods:
            reports["naive"] = naive_intervals(
                design, lam0, cfg.alpha, selection=sel0, meta={"lam": lam0})

    if "splitting" in cfg.methods:
        reports["splitting"] = splitting_intervals(
            design, cfg.select_fraction, cfg.alpha, seed=seeds[5],
            kappa=cfg.kappa)

    for name in cfg.methods:
        if name in EXTRA_METHODS:
            reports[name] = EXTRA_METHODS[name](design, {
                "alpha": cfg.alpha, "seed": seeds[6], "tau": tau, "cfg": cfg})

    records = []
    for name in cfg.methods:
        report = reports[name]
        targets_for = {}
        if report.intervals and moments is not None:
            M, v = moments
            sel_E = report.meta.get("full_E")
            cols = [iv.j for iv in report.intervals]
            full_E = sorted(set(cols) | {0}) if sel_E is None else sel_E
            proj = projected_truth(M, v, full_E)
            targets_for = {j: float(proj[full_E.index(j)]) for j in cols}
        for iv in report.intervals:
            target = targets_for.get(iv.j)
            covered = (target is not None
                       and iv.lower <= target <= iv.upper)
            records.append((cfg.setting, name, rep, iv.j, iv.estimate,
                            iv.lower, iv.upper, iv.finite, target,
                            bool(covered), iv.length if iv.finite else None))
    return records


def _worker(args):
    cfg, rep, moments = args
    return rep, run_replication(cfg, rep, moments)


def run_experiment(cfg):
    """Monte-Carlo batch over `cfg.replications` datasets.

    Returns (metrics rows, per-interval records). Deterministic given
    (config, seed) at any thread count.
    """
    cfg.validate()
    moments = population_projection_moments(cfg.sim, cfg.oracle_cells)

    tasks = [(cfg, rep, moments) for rep in range(cfg.replications)]
    if cfg.threads > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(cfg.threads) as pool:
            results = pool.map(_worker, tasks, chunksize=1)
        results.sort(key=lambda t: t[0])
        all_records = [rec for _, recs in results for rec in recs]
    else:
        all_records = []
        for task in tasks:
            all_records.extend(_worker(task)[1])

    rows = [summarize(all_records, m, cfg.setting, cfg.replications)
            for m in cfg.methods]
    return rows, all_records


def summarize(records, method, setting, n_replications):
    """Coverage / FCR / length metrics for one method."""
    recs = [r for r in records if r[1] == method and r[0] == setting]
    by_rep = {}
    for r in recs:
        by_rep.setdefault(r[2], []).append(r)
    n_sel = len(by_rep)
    if not recs:
        return MetricsRow(method=method, setting=setting, coverage=None,
                          fcr=None, avg_length_finite=None, pct_finite=None,
                          n_sel=0)
    covered = [r[9] for r in recs]
    finite = [r[7] for r in recs]
    lengths = [r[10] for r in recs if r[7]]
    fcr_terms = []
    for rep in range(n_replications):
        rows = by_rep.get(rep, [])
        miss = sum(1 for r in rows if not r[9])
        fcr_terms.append(miss / max(len(rows), 1))
    return MetricsRow(
        method=method, setting=setting,
        coverage=float(np.mean(covered)),
        fcr=float(np.mean(fcr_terms)),
        avg_length_finite=float(np.mean(lengths)) if lengths else None,
        pct_finite=float(np.mean(finite)),
        n_sel=n_sel,
    )


# ---------------------------------------------------------------------------
# result emission
# ---------------------------------------------------------------------------

def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(rows, fmt, path):
    """Write metrics rows as CSV (fixed header) or JSON."""
    if not rows:
        raise ConfigError("no rows to emit")
    if fmt == "csv":
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RESULT_HEADER)
            for row in rows:
                writer.writerow([_cell(v) for v in row.as_tuple()])
    elif fmt == "json":
        payload = [dict(zip(RESULT_HEADER, row.as_tuple())) for row in rows]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    return path


def parse_results(path):
    """Inverse of emit_results; returns MetricsRow objects."""
    rows = []
    if str(path).endswith(".json"):
        with open(path) as fh:
            for rec in json.load(fh):
                rows.append(MetricsRow(**rec))
        return rows
    import csv
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != RESULT_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        for rec in reader:
            vals = dict(zip(RESULT_HEADER, rec))
            rows.append(MetricsRow(
                method=vals["method"], setting=vals["setting"],
                coverage=float(vals["coverage"]) if vals["coverage"] else None,
                fcr=float(vals["fcr"]) if vals["fcr"] else None,
                avg_length_finite=(float(vals["avg_length_finite"])
                                   if vals["avg_length_finite"] else None),
                pct_finite=float(vals["pct_finite"]) if vals["pct_finite"] else None,
                n_sel=int(vals["n_sel"]),
            ))
    return rows


def emit_intervals(records, path):
    """Long-format per-interval CSV (figure data)."""
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INTERVAL_HEADER)
        for rec in records:
            writer.writerow([_cell(v) for v in rec])
    return path
