"""Seeded Monte Carlo experiments behind the CLI subcommands.

Each experiment returns a RunResult: a summary dict, named tables, named
figures and a list of pass/fail checks. Paths are farmed out to worker
processes in contiguous index chunks and reassembled in index order, so
results do not depend on the worker count.
"""
from __future__ import annotations

import dataclasses
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import __version__
from . import stats
from .config import RunConfig, canonical_json, config_hash, from_dict, to_dict
from .dynamics import (BranchState, CollapseParams, collapse_time_estimate, region_mask, run_path)
from .errors import BoundaryError, ConfigurationError
from .lattice import (Cell, LatticeSpec, NoiseField, Surface, derive_seed, random_foliation,
                      standard_foliation)
from .smearing import BranchProfile, branch_image

# seed streams, so that different experiments never share noise
STREAM_PATHS = 0
STREAM_FOLIATION = 1
STREAM_BORN_NONLINEAR = 2
STREAM_BORN_LINEAR = 3
STREAM_MARTINGALE = 4
STREAM_BEABLE = 5


@dataclass
class Check:
    name: str
    observed: object
    expected: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: observed {_fmt(self.observed)}; expected {self.expected}" + (
            f" ({self.detail})" if self.detail else "")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


@dataclass
class Figure:
    name: str
    x: np.ndarray
    series: dict  # label -> y array
    xlabel: str
    ylabel: str
    highlight: str | None = None
    logy: bool = False


@dataclass
class RunResult:
    command: str
    config: RunConfig
    summary: dict
    tables: dict = field(default_factory=dict)  # name -> (columns, 2d array)
    checks: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def manifest(self) -> dict:
        return {"command": self.command, "config": to_dict(self.config), "config_hash": config_hash(self.config),
                "seed": self.config.seed, "code_version": __version__,
                "conventions": {"noise": "splitmix64 counter hash + Box-Muller per (seed, i, t)",
                                "path_seed": "SeedSequence([seed, stream, path])",
                                "lattice": "cell centres x1 = x1_origin + i dx, x0 = t dt"}}


# -- building the initial state -------------------------------------------------

def branch_J(spec: LatticeSpec, regions) -> np.ndarray:
    """Constant-in-time J on every cell whose centre lies in one of the [lo, hi) intervals."""
    x1 = spec.x1(np.arange(spec.L))
    on = np.zeros(spec.L, dtype=bool)
    for lo, hi in regions:
        on |= (x1 >= lo) & (x1 < hi)
    return on


def build_profiles(cfg: RunConfig, spec: LatticeSpec) -> list[BranchProfile]:
    if not cfg.experiment.branches:
        raise ConfigurationError("config has no experiment branches")
    kp = cfg.kernel.params()
    out = []
    for b in cfg.experiment.branches:
        row = np.where(branch_J(spec, b.regions), b.J, 0.0)
        J = np.tile(row, (spec.T, 1))
        out.append(branch_image(spec, BranchProfile(J), kp, cfg.kernel.idealization))
    return out


def horizon_spec(cfg: RunConfig, T: int | None = None) -> LatticeSpec:
    spec = cfg.lattice.spec()
    if T is None or T == spec.T:
        return spec
    return dataclasses.replace(spec, T=int(T))


def initial_state(cfg: RunConfig, spec: LatticeSpec, integrator: str) -> BranchState:
    c = [b.amplitude for b in cfg.experiment.branches]
    return BranchState.from_amplitudes(c, build_profiles(cfg, spec), Surface.flat(spec, 0),
                                       normalized=(integrator == "nonlinear"))


# -- the path worker ---------------------------------------------------------------

@dataclass(frozen=True)
class PathJob:
    config: str  # canonical JSON of the run config
    T: int
    integrator: str
    foliation: str
    stream: int
    stop_at_collapse: bool = False
    keep_levels: tuple | None = None  # None keeps every level
    regions: tuple = ()  # boolean masks (as bytes) for region integrals
    variance_scale: float = 1.0
    mutation: str | None = None
    lam: float | None = None


@lru_cache(maxsize=8)
def _setup(config_json: str, T: int, integrator: str):
    cfg = from_dict(__import__("json").loads(config_json))
    spec = horizon_spec(cfg, T)
    return cfg, spec, initial_state(cfg, spec, integrator)


def _run_chunk(job: PathJob, paths: list[int]) -> list[dict]:
    cfg, spec, state0 = _setup(job.config, job.T, job.integrator)
    lam = cfg.collapse.lam if job.lam is None else job.lam
    params = CollapseParams(lam, cfg.collapse.epsilon, job.integrator, cfg.collapse.scheme)
    std = standard_foliation(spec)
    masks = [np.frombuffer(m, dtype=bool).reshape(spec.T, spec.L) for m in job.regions]
    out = []
    for p in paths:
        seed = derive_seed(cfg.seed, job.stream, p)
        fol = std if job.foliation == "time" else random_foliation(spec, derive_seed(cfg.seed, STREAM_FOLIATION, p))
        noise = NoiseField(seed, spec, job.variance_scale)
        rec = run_path(spec, state0, fol, noise, params, start_level=cfg.experiment.interaction_levels,
                       stop_at_collapse=job.stop_at_collapse, record_grids=bool(masks), mutation=job.mutation)
        keep = slice(None) if job.keep_levels is None else list(job.keep_levels)
        row = {"path": p, "seed": seed, "outcome": -1 if rec.outcome is None else rec.outcome,
               "collapse_time": np.nan if rec.collapse_time is None else rec.collapse_time,
               "final_weights": rec.final.weights(), "final_log_norm2": rec.final.log_norm2(),
               "level_var": rec.level_var[keep], "level_log_norm2": rec.level_log_norm2[keep],
               "level_weights": rec.level_weights[keep]}
        if masks:
            ints = []
            for m in masks:
                dW = rec.grids["dW"][m]
                ints.append((float(np.sum(dW)), 2.0 * lam * spec.domega * float(np.sum(rec.grids["meanN"][m])),
                             float(np.sum(rec.grids["dB"][m]))))
            row["regions"] = np.array(ints)
        out.append(row)
    return out


def _chunk_call(args):
    return _run_chunk(*args)


def run_paths(job: PathJob, n_paths: int, workers: int = 1) -> list[dict]:
    """Run paths 0..n-1 and return their summaries in path order."""
    idx = list(range(n_paths))
    if workers <= 1 or n_paths < 2:
        return _run_chunk(job, idx)
    n_chunks = min(n_paths, workers * 4)
    size = math.ceil(n_paths / n_chunks)
    chunks = [idx[k:k + size] for k in range(0, n_paths, size)]
    method = "fork" if "fork" in multiprocessing.get_all_start_methods() else "spawn"
    ctx = multiprocessing.get_context(method)
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        parts = list(ex.map(_chunk_call, [(job, c) for c in chunks]))
    return [r for part in parts for r in part]


def _job(cfg: RunConfig, **kw) -> PathJob:
    kw.setdefault("T", cfg.lattice.T)
    kw.setdefault("integrator", cfg.collapse.integrator)
    kw.setdefault("foliation", cfg.experiment.foliation)
    return PathJob(config=canonical_json(to_dict(cfg)), **kw)


def _outcomes(rows, level_index=None) -> np.ndarray:
    """Collapse outcome, or the heaviest branch where no collapse was recorded."""
    out = []
    for r in rows:
        if level_index is not None:
            out.append(int(np.argmax(r["level_weights"][level_index])))
        elif r["outcome"] >= 0:
            out.append(r["outcome"])
        else:
            out.append(int(np.argmax(r["final_weights"])))
    return np.array(out, dtype=np.int64)


def _probs(cfg: RunConfig) -> np.ndarray:
    p = np.array([abs(b.amplitude) ** 2 for b in cfg.experiment.branches])
    return p / p.sum()


# -- figure 2 --------------------------------------------------------------------

COLLAPSE_BAND = (1e-4, 1e-3)


def tau_estimates(cfg: RunConfig) -> tuple[float, float | None]:
    spec = cfg.lattice.spec()
    st = initial_state(cfg, spec, "nonlinear")
    est = collapse_time_estimate(spec, st, cfg.collapse.params(), row=cfg.experiment.interaction_levels)
    return est.tau_formula, est.tau_closed_form


def figure2(cfg: RunConfig, workers: int = 1) -> RunResult:
    t0 = time.perf_counter()
    if len(cfg.experiment.branches) < 2:
        raise ConfigurationError("figure2 needs an experiment block with at least two branches")
    spec = cfg.lattice.spec()
    n = cfg.experiment.paths
    integrator = cfg.collapse.integrator
    rows = run_paths(_job(cfg, stream=STREAM_PATHS), n, workers)
    V = np.stack([r["level_var"] for r in rows])
    if integrator == "linear":
        # P-average: reweight Q-sampled paths by their norm at each level
        W = np.exp(np.stack([r["level_log_norm2"] for r in rows]))
        mean = np.sum(W * V, axis=0) / np.sum(W, axis=0)
        se = np.sqrt(np.sum((W * (V - mean)) ** 2, axis=0)) / np.sum(W, axis=0)
    else:
        mean, se = stats.mean_se(V)
    x0 = np.arange(spec.T + 1) * spec.dt
    example = V[0]
    ctimes = np.array([r["collapse_time"] for r in rows])
    outcomes = _outcomes(rows)
    probs = _probs(cfg)
    B = len(probs)
    counts = np.bincount(outcomes, minlength=B)
    freq = counts / n
    lo, hi = COLLAPSE_BAND
    in_band = float(np.mean((ctimes >= lo) & (ctimes <= hi)))
    collapsed = np.isfinite(ctimes)
    median_ct = float(np.median(np.where(collapsed, ctimes, np.inf))) if n else float("nan")
    tau_f, tau_c = tau_estimates(cfg)
    initial = float(mean[0])
    ratio = float(mean[-1] / initial) if initial > 0 else float("nan")
    mono_ok, worst = stats.is_monotone_within(mean, se, 1.0)
    summary = {
        "paths": n, "integrator": integrator, "foliation": cfg.experiment.foliation,
        "initial_var_integral": initial, "final_mean_var_integral": float(mean[-1]),
        "final_ratio": ratio, "horizon_x0": float(x0[-1]),
        "monotone_worst_excursion_se": worst,
        "collapsed_fraction": float(np.mean(collapsed)),
        "collapse_time_in_band_fraction": in_band, "collapse_time_median": median_ct,
        "tau_formula": tau_f, "tau_closed_form": tau_c,
        "born_counts": counts.tolist(), "born_frequencies": freq.tolist(),
        "born_stderr": np.sqrt(freq * (1 - freq) / n).tolist(), "born_expected": probs.tolist(),
    }
    checks = []
    if cfg.collapse.lam > 0:
        checks += [
            Check("var_integral_monotone", worst, "excursions <= 1 s.e.", mono_ok),
            Check("var_integral_final_ratio", ratio, "< 0.01", ratio < 0.01),
            Check("collapse_times_in_band", in_band, f">= 0.9 within [{lo:g}, {hi:g}]", in_band >= 0.9),
        ]
        if tau_c is not None:
            r = median_ct / tau_c
            checks.append(Check("median_vs_tau_closed_form", r, "within factor 3 of 1", 1 / 3 <= r <= 3))
    else:
        flat = float(np.max(np.abs(mean - initial)) / initial) if initial > 0 else 0.0
        checks.append(Check("flat_without_collapse", flat, "0 relative change", flat < 1e-12))
    for j in range(B):
        band = stats.binomial_band(probs[j], n)
        checks.append(Check(f"born_branch_{j}", float(freq[j]), f"{probs[j]:.4g} +- {band:.3g}",
                            abs(freq[j] - probs[j]) <= band))
    curve = np.column_stack([x0, mean, se, example])
    paths_tab = np.array([[r["path"], r["seed"], r["outcome"], r["collapse_time"]] for r in rows], dtype=float)
    fig = Figure("figure2", x0, {"mean over paths": mean, "example path": example}, "x0",
                 "integral of Var N dx1", highlight="example path")
    return RunResult("figure2", cfg, summary,
                     {"": (["x0", "meanVar", "stderr", "examplePathVar"], curve),
                      "paths": (["path", "seed", "outcome", "collapse_time"], paths_tab)},
                     checks, [fig], time.perf_counter() - t0)


# -- Born rule ---------------------------------------------------------------------

def sigma_f_level(cfg: RunConfig) -> int:
    s = cfg.experiment.sigma_f
    T = cfg.lattice.T
    if s == "final":
        return T
    if s == "tau":
        tau_f, tau_c = tau_estimates(cfg)
        tau = tau_c if tau_c is not None else tau_f
        return int(min(T, max(1, round(tau / cfg.lattice.dt))))
    return int(s)


def estimator_comparison(cfg: RunConfig, run: int, workers: int = 1, mutation: str | None = None) -> dict:
    """Linear + norm reweighting vs nonlinear, outcome = heaviest branch on sigma_f."""
    level = sigma_f_level(cfg)
    n = cfg.experiment.paths
    sub = cfg.replace(seed=derive_seed(cfg.seed, 100 + run))
    nl = run_paths(_job(sub, T=level, integrator="nonlinear", stream=STREAM_BORN_NONLINEAR,
                        keep_levels=(level,), mutation=mutation), n, workers)
    li = run_paths(_job(sub, T=level, integrator="linear", stream=STREAM_BORN_LINEAR,
                        keep_levels=(level,), mutation=mutation), n, workers)
    B = len(cfg.experiment.branches)
    p_nl, c_nl = stats.frequencies(_outcomes(nl, 0), B)
    w = np.array([r["level_log_norm2"][0] for r in li])
    w = np.exp(w - w.max())
    p_li, c_li = stats.frequencies(_outcomes(li, 0), B, weights=w)
    stat, dof, p = stats.wald_compare(p_li, c_li, p_nl, c_nl)
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    return {"run": run, "sigma_f_level": level, "nonlinear": p_nl.tolist(), "linear_weighted": p_li.tolist(),
            "chi2": stat, "dof": dof, "p_value": p, "linear_effective_sample_size": ess}


def born(cfg: RunConfig, workers: int = 1, runs: int = 3, mutation: str | None = None) -> RunResult:
    t0 = time.perf_counter()
    if len(cfg.experiment.branches) < 2:
        raise ConfigurationError("born needs at least two branches")
    n = cfg.experiment.paths
    probs = _probs(cfg)
    B = len(probs)
    rows = run_paths(_job(cfg, integrator="nonlinear", stream=STREAM_BORN_NONLINEAR, stop_at_collapse=True,
                          keep_levels=(0,), mutation=mutation), n, workers)
    outcomes = _outcomes(rows)
    counts = np.bincount(outcomes, minlength=B)
    freq = counts / n
    z = [stats.binomial_z(int(counts[j]), n, probs[j]) for j in range(B)]
    gof = stats.gof_pvalue(counts, probs)
    comps = [estimator_comparison(cfg, r, workers, mutation) for r in range(runs)]
    summary = {"paths": n, "counts": counts.tolist(), "frequencies": freq.tolist(),
               "stderr": np.sqrt(freq * (1 - freq) / n).tolist(), "expected": probs.tolist(),
               "z_scores": z, "gof_p_value": gof,
               "collapsed_fraction": float(np.mean([r["outcome"] >= 0 for r in rows])),
               "estimator_comparisons": comps}
    checks = []
    for j in range(B):
        band = stats.binomial_band(probs[j], n)
        checks.append(Check(f"born_branch_{j}", float(freq[j]), f"{probs[j]:.4g} +- {band:.3g} (3 sigma)",
                            abs(freq[j] - probs[j]) <= band))
    if B > 2:
        checks.append(Check("born_goodness_of_fit", gof, "p > 0.01", gof > 0.01))
    for c in comps:
        checks.append(Check(f"estimators_agree_run{c['run']}", c["p_value"], "chi-square p > 0.01",
                            c["p_value"] > 0.01, f"sigma_f level {c['sigma_f_level']}"))
    tab = np.column_stack([np.arange(B), counts, freq, np.sqrt(freq * (1 - freq) / n), probs, z])
    return RunResult("born", cfg, summary,
                     {"": (["branch", "count", "frequency", "stderr", "expected", "z"], tab)},
                     checks, [], time.perf_counter() - t0)


# -- beables -------------------------------------------------------------------------

def beable_regions(cfg: RunConfig, spec: LatticeSpec) -> list[np.ndarray]:
    """Per-branch lump x beable window, as boolean cell masks."""
    x0a, x0b = cfg.experiment.beable_window
    out = []
    for b in cfg.experiment.branches:
        m = np.zeros((spec.T, spec.L), dtype=bool)
        for lo, hi in b.regions:
            x1 = spec.x1(np.arange(spec.L))
            cols = (x1 >= lo) & (x1 < hi)
            t = spec.x0(np.arange(spec.T))
            rows = (t >= x0a) & (t <= x0b)
            m |= rows[:, None] & cols[None, :]
        if not m.any():
            raise BoundaryError(f"beable region for branch regions {b.regions} x {cfg.experiment.beable_window} is empty")
        out.append(m)
    return out


def beable(cfg: RunConfig, workers: int = 1) -> RunResult:
    t0 = time.perf_counter()
    spec = cfg.lattice.spec()
    masks = beable_regions(cfg, spec)
    lam = cfg.collapse.lam
    n = cfg.experiment.paths
    rows = run_paths(_job(cfg, stream=STREAM_BEABLE, keep_levels=(0,),
                          regions=tuple(m.tobytes() for m in masks)), n, workers)
    vol = np.array([m.sum() * spec.domega for m in masks])
    prof = build_profiles(cfg, spec)
    # the N image each lump would show if its own branch had survived
    target = np.array([2.0 * lam * float(np.mean(prof[b].N[m])) for b, m in enumerate(masks)])
    window_start = cfg.experiment.beable_window[0]
    table = []
    for r in rows:
        for b in range(len(masks)):
            W, sig, noi = r["regions"][b]
            table.append([r["path"], b, r["outcome"], r["collapse_time"], W, sig, noi, vol[b], W / vol[b]])
    table = np.array(table, dtype=float)
    checks = []
    summary = {"paths": n, "lam": lam, "window": list(cfg.experiment.beable_window), "volumes": vol.tolist(),
               "noise_sigma_of_W_over_vol": (1.0 / np.sqrt(vol)).tolist(), "targets": target.tolist()}
    if lam == 0.0:
        Wv = table[:, 4].reshape(n, -1)
        mean, se = stats.mean_se(Wv)
        var = np.var(Wv, axis=0, ddof=1)
        var_se = var * np.sqrt(2.0 / (n - 1))
        summary.update({"mean_W": mean.tolist(), "var_W": var.tolist()})
        for b in range(len(masks)):
            checks.append(Check(f"pure_noise_mean_{b}", float(mean[b]), f"0 +- {3 * se[b]:.3g}",
                                abs(mean[b]) <= 3 * se[b]))
            checks.append(Check(f"pure_noise_variance_{b}", float(var[b]), f"{vol[b]:.4g} +- {3 * var_se[b]:.3g}",
                                abs(var[b] - vol[b]) <= 3 * var_se[b]))
    else:
        done = np.array([np.isfinite(r["collapse_time"]) and r["collapse_time"] <= window_start for r in rows])
        outc = np.array([r["outcome"] for r in rows])
        per = table[:, 8].reshape(n, -1)
        surv, ext = [], []
        within = []
        for k in np.flatnonzero(done):
            for b in range(len(masks)):
                est = per[k, b]
                if b == outc[k]:
                    surv.append(est - target[b])
                    within.append(abs(est - target[b]) <= 3.0 / np.sqrt(vol[b]))
                else:
                    ext.append(est)
        surv, ext = np.array(surv), np.array(ext)
        ms, ss = stats.mean_se(surv) if len(surv) > 1 else (np.nan, np.nan)
        me, se_ = stats.mean_se(ext) if len(ext) > 1 else (np.nan, np.nan)
        summary.update({"paths_collapsed_before_window": int(done.sum()),
                        "surviving_mean_residual": float(ms), "surviving_residual_se": float(ss),
                        "extinguished_mean": float(me), "extinguished_se": float(se_),
                        "surviving_within_3_noise_sigma_fraction": float(np.mean(within)) if within else float("nan")})
        checks.append(Check("surviving_lump_recovers_2lamN", float(ms), f"0 +- {3 * ss:.3g} (3 s.e. of pooled residual)",
                            bool(np.isfinite(ms) and abs(ms) <= 3 * ss)))
        frac = float(np.mean(within)) if within else 0.0
        checks.append(Check("surviving_lump_per_path_3sigma", frac, ">= 0.99 of paths within 3 noise sigma",
                            frac >= 0.99))
        checks.append(Check("extinguished_lump_zero", float(me), f"0 +- {3 * se_:.3g}",
                            bool(np.isfinite(me) and abs(me) <= 3 * se_)))
    return RunResult("beable", cfg, summary,
                     {"": (["path", "branch", "outcome", "collapse_time", "W", "signal", "noise", "volume",
                            "W_over_volume"], table)},
                     checks, [], time.perf_counter() - t0)
