"""Invariant suites behind ``verify`` and ``oracle``.

Every check compares an observed number with a tolerance fixed in advance;
nothing here is tuned to the outcome of a particular run.
"""
from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import experiments as ex
from . import fock, stats
from .config import RunConfig, BranchConfig
from .dynamics import BranchState, CollapseParams, run_path, step_linear
from .experiments import Check, RunResult
from .lattice import (Cell, LatticeSpec, NoiseField, RecordedNoise, Surface, derive_seed, random_foliation,
                      standard_foliation)
from .smearing import KernelParams, kernel_f, kernel_g

MARTINGALE_PATHS = 10_000
MARTINGALE_LEVELS = 100
CHECKPOINTS = 10
FOLIATION_LEVELS = 100
N_RANDOM_FOLIATIONS = 5


def _asymmetric(cfg: RunConfig, p1: float = 0.3) -> RunConfig:
    """Same lumps with |c_1|^2 = p1: breaks the symmetry that hides a missing measure change."""
    br = list(cfg.experiment.branches)
    amps = np.sqrt(np.r_[p1, np.full(len(br) - 1, (1 - p1) / (len(br) - 1))])
    br = tuple(BranchConfig((float(a), 0.0), b.regions, b.J) for a, b in zip(amps, br))
    return cfg.replace(experiment=dataclasses.replace(cfg.experiment, branches=br))


def _checkpoints(T: int) -> list[int]:
    return [int(round(T * (k + 1) / CHECKPOINTS)) for k in range(CHECKPOINTS)]


def martingale_checks(cfg: RunConfig, workers: int = 1, n_paths: int = MARTINGALE_PATHS,
                      levels: int = MARTINGALE_LEVELS, variance_scale: float = 1.0,
                      mutation: str | None = None) -> tuple[list[Check], dict]:
    """E_Q[norm^2] = 1 and E_P[<P_j>] constant at ten checkpoints."""
    T = min(levels, cfg.lattice.T)
    cps = _checkpoints(T)
    acfg = _asymmetric(cfg)
    common = dict(T=T, foliation="time", keep_levels=tuple([0] + cps), stream=ex.STREAM_MARTINGALE,
                  variance_scale=variance_scale, mutation=mutation)
    lin = ex.run_paths(ex._job(acfg, integrator="linear", **common), n_paths, workers)
    nl = ex.run_paths(ex._job(acfg, integrator="nonlinear", **common), n_paths, workers)
    checks = []
    norm2 = np.exp(np.stack([r["level_log_norm2"][1:] for r in lin]))
    m, se = stats.mean_se(norm2)
    zq = (m - 1.0) / se
    checks.append(Check("Q_norm_martingale", float(np.max(np.abs(zq))), "|z| <= 3 at all 10 checkpoints",
                        bool(np.all(np.abs(zq) <= 3)), f"means {np.round(m, 4).tolist()}"))
    W = np.stack([r["level_weights"] for r in nl])  # (paths, 1 + checkpoints, B)
    p0 = W[0, 0]
    zmax = 0.0
    for j in range(W.shape[2]):
        mj, sj = stats.mean_se(W[:, 1:, j])
        zmax = max(zmax, float(np.max(np.abs((mj - p0[j]) / sj))))
    checks.append(Check("P_projector_martingale", zmax, "|z| <= 3 for every branch and checkpoint", zmax <= 3))
    V = np.stack([r["level_var"] for r in nl])
    vm, vs = stats.mean_se(V)
    ok, worst = stats.is_monotone_within(vm, vs, 1.0)
    checks.append(Check("P_variance_supermartingale", worst, "excursions <= 1 s.e.", ok))
    return checks, {"checkpoints": cps, "Q_norm2_mean": m.tolist(), "Q_norm2_se": se.tolist()}


def foliation_checks(cfg: RunConfig) -> list[Check]:
    spec = ex.horizon_spec(cfg, min(FOLIATION_LEVELS, cfg.lattice.T))
    st = ex.initial_state(cfg, spec, "linear")
    params = cfg.collapse.params("linear")
    noise = NoiseField(derive_seed(cfg.seed, 77), spec)
    ref = run_path(spec, st, standard_foliation(spec), noise, params, stop_at_collapse=False).final.weights()
    worst = 0.0
    for k in range(N_RANDOM_FOLIATIONS):
        fol = random_foliation(spec, derive_seed(cfg.seed, 78, k))
        fol.validate()
        w = run_path(spec, st, fol, noise, params, stop_at_collapse=False).final.weights()
        worst = max(worst, float(np.max(np.abs(w - ref))))
    return [Check("foliation_independence", worst, "<= 1e-12 across 5 random foliations", worst <= 1e-12)]


def kernel_checks(cfg: RunConfig) -> list[Check]:
    kp = cfg.kernel.params()
    worst = 0.0
    specs = [cfg.lattice.spec(), LatticeSpec(9, 9, 1.0, 1.0), LatticeSpec(7, 6, 1.5, 1.0)]
    for spec in specs:
        for t in (0, spec.T // 2, spec.T - 1):
            for i in (0, spec.L // 2, spec.L - 1):
                for kern in (kernel_f(spec, Cell(i, t), kp), kernel_g(spec, Cell(i, t), kp)):
                    if not kern.boundary:
                        worst = max(worst, abs(kern.values.sum() * spec.domega - 1.0))
    return [Check("kernel_normalization", worst, "|sum kernel domega - 1| <= 1e-12", worst <= 1e-12)]


def step_checks(cfg: RunConfig) -> list[Check]:
    spec = ex.horizon_spec(cfg, min(50, cfg.lattice.T))
    lam = cfg.collapse.lam
    checks = []
    # one exponential step against the Gaussian weighting exp(-lam^2 (N - dW / (2 lam domega))^2 domega)
    st = ex.initial_state(cfg, spec, "linear")
    N0 = st.N_grid()[:, 0, :]
    i = int(np.argmax(np.ptp(N0, axis=0)))
    cell = Cell(i, 0)
    if i != 0:
        # walk the first row up to the chosen cell
        for j in range(i):
            st = step_linear(spec, st, Cell(j, 0), 0.0, CollapseParams(lam, integrator="linear"))
    worst = 0.0
    if lam > 0:
        for dW in (-0.01, 0.0, 3e-4, 0.02):
            after = step_linear(spec, st, cell, dW, CollapseParams(lam, integrator="linear"))
            N = st.N_at(cell)
            gauss = np.log(np.abs(st.amplitudes)) - lam ** 2 * (N - dW / (2 * lam * spec.domega)) ** 2 * spec.domega
            got = after.log_amp.real
            d = (got - got[0]) - (gauss - gauss[0])
            worst = max(worst, float(np.max(np.abs(d))))
    checks.append(Check("one_step_gaussian_form", worst, "log-ratio error <= 1e-9", worst <= 1e-9))

    # pathwise dB / dW identity and linear-vs-nonlinear pairing
    fol = standard_foliation(spec)
    noise = NoiseField(derive_seed(cfg.seed, 79), spec)
    lin0 = ex.initial_state(cfg, spec, "linear")
    nl0 = ex.initial_state(cfg, spec, "nonlinear")
    rl = run_path(spec, lin0, fol, noise, cfg.collapse.params("linear"), stop_at_collapse=False,
                  record_steps=True, record_grids=True)
    s = rl.steps
    ident = float(np.max(np.abs(s["dB"] - (s["dW"] - 2 * lam * s["meanN"] * spec.domega))))
    checks.append(Check("pathwise_dB_dW_identity", ident, "<= 1e-12", ident <= 1e-12))
    rn = run_path(spec, nl0, fol, RecordedNoise(spec, rl.grids["dB"]), cfg.collapse.params("nonlinear"),
                  stop_at_collapse=False)
    pair = float(np.max(np.abs(rn.final.weights() - rl.final.weights())))
    checks.append(Check("linear_nonlinear_pairing", pair, "<= 1e-9 (exponential scheme)", pair <= 1e-9))
    return checks


def verify(cfg: RunConfig, workers: int = 1, variance_scale: float = 1.0, mutation: str | None = None,
           include_oracle: bool = True, martingale_paths: int = MARTINGALE_PATHS) -> RunResult:
    t0 = time.perf_counter()
    checks = []
    checks += kernel_checks(cfg)
    checks += step_checks(cfg)
    checks += foliation_checks(cfg)
    mchecks, msum = martingale_checks(cfg, workers, martingale_paths, variance_scale=variance_scale,
                                      mutation=mutation)
    checks += mchecks
    born = ex.born(_asymmetric(cfg).with_overrides(paths=max(cfg.experiment.paths, 2000)), workers, runs=1,
                   mutation=mutation)
    checks += [dataclasses.replace(c, name="born_asym_" + c.name) for c in born.checks]
    bea = ex.beable(cfg, workers)
    checks += [dataclasses.replace(c, name="beable_" + c.name) for c in bea.checks]
    summary = {"martingale": msum, "born": born.summary, "beable": {k: v for k, v in bea.summary.items()}}
    if include_oracle:
        orc = oracle(cfg)
        checks += [dataclasses.replace(c, name="oracle_" + c.name) for c in orc.checks]
        summary["oracle"] = orc.summary
    tab = np.array([[k, float(c.passed)] for k, c in enumerate(checks)])
    res = RunResult("verify", cfg, summary, {"": (["check", "passed"], tab)}, checks, [],
                    time.perf_counter() - t0)
    return res


# -- Fock oracle ----------------------------------------------------------------------

ORACLE_SPEC = LatticeSpec(2, 3, 2.0, 1.0)
ORACLE_KERNEL = KernelParams(k=0.5)
ORACLE_CUTOFF = 3
EQUIV_LAM = 0.1
EQUIV_SEEDS = 20
ENERGY_SAMPLES = 10_000


def _energy_state(model: fock.FockModel) -> fock.MatterFockState:
    """Two branches with distinct, time-phased records and distinct matter energies."""
    fs = model.fspec
    a1 = fock.phased_alpha(fs, [0.5, 0.1], 0.6)
    a2 = fock.phased_alpha(fs, [0.1, 0.5], 0.6)
    psi = np.stack([np.sqrt(0.5) * fock.coherent_state(fs, a1), np.sqrt(0.5) * fock.coherent_state(fs, a2)])
    J = [np.zeros((model.spec.T, model.spec.L))] * 2
    return fock.MatterFockState(psi, J, np.array([1.0, 3.0]))


def oracle(cfg: RunConfig) -> RunResult:
    t0 = time.perf_counter()
    spec, kp = ORACLE_SPEC, ORACLE_KERNEL
    fs = fock.FockSpec.for_lattice(spec, ORACLE_CUTOFF)
    model = fock.FockModel(spec, fs, kp)
    checks = []
    summary = {"lattice": dataclasses.asdict(spec), "cutoff": ORACLE_CUTOFF, "dim": fs.dim}

    alg = fock.algebra_report(model)
    summary["algebra"] = alg
    for key, label in (("NN", "[N(x),N(y)]"), ("AA", "[A(x),A(y)]"), ("NA_spacelike", "[N(x),A(y)] spacelike"),
                       ("NA_kernel_sum", "[N(x),A(y)] - kernel sum"), ("aa", "[a(x),a(y)]"),
                       ("ladder_offtop", "[a,a+] - 1/domega off top sector"), ("hermiticity", "N, A hermiticity")):
        checks.append(Check(f"algebra_{key}", alg[key], f"{label} norm <= 1e-12", alg[key] <= 1e-12))
    checks.append(Check("algebra_NA_timelike_nonzero", alg["NA_timelike_max"], "> 0 for some timelike pair",
                        alg["NA_timelike_max"] > 0))
    checks.append(Check("N_positive_semidefinite", alg["N_min_eigenvalue"], ">= 0", alg["N_min_eigenvalue"] >= 0))

    comm = 0.0
    for x, y in ((Cell(0, 1), Cell(1, 1)), (Cell(0, 1), Cell(1, 2)), (Cell(1, 0), Cell(0, 1))):
        comm = max(comm, fock.spacelike_commutation(model, x, y, ([2.0, -1.0], [0.5, 1.5]), (0.4, -0.7), 0.8))
    checks.append(Check("spacelike_advances_commute", comm, "<= 1e-12", comm <= 1e-12))

    H = fock.build_H_pointer(spec, fs)
    checks.append(Check("H_pointer_hermitian", H.hermiticity_error(), "<= 1e-12", H.hermiticity_error() <= 1e-12))

    dc = fock.double_commutator_report(model, Cell(0, 2))
    summary["double_commutator"] = dc
    checks.append(Check("smeared_double_commutator_zero", dc["relative"],
                        "[N,[N,H_pointer]] = 0 (relative norm <= 1e-12)", dc["relative"] <= 1e-12,
                        f"f spans rows {dc['f_time_rows']}, absolute norm {dc['norm']:.4g}"))

    div = fock.delta_divergence((1.0, 2.0, 4.0))
    summary["delta_divergence"] = div
    e = [r["expectation"] for r in div["rows"]]
    ratios = [e[k] / e[k + 1] for k in range(len(e) - 1)]
    checks.append(Check("delta_divergence_1_over_domega", ratios, "each ratio 2 within 5%",
                        all(abs(r / 2 - 1) <= 0.05 for r in ratios),
                        "operator norms " + ", ".join(f"{r['operator_norm']:.4g}" for r in div["rows"])))

    st = _energy_state(model)
    params = CollapseParams(0.5)
    emc = fock.energy_monte_carlo(model, st, Cell(0, 2), params, ENERGY_SAMPLES, derive_seed(cfg.seed, 90))
    summary["energy_monte_carlo"] = emc
    for name in ("pointer", "matter"):
        z = emc[name]["z_vs_zero"]
        checks.append(Check(f"collapse_energy_{name}_zero_mean", z, "|z| <= 3 over 1e4 one-step samples",
                            abs(z) <= 3, f"mean {emc[name]['mean_change']:.4g} +- {emc[name]['stderr']:.2g}"))
    zp = emc["pointer"]["z_vs_predicted"]
    checks.append(Check("drift_formula_matches_monte_carlo", zp, "|z| <= 3", abs(zp) <= 3))

    one = fock.DenseOp(fock.identity(fs).mat, "1")
    d1 = fock.expectation_drift(model, one, st, Cell(0, 2), params)
    dN = fock.expectation_drift(model, model.N(Cell(0, 2)), st, Cell(0, 2), params)
    nnn = fock.commutator(model.N(Cell(0, 2)), fock.commutator(model.N(Cell(0, 2)), model.N(Cell(0, 2)))).norm()
    checks.append(Check("identity_drift_zero", [abs(d1[0]), abs(d1[1])], "both <= 1e-12",
                        max(abs(d1[0]), abs(d1[1])) <= 1e-12))
    checks.append(Check("N_double_commutator_zero", nnn, "<= 1e-12", nnn <= 1e-12))

    Js = [np.zeros((spec.T, spec.L)), np.zeros((spec.T, spec.L))]
    Js[0][0, 0] = 1.0
    Js[1][0, 1] = 1.0
    eq = fock.oracle_equivalence(spec, kp, ORACLE_CUTOFF, [0.6, 0.8], Js, EQUIV_LAM, range(EQUIV_SEEDS))
    summary["oracle_equivalence"] = {k: eq[k] for k in ("max_rel_diff", "mean_move")}
    checks.append(Check("oracle_equivalence", eq["max_rel_diff"], "max relative weight difference < 0.02",
                        eq["max_rel_diff"] < 0.02, f"lam {EQUIV_LAM}, {EQUIV_SEEDS} seeds, mean weight move "
                                                   f"{eq['mean_move']:.3g}"))

    alpha = {Cell(0, 0): 0.3 + 0.2j, Cell(0, 1): -0.25j, Cell(1, 1): 0.35}
    tc = fock.truncation_convergence(spec, kp, alpha, Cell(0, 2), (2, 4, 6))
    summary["truncation"] = tc
    ch = tc["changes"]
    ratio = ch[0] / ch[1] if ch[1] > 0 else float("inf")
    checks.append(Check("truncation_convergence", ratio, "change ratio >= 4", ratio >= 4))

    rows = [[k, float(c.passed)] for k, c in enumerate(checks)]
    return RunResult("oracle", cfg, summary, {"": (["check", "passed"], np.array(rows))}, checks, [],
                     time.perf_counter() - t0)
