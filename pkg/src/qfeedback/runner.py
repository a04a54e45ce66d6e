"""Run configured scenarios and write plot-agnostic artifacts.

Every run gets its own directory named <protocol>-<config hash> under the
output root (flag, then the QFEEDBACK_OUTPUT_ROOT environment variable,
then ./qfeedback_runs).  Tables are RFC-4180 CSV, summaries JSON, and the
manifest records enough (config, seed, generator, versions) to reproduce
every byte.  Default figure axes that the source material does not pin
down are listed under unverified_axes in the manifest.
"""

import csv
import datetime
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import engine, memory, models, oracle, scenarios, stats, superop

OUTPUT_ROOT_ENV = "QFEEDBACK_OUTPUT_ROOT"

try:
    from importlib.metadata import version as _pkg_version
    PACKAGE_VERSION = _pkg_version("qfeedback")
except Exception:  # pragma: no cover
    PACKAGE_VERSION = "0.1.0"

FIGURE_IDS = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7")
ORACLE_SCENARIOS = ("rabi", "inversion", "rabi-nofeedback")


def output_root(explicit=None):
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(env) if env else Path("qfeedback_runs")


def run_directory(cfg_hash, name, root=None):
    path = output_root(root) / f"{name}-{cfg_hash}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _utc_now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def base_manifest(raw, seed, unverified_axes=(), resolved=None, label=""):
    return {
        "created_utc": _utc_now(),
        "package_version": PACKAGE_VERSION,
        "rng": oracle.rng_metadata(),
        "config": raw,
        "config_hash": config_mod.config_hash(raw),
        "seed": seed,
        "resolved": resolved or {},
        "unverified_axes": list(unverified_axes),
        "label": label,
    }


def _fmt(x):
    """Canonical cell formatting: repr round-trip floats, '.' decimal."""
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


# ---------------------------------------------------------------------------
# scenario execution


def inversion_results(cfg):
    sc = cfg.inversion_scenario()
    extras = (cfg.grid_tau_max,) if cfg.grid_tau_max else ()
    ss = sc.steady_state(eps_tail=cfg.grid_eps_tail, grid_step=cfg.grid_step,
                         extra_scales=extras)
    kstate = ss.memory_state()
    mi = stats.mutual_information(kstate)
    mstats = stats.memory_statistics(kstate, order=4)
    covs = {ax: stats.covariance(kstate, models.PAULI[ax]) for ax in "xyz"}
    excited = float(np.trace(ss.rho @ models.EXCITED).real)
    summary = {
        "protocol": "inversion",
        "probabilities": {str(q): p for q, p in ss.probabilities.items()},
        "excited_population": excited,
        "covariance": {f"sigma_{ax}": covs[ax] for ax in "xyz"},
        "mutual_information": mi.value,
        "memory_entropy": mi.classical_entropy,
        "marginal_entropy": mi.marginal_entropy,
        "joint_entropy": mi.joint_entropy,
        "moments": list(mstats.moments),
        "cumulants": list(mstats.cumulants),
        "tau0": cfg.tau0,
        "tau1": cfg.tau1,
        "grid": {
            "points": int(ss.grid.taus.size),
            "tau_max": float(ss.grid.taus[-1]),
            "normalization": ss.grid.normalization(),
            "refinements": ss.grid.refinements,
        },
    }
    return summary, ss


def strobe_results(cfg, rho0=None):
    sc = cfg.strobe_scenario()
    feedback = cfg.feedback if cfg.protocol == "rabi" else True
    inst = sc.instrument(feedback=feedback)
    mem = sc.memory()
    state = sc.initial_state(rho0)
    track = [(0, 0.0,
              float(np.trace(state.marginal() @ models.SIGMA_Z).real),
              float(np.trace(state.marginal() @ models.GROUND).real),
              state.total_trace())]
    for n in range(1, cfg.steps + 1):
        state = engine.step(state, inst, mem, dt=cfg.dt)
        marg = state.marginal()
        track.append((n, n * cfg.dt,
                      float(np.trace(marg @ models.SIGMA_Z).real),
                      float(np.trace(marg @ models.GROUND).real),
                      state.total_trace()))
    steady = engine.current_resolved_steady(engine.transfer_matrix(inst))
    mstats = stats.memory_statistics(steady, order=4)
    mi = stats.mutual_information(steady)
    lags = {m: stats.two_point_correlation(steady, inst, mem, m, dt=cfg.dt)
            for m in range(1, 6)}
    summary = {
        "protocol": cfg.protocol,
        "feedback": feedback,
        "dt": cfg.dt,
        "steps": cfg.steps,
        "steady_outcome_probabilities": {
            repr(v): p for v, p in zip(mstats.values, mstats.probabilities)},
        "moments": list(mstats.moments),
        "cumulants": list(mstats.cumulants),
        "variance": mstats.variance(),
        "two_point": {f"lag_{m}": v for m, v in lags.items()},
        "mutual_information": mi.value,
        "final_sz": track[-1][2],
    }
    return summary, state, track


def _stats_rows(cfg, summary):
    base = [cfg.protocol, _fmt(cfg.gamma), _fmt(cfg.nbar), _fmt(cfg.lam),
            _fmt(cfg.detuning), _fmt(cfg.tau0), _fmt(cfg.tau1),
            _fmt(cfg.dt)]
    rows = []

    def flatten(prefix, node):
        if isinstance(node, dict):
            for k, v in node.items():
                flatten(f"{prefix}.{k}" if prefix else str(k), v)
        elif isinstance(node, (list, tuple)):
            for i, v in enumerate(node):
                flatten(f"{prefix}[{i}]", v)
        elif isinstance(node, (int, float)) and not isinstance(node, bool):
            rows.append(base + [prefix, _fmt(float(node))])

    flatten("", summary)
    return rows


STATS_HEADER = ["scenario", "gamma", "nbar", "lambda", "detuning", "tau0",
                "tau1", "dt", "statistic", "value"]


def run_config(cfg, out=None):
    """Execute one configured scenario; returns {artifact: path}."""
    out_dir = run_directory(cfg.config_hash, cfg.protocol, out)
    artifacts = {}
    resolved = {"gamma": cfg.gamma, "nbar": cfg.nbar, "lambda": cfg.lam,
                "detuning": cfg.detuning, "dt": cfg.dt, "tau0": cfg.tau0,
                "tau1": cfg.tau1, "tau1_spec": str(cfg.tau1_spec),
                "time_unit": cfg.time_unit}
    manifest = base_manifest(cfg.raw, cfg.seed, resolved=resolved,
                             label=cfg.label)

    if cfg.protocol == "inversion":
        summary, ss = inversion_results(cfg)
        state_path = out_dir / "state.json"
        with open(state_path, "w", encoding="utf-8") as fh:
            fh.write(ss.grid.to_memory_state().to_json())
        artifacts["state"] = state_path
    else:
        summary, state, track = strobe_results(cfg)
        if "csv" in cfg.formats:
            traj_path = out_dir / "trajectory.csv"
            write_csv(traj_path,
                      ["step", "time", "sz", "ground_population",
                       "total_trace"],
                      [[r[0]] + [_fmt(float(v)) for v in r[1:]]
                       for r in track])
            artifacts["trajectory"] = traj_path
        state_path = out_dir / "state.json"
        with open(state_path, "w", encoding="utf-8") as fh:
            fh.write(state.to_json())
        artifacts["state"] = state_path

    if "json" in cfg.formats:
        summary_path = out_dir / "summary.json"
        write_json(summary_path, summary)
        artifacts["summary"] = summary_path
    if "csv" in cfg.formats:
        stats_path = out_dir / "stats.csv"
        write_csv(stats_path, STATS_HEADER, _stats_rows(cfg, summary))
        artifacts["stats"] = stats_path

    manifest_path = out_dir / "manifest.json"
    write_json(manifest_path, manifest)
    artifacts["manifest"] = manifest_path
    return artifacts


# ---------------------------------------------------------------------------
# sweeps


def _set_dotted(raw, dotted, value):
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _point_config(cfg, value):
    raw = json.loads(json.dumps(cfg.raw))
    raw.pop("sweep", None)
    _set_dotted(raw, cfg.sweep["parameter"], value)
    return config_mod.resolve(raw)


def _point_stats(point_cfg):
    if point_cfg.protocol == "inversion":
        summary, _ = inversion_results(point_cfg)
        return {
            "p_minus": summary["probabilities"]["-1.0"],
            "p_plus": summary["probabilities"]["1.0"],
            "excited_population": summary["excited_population"],
            "cov_sigma_z": summary["covariance"]["sigma_z"],
            "cov_sigma_y": summary["covariance"]["sigma_y"],
            "mutual_information": summary["mutual_information"],
            "tau1": summary["tau1"],
        }
    summary, _, _ = strobe_results(point_cfg)
    probs = summary["steady_outcome_probabilities"]
    return {
        "p_minus": probs.get("-1.0", 0.0),
        "mean": summary["moments"][1],
        "variance": summary["variance"],
        "two_point_lag1": summary["two_point"]["lag_1"],
        "two_point_lag2": summary["two_point"]["lag_2"],
        "mutual_information": summary["mutual_information"],
    }


def sweep_config(cfg, out=None, threads=1):
    """One-parameter sweep; a single CSV plus manifest."""
    if cfg.sweep is None:
        raise config_mod.ConfigError("config has no [sweep] section")
    values = cfg.sweep["values"]
    point_cfgs = [_point_config(cfg, v) for v in values]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_point_stats, point_cfgs))
    else:
        results = [_point_stats(p) for p in point_cfgs]

    out_dir = run_directory(cfg.config_hash, f"sweep-{cfg.protocol}", out)
    stat_names = list(results[0].keys())
    header = [cfg.sweep["parameter"]] + stat_names
    rows = [[_fmt(float(v))] + [_fmt(float(r[k])) for k in stat_names]
            for v, r in zip(values, results)]
    sweep_path = out_dir / "sweep.csv"
    write_csv(sweep_path, header, rows)
    manifest = base_manifest(cfg.raw, cfg.seed, label=cfg.label,
                             resolved={"points": len(values)})
    manifest_path = out_dir / "manifest.json"
    write_json(manifest_path, manifest)
    return {"sweep": sweep_path, "manifest": manifest_path}


# ---------------------------------------------------------------------------
# figure tables


def _fig_inversion_point(gamma, nbar, tau0, tau1_spec="optimal"):
    tau1 = (scenarios.optimal_drive_time(gamma)
            if tau1_spec == "optimal" else tau1_spec)
    sc = scenarios.InversionScenario(gamma=gamma, nbar=nbar, lam=1.0,
                                     tau0=tau0, tau1=tau1)
    return sc.steady_state(with_grid=True)


def figure_fig2(seed):
    gammas = np.geomspace(1e-3, 1.0, 13)
    tau0s = (0.0, 0.5, 1.0)
    rows = []
    for tau0 in tau0s:
        for g in gammas:
            ss = _fig_inversion_point(g, 0.5, tau0)
            rows.append([_fmt(float(g)), _fmt(float(tau0)),
                         _fmt(ss.probabilities[-1.0])])
    return {
        "header": ["gamma_over_lambda", "tau0_in_1_over_lambda",
                   "P_ss_minus1"],
        "rows": rows,
        "unverified_axes": ["gamma_over_lambda grid logspace(1e-3, 1, 13)",
                            "tau0 legend values {0, 0.5, 1}/lambda"],
        "fixed": {"nbar": 0.5, "tau1": "optimal"},
    }


def figure_fig3(seed):
    gammas = np.linspace(0.05, 1.0, 20)
    tau0s = (0.0, 0.5)
    rows = []
    for tau0 in tau0s:
        for g in gammas:
            ss = _fig_inversion_point(g, 0.5, tau0)
            kstate = ss.memory_state()
            rows.append([_fmt(float(g)), _fmt(float(tau0)),
                         _fmt(stats.covariance(kstate, models.SIGMA_Z)),
                         _fmt(stats.covariance(kstate, models.SIGMA_Y))])
    return {
        "header": ["gamma_over_lambda", "tau0_in_1_over_lambda",
                   "cov_k_sigma_z", "cov_k_sigma_y"],
        "rows": rows,
        "unverified_axes": ["gamma_over_lambda grid linspace(0.05, 1, 20)"],
        "fixed": {"nbar": 0.5, "tau1": "optimal"},
    }


def figure_fig4(seed):
    tau0s = np.linspace(0.0, 5.0, 21)
    nbars = (0.1, 0.5, 1.0)
    rows = []
    for nbar in nbars:
        for tau0 in tau0s:
            ss = _fig_inversion_point(0.5, nbar, float(tau0))
            kstate = ss.memory_state()
            mi = stats.mutual_information(kstate)
            rows.append([_fmt(float(tau0)), _fmt(float(nbar)),
                         _fmt(mi.value), _fmt(mi.classical_entropy)])
    return {
        "header": ["lambda_tau0", "nbar", "mutual_information",
                   "memory_entropy"],
        "rows": rows,
        "unverified_axes": ["lambda_tau0 grid linspace(0, 5, 21)"],
        "fixed": {"gamma_over_lambda": 0.5, "tau1": "optimal"},
    }


def figure_fig5(seed):
    raw = {
        "physics": {"frequency_ghz": 3.57, "temperature_mk": 46.0,
                    "gamma_khz": 80.0, "lambda_khz": 500.0},
        "protocol": {"name": "rabi", "steps": 40},
        "run": {"seed": seed},
    }
    cfg = config_mod.resolve(raw)
    _, _, track = strobe_results(cfg, rho0=scenarios.equal_superposition())
    qb = cfg.strobe_scenario().qubit
    gen = qb.liouvillian(drive_on=True)
    rho0 = scenarios.equal_superposition()
    rows = []
    for n, t, sz, _pg, _tr in track:
        free = superop.unvec(superop.expm(gen, t) @ superop.vec(rho0), 2)
        sz_free = float(np.trace(free @ models.SIGMA_Z).real)
        rows.append([_fmt(t * 1e6), _fmt(sz), _fmt(sz_free)])
    return {
        "header": ["time_us", "sz_feedback", "sz_free_decay"],
        "rows": rows,
        "unverified_axes": ["duration 40 readout periods"],
        "fixed": {"frequency_ghz": 3.57, "temperature_mk": 46.0,
                  "gamma_khz": 80.0, "lambda_khz": 500.0,
                  "nbar": cfg.nbar, "dt_us": cfg.dt * 1e6,
                  "initial": "equal superposition"},
        "raw": raw,
    }


def figure_fig6(seed):
    gammas = np.linspace(0.0, 1.0, 21)
    dts = (1.5, 3.0)
    rows = []
    for dt in dts:
        for g in gammas:
            sc = scenarios.StroboscopicScenario(gamma=float(g), nbar=0.3,
                                                lam=1.0, dt=dt)
            fb = engine.outcome_probabilities(models.GROUND,
                                              sc.instrument(feedback=True))
            steady = engine.current_resolved_steady(
                engine.transfer_matrix(sc.instrument(feedback=False)))
            p_nofb = steady.probabilities()
            rows.append([_fmt(float(g)), _fmt(float(dt)),
                         _fmt(float(fb[0])),
                         _fmt(float(p_nofb.get(-1.0, 0.0)))])
    return {
        "header": ["gamma_over_lambda", "lambda_dt", "p_minus_feedback",
                   "p_minus_no_feedback"],
        "rows": rows,
        "unverified_axes": ["gamma_over_lambda grid linspace(0, 1, 21)"],
        "fixed": {"nbar": 0.3},
    }


def figure_fig7(seed):
    dts = np.geomspace(0.1, 10.0, 25)
    rows = []
    for dt in dts:
        sc = scenarios.StroboscopicScenario(gamma=0.4, nbar=0.3, lam=1.0,
                                            dt=float(dt))
        inst = sc.instrument(feedback=False)
        mem = sc.memory()
        steady = engine.current_resolved_steady(engine.transfer_matrix(inst))
        f1 = stats.two_point_correlation(steady, inst, mem, 1, dt=float(dt))
        f2 = stats.two_point_correlation(steady, inst, mem, 2, dt=float(dt))
        rows.append([_fmt(float(dt)), _fmt(f1), _fmt(f2)])
    return {
        "header": ["lambda_dt", "F_ss_dt", "F_ss_2dt"],
        "rows": rows,
        "unverified_axes": ["lambda_dt grid logspace(0.1, 10, 25)"],
        "fixed": {"nbar": 0.3, "gamma_over_lambda": 0.4,
                  "feedback": False},
    }


_FIGURES = {"fig2": figure_fig2, "fig3": figure_fig3, "fig4": figure_fig4,
            "fig5": figure_fig5, "fig6": figure_fig6, "fig7": figure_fig7}


def figure_table(fig_id, out=None, seed=0):
    """Emit one figure's data table (CSV) plus manifest."""
    if fig_id not in _FIGURES:
        raise config_mod.ConfigError(
            f"unknown figure id {fig_id!r}; choose from {FIGURE_IDS}")
    table = _FIGURES[fig_id](seed)
    raw = table.get("raw", {"figure": {"id": fig_id, "seed": seed}})
    cfg_hash = config_mod.config_hash(raw)
    out_dir = run_directory(cfg_hash, fig_id, out)
    csv_path = out_dir / f"{fig_id}.csv"
    write_csv(csv_path, table["header"], table["rows"])
    manifest = base_manifest(raw, seed,
                             unverified_axes=table["unverified_axes"],
                             resolved=table["fixed"])
    manifest_path = out_dir / "manifest.json"
    write_json(manifest_path, manifest)
    return {"table": csv_path, "manifest": manifest_path}


# ---------------------------------------------------------------------------
# oracle checks


ORACLE_BLOCK = 4096


def _blocked_sequences(seed, n):
    """Fixed-size seed blocks so results are thread-count independent."""
    seqs = oracle.spawn_sequences(seed, n)
    return [(a, seqs[a:min(a + ORACLE_BLOCK, n)])
            for a in range(0, n, ORACLE_BLOCK)]


def _run_blocks(fn, seed, n, threads):
    blocks = _blocked_sequences(seed, n)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: fn(b[1]), blocks))
    else:
        parts = [fn(b[1]) for b in blocks]
    return parts


def oracle_check_rabi(n_traj=20000, seed=0, threads=1):
    """Per-step outcome distribution of the reset protocol vs exact values."""
    sc = scenarios.StroboscopicScenario(gamma=0.4, nbar=0.3, lam=1.0, dt=0.5)
    inst = sc.instrument(feedback=True)
    rho0 = scenarios.equal_superposition()
    steps = 3

    parts = _run_blocks(
        lambda seqs: oracle.simulate_batch(inst, rho0, steps, seqs,
                                           len(seqs)),
        seed, n_traj, threads)
    outcomes = np.concatenate([p.outcomes for p in parts], axis=0)

    marg = rho0
    reports = {}
    passed = True
    for s in range(steps):
        expected_probs = engine.outcome_probabilities(marg, inst)
        expected = {float(x): float(p)
                    for x, p in zip(inst.outcomes, expected_probs)}
        observed, n = oracle.empirical_distribution(
            float(v) for v in outcomes[:, s])
        rep = oracle.agreement(observed, expected, n)
        reports[f"step_{s + 1}"] = rep.to_dict()
        passed = passed and rep.passed
        marg = engine.closed_unconditional_step(marg, inst)
    return {"scenario": "rabi", "n": n_traj, "passed": passed,
            "reports": reports}


def oracle_check_inversion(n_traj=20000, seed=0, threads=1,
                           dt=4e-3, horizon=48.0):
    """Jump-memory distribution: sampled chain vs the deterministic chain
    at the same step count and discretization, plus the closed-form
    stationary distribution for reference."""
    sc = scenarios.InversionScenario(
        gamma=0.5, nbar=0.5, lam=1.0, tau0=0.0,
        tau1=scenarios.optimal_drive_time(0.5))
    proc = sc.process()
    steps = int(round(horizon / dt))
    tau_cap = round((sc.tau1 + 8.0) / dt) * dt

    parts = _run_blocks(
        lambda seqs: oracle.simulate_batch_monitoring(
            proc, dt, models.GROUND, -1.0, steps, seqs, len(seqs), tau_cap),
        seed, n_traj, threads)
    ks = [m[0] for p in parts for m in p.final_memory]

    inst = engine.discrete_jump_instrument(proc, dt)
    chain = engine.jump_chain_init(proc, dt, tau_cap, models.GROUND, -1.0)
    plan = engine.jump_chain_plan(chain, proc, inst)
    for _ in range(steps):
        chain = engine.jump_chain_step(chain, proc, inst, plan)
    expected = engine.jump_chain_channel_probabilities(chain, proc)

    observed, n = oracle.empirical_distribution(ks)
    rep = oracle.agreement(observed, expected, n)

    closed = sc.steady_state(with_grid=False).probabilities
    gap = max(abs(expected[q] - closed[q]) for q in proc.channels)
    return {"scenario": "inversion", "n": n_traj, "passed": rep.passed,
            "reports": {"final_distribution": rep.to_dict()},
            "closed_form": {str(q): closed[q] for q in proc.channels},
            "discretization_gap": gap, "dt": dt, "steps": steps}


def oracle_check_rabi_nofeedback(n_traj=20000, seed=0, threads=1):
    """Lag-1 outcome product at stationarity vs the deterministic value."""
    sc = scenarios.StroboscopicScenario(gamma=0.4, nbar=0.3, lam=1.0, dt=0.5)
    inst = sc.instrument(feedback=False)
    mem = sc.memory()
    steady = engine.current_resolved_steady(engine.transfer_matrix(inst))
    hyb = stats.hybrid_state(steady)
    values = np.array([float(v) for v in hyb.values])
    probs = np.array(hyb.probabilities)
    comps = [e.state for e in hyb.entries]

    mean = float(values @ probs)
    cov1 = stats.two_point_correlation(steady, inst, mem, 1)
    expected_product = cov1 + mean * mean

    def block(seqs):
        res = oracle.simulate_batch(inst, None, 1, seqs, len(seqs),
                                    initial_mixture=(probs, comps))
        x0 = values[res.initial_component]
        return x0 * res.outcomes[:, 0]

    samples = np.concatenate(_run_blocks(block, seed, n_traj, threads))
    rep = oracle.scalar_agreement(samples, expected_product)
    return {"scenario": "rabi-nofeedback", "n": n_traj,
            "passed": rep["passed"],
            "reports": {"lag1_product": rep},
            "two_point_lag1": cov1, "mean": mean}


def oracle_sample_trajectories(name, n, seed):
    """Full single-trajectory records (outcomes + memory path) for dumps."""
    seqs = oracle.spawn_sequences(seed, n)
    if name in ("rabi", "rabi-nofeedback"):
        sc = scenarios.StroboscopicScenario(gamma=0.4, nbar=0.3, lam=1.0,
                                            dt=0.5)
        inst = sc.instrument(feedback=(name == "rabi"))
        mem = sc.memory()
        rho0 = scenarios.equal_superposition()
        return [oracle.simulate(inst, mem, rho0, 20, s) for s in seqs]
    if name == "inversion":
        sc = scenarios.InversionScenario(
            gamma=0.5, nbar=0.5, lam=1.0, tau0=0.0,
            tau1=scenarios.optimal_drive_time(0.5))
        proc = sc.process()
        dt = 0.05
        tau_cap = round((sc.tau1 + 8.0) / dt) * dt
        inst = engine.discrete_jump_instrument(proc, dt)
        mem = engine.monitoring_memory(dt, -1.0, tau_cap, proc.channels)
        return [oracle.simulate(inst, mem, models.GROUND, 200, s)
                for s in seqs]
    raise config_mod.ConfigError(
        f"unknown oracle scenario {name!r}; choose from {ORACLE_SCENARIOS}")


def oracle_check(name, n_traj=20000, seed=0, threads=1, out=None):
    if name == "rabi":
        report = oracle_check_rabi(n_traj, seed, threads)
    elif name == "inversion":
        report = oracle_check_inversion(n_traj, seed, threads)
    elif name == "rabi-nofeedback":
        report = oracle_check_rabi_nofeedback(n_traj, seed, threads)
    else:
        raise config_mod.ConfigError(
            f"unknown oracle scenario {name!r}; choose from "
            f"{ORACLE_SCENARIOS}")
    report["seed"] = seed
    report["rng"] = oracle.rng_metadata()
    if out is not None:
        raw = {"oracle_check": {"scenario": name, "seed": seed,
                                "trajectories": n_traj}}
        out_dir = run_directory(config_mod.config_hash(raw),
                                f"oracle-{name}", out)
        write_json(out_dir / "report.json", report)
        write_json(out_dir / "manifest.json", base_manifest(raw, seed))
        report["paths"] = {"report": str(out_dir / "report.json")}
    return report
