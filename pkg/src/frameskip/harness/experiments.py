"""Experiment runners behind the CLI.

Every kind splits into a per-seed job and a finalizer. Jobs are top-level
functions of ``(ExperimentConfig, index)`` so they pickle for worker
processes; each derives all of its randomness from
``seed_sequence(master_seed, index, *component)``. Finalizers run after all
seeds have finished, write the aggregate files and return the ``--assert``
checks bound to the config.

Output layout::

    <root>/index.txt                 one line per config digest
    <root>/<digest>/config.cfg       canonical copy of the config
    <root>/<digest>/<index>/*.csv    per-seed records
    <root>/<digest>/aggregate.csv    plus plot data, tables and checks.txt
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import bounds, prediction
from ..bandit import bernoulli_bandit_run, meta_run, moving_average
from ..control import reinforce as rf
from ..control.qlearning import QLearningConfig, q_learning_run, window_curve
from ..control.sarsa import (
    SarsaConfig,
    acrobot_tile_coder,
    figar_sarsa_run,
    one_hot,
    sarsa_acrobot_run,
    sarsa_lambda_run,
)
from ..envs import acrobot as ab
from ..envs.chain import chain_mrp
from ..envs.core import TabularEnv
from ..envs.gridworld import (
    CANONICAL_PENALTIES,
    GridWorld,
    calibrate_pit_penalty,
    canonical_spec,
    gridworld_to_tabular,
    load_map,
)
from ..tabular import (
    evaluate_mrp,
    evaluate_policy_with_repeat,
    greedy_policy,
    induce_mdp,
    induce_mrp,
    max_norm,
    optimal_values,
    price_of_inertia,
    random_mdp,
    random_mrp,
    stationary_distribution,
    value_iteration,
)
from .config import Config, ConfigError, ExperimentConfig, seed_sequence
from .results import Series, Summary, aggregate, emit_plot_data, format_table, mean_stderr, separation, write_csv


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class RunOutcome:
    directory: Path
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def output_root(explicit=None, environ=None) -> Path:
    """``--out`` wins, then ``FSRL_OUT``, then ``./runs``."""
    environ = os.environ if environ is None else environ
    if explicit:
        return Path(explicit)
    if environ.get("FSRL_OUT"):
        return Path(environ["FSRL_OUT"])
    return Path("runs")


# ---------------------------------------------------------------------------
# environments


def gridworld_spec(cfg: Config):
    name = cfg.get("env", "map", default="canonical")
    kw = {}
    if cfg.has("env", "action_retention"):
        kw["action_retention"] = cfg.get_float("env", "action_retention")
    if cfg.has("env", "redraw_includes_chosen"):
        kw["redraw_includes_chosen"] = cfg.get_bool("env", "redraw_includes_chosen")
    spec = canonical_spec() if name == "canonical" else load_map(cfg.resolve(name))
    spec = replace(spec, **kw)
    if cfg.has("env", "target_delta"):
        target = cfg.get_float("env", "target_delta")
        if name == "canonical" and not kw and target in CANONICAL_PENALTIES:
            return spec.with_penalty(CANONICAL_PENALTIES[target])
        return spec.with_penalty(calibrate_pit_penalty(spec, target, tol=cfg.get_float("env", "calibration_tol", 1e-3)))
    if cfg.has("env", "pit_penalty"):
        return spec.with_penalty(cfg.get_float("env", "pit_penalty"))
    return spec


def env_kind(cfg: Config) -> str:
    kind = cfg.get("env", "kind")
    if kind not in ("gridworld", "acrobot", "chain", "bernoulli"):
        raise ConfigError("env.kind", f"unknown environment {kind!r}")
    return kind


def _sarsa_config(cfg: Config, section: str, d: int, gamma: float | None = None) -> SarsaConfig:
    base = SarsaConfig()
    return SarsaConfig(
        d=d,
        lam=cfg.get_float(section, "lambda", base.lam),
        alpha=cfg.get_float(section, "alpha", base.alpha),
        epsilon=cfg.get_float(section, "epsilon", base.epsilon),
        epsilon_decay=cfg.get_float(section, "epsilon_decay", base.epsilon_decay),
        gamma=cfg.get_float(section, "gamma", base.gamma) if gamma is None else gamma,
        episodes=cfg.get_int(section, "episodes", base.episodes),
        replacing=cfg.get_bool(section, "replacing_traces", base.replacing),
    )


def _tile_coder(cfg: Config):
    return acrobot_tile_coder(cfg.get_int("env", "tilings", 8), cfg.get_int("env", "tiles", 8))


def _acrobot_substeps(cfg: Config) -> int:
    return cfg.get_int("env", "substeps", 4)


# ---------------------------------------------------------------------------
# verify-bounds

BOUND_HEADER = ("seed", "check", "instance", "kind", "gamma", "d", "delta_m", "eps", "bound", "exact", "slack", "holds")
BOUND_CHECKS = ("consistency", "deficit", "tightness", "reversible", "greedy", "aggregate", "grid-deficit", "repeat-choice")


def _bound_row(index, check, instance, report: bounds.BoundReport, kind="", holds=None):
    c = report.context
    return {
        "seed": index,
        "check": check,
        "instance": instance,
        "kind": c.get("kind", kind),
        "gamma": c.get("gamma", ""),
        "d": c.get("d", ""),
        "delta_m": c.get("delta_m", ""),
        "eps": c.get("eps", ""),
        "bound": report.bound_value,
        "exact": report.exact_value,
        "slack": report.slack,
        "holds": report.holds if holds is None else holds,
    }


def _check_consistency(cfg, rng, index):
    rows = []
    lo, hi = cfg.get_list("consistency", "states", int, [5, 20])
    gamma = cfg.get_float("consistency", "gamma", 0.9)
    tol = cfg.get_float("consistency", "tol", 1e-9)
    for i in range(cfg.get_int("consistency", "instances", 100)):
        p = random_mrp(rng, int(rng.integers(lo, hi + 1)), gamma)
        v, mu = evaluate_mrp(p, tol=1e-13), stationary_distribution(p)
        for d in cfg.get_list("consistency", "d", int, list(range(1, 9))):
            pd = induce_mrp(p, d)
            gap = max(max_norm(evaluate_mrp(pd, tol=1e-13) - v), max_norm(stationary_distribution(pd) - mu))
            rep = bounds.BoundReport(tol, gap, {"gamma": gamma, "d": d})
            rows.append(_bound_row(index, "consistency", i, rep, "model", gap <= tol))
    return rows


def _check_deficit(cfg, rng, index):
    rows = []
    max_s = cfg.get_int("deficit", "max_states", 8)
    max_a = cfg.get_int("deficit", "max_actions", 4)
    gammas = cfg.get_list("deficit", "gamma", float, [0.5, 0.9, 0.99])
    for i in range(cfg.get_int("deficit", "instances", 200)):
        gamma = gammas[int(rng.integers(len(gammas)))]
        m = random_mdp(rng, int(rng.integers(2, max_s + 1)), int(rng.integers(2, max_a + 1)), gamma)
        q = value_iteration(m, tol=1e-12)
        for d in cfg.get_list("deficit", "d", int, [2, 3, 5]):
            for rep in bounds.verify_value_deficit(m, d, q):
                rows.append(_bound_row(index, "deficit", i, rep))
    return rows


def _check_tightness(cfg, rng, index):
    rows = []
    tol = cfg.get_float("tightness", "tol", 1e-8)
    i = 0
    for delta in cfg.get_list("tightness", "delta", float, [0.5, 1.0, 2.0]):
        for gamma in cfg.get_list("tightness", "gamma", float, [0.5, 0.9, 0.99]):
            for d in cfg.get_list("tightness", "d", int, [2, 3, 5]):
                v_rep, q_rep = bounds.verify_value_deficit(bounds.lower_bound_mdp(delta, gamma, d), d)
                equal = abs(v_rep.exact_value - q_rep.exact_value) <= tol
                for rep in (v_rep, q_rep):
                    rows.append(_bound_row(index, "tightness", i, rep, holds=abs(rep.slack) <= tol and equal))
                i += 1
    return rows


def _check_reversible(cfg, rng, index):
    rows = []
    lo, hi = cfg.get_list("reversible", "states", int, [3, 12])
    n_actions = cfg.get_int("reversible", "actions", 4)
    gammas = cfg.get_list("reversible", "gamma", float, [0.5, 0.9, 0.99])
    for i in range(cfg.get_int("reversible", "instances", 100)):
        gamma = gammas[int(rng.integers(len(gammas)))]
        m = bounds.random_reversible_mdp(rng, int(rng.integers(lo, hi + 1)), n_actions, gamma)
        rep = bounds.check_reversible_inertia(m)
        ok = rep.holds and rep.context["reversible"] and rep.bound_value <= rep.context["coarse_bound"]
        rows.append(_bound_row(index, "reversible", i, rep, "inertia", ok))
    return rows


def _noisy(rng, q, scale):
    return q + rng.uniform(-scale, scale, q.shape)


def _suite_mdp(cfg, section, rng):
    lo, hi = cfg.get_list(section, "states", int, [2, 8])
    a_lo, a_hi = cfg.get_list(section, "actions", int, [2, 4])
    gamma = cfg.get_float(section, "gamma", 0.9)
    return random_mdp(rng, int(rng.integers(lo, hi + 1)), int(rng.integers(a_lo, a_hi + 1)), gamma)


def _check_greedy(cfg, rng, index):
    rows = []
    scale = cfg.get_float("greedy", "noise", 0.1)
    for i in range(cfg.get_int("greedy", "instances", 100)):
        m = _suite_mdp(cfg, "greedy", rng)
        q = value_iteration(m, tol=1e-12)
        rows.append(_bound_row(index, "greedy", i, bounds.greedy_loss_bound_check(m, _noisy(rng, q, scale), q), "loss"))
    return rows


def _check_aggregate(cfg, rng, index):
    rows = []
    scale = cfg.get_float("aggregate", "noise", 0.1)
    ds = cfg.get_list("aggregate", "d", int, list(range(1, 7)))
    for i in range(cfg.get_int("aggregate", "instances", 100)):
        m = _suite_mdp(cfg, "aggregate", rng)
        q = value_iteration(m, tol=1e-12)
        q_hat = _noisy(rng, q, scale)
        for d in ds:
            rows.append(_bound_row(index, "aggregate", i, bounds.aggregate_bound_check(m, q_hat, d, q), "loss"))
    return rows


def _check_grid_deficit(cfg, rng, index):
    """Exact ``|V* - V*_d|`` on the grid, which must not decrease with d."""
    rows = []
    ds = cfg.get_list("grid-deficit", "d", int, list(range(1, 7)))
    for i, target in enumerate(cfg.get_list("grid-deficit", "targets", float, [2.13, 10.12, 55.26])):
        sub = Config({**cfg.sections, "env": {**cfg.section("env"), "target_delta": repr(target)}}, cfg.source)
        m = gridworld_to_tabular(gridworld_spec(sub))
        v = optimal_values(m)
        delta = price_of_inertia(m).delta
        prev = -math.inf
        for d in ds:
            gap = max_norm(v - optimal_values(induce_mdp(m, d)))
            rep = bounds.BoundReport(math.nan, gap, {"gamma": m.gamma, "d": d, "delta_m": delta})
            rows.append(_bound_row(index, "grid-deficit", i, rep, "monotone", gap >= prev - bounds.HOLD_TOL))
            prev = gap
    return rows


def _check_repeat_choice(cfg, rng, index):
    """Small-inertia instances with a poor estimate: which d loses least?"""
    rows, choices = [], []
    scale = cfg.get_float("repeat-choice", "noise", 1.0)
    ds = cfg.get_list("repeat-choice", "d", int, list(range(1, 7)))
    n = cfg.get_int("repeat-choice", "states", 20)
    gamma = cfg.get_float("repeat-choice", "gamma", 0.9)
    for i in range(cfg.get_int("repeat-choice", "instances", 100)):
        m = bounds.gradual_chain_mdp(rng, n, gamma)
        q = value_iteration(m, tol=1e-12)
        q_hat = _noisy(rng, q, scale)
        v = q.max(axis=1)
        losses = [max_norm(v - evaluate_policy_with_repeat(m, greedy_policy(q_hat), d)) for d in ds]
        best = ds[int(np.argmin(losses))]
        delta = price_of_inertia(m, q).delta
        choices.append([index, i, delta, best, *losses])
        rep = bounds.BoundReport(math.nan, min(losses), {"gamma": gamma, "d": best, "delta_m": delta, "eps": max_norm(q - q_hat)})
        rows.append(_bound_row(index, "repeat-choice", i, rep, "argmin", best > 1))
    return rows, choices


_CHECKS = {
    "consistency": _check_consistency,
    "deficit": _check_deficit,
    "tightness": _check_tightness,
    "reversible": _check_reversible,
    "greedy": _check_greedy,
    "aggregate": _check_aggregate,
    "grid-deficit": _check_grid_deficit,
}


def bounds_seed(exp: ExperimentConfig, index: int) -> dict:
    cfg = exp.config
    checks = cfg.get_list("bounds", "checks", str, list(BOUND_CHECKS))
    unknown = set(checks) - set(BOUND_CHECKS)
    if unknown:
        raise ConfigError("bounds.checks", f"unknown checks {sorted(unknown)}")
    rows, choices = [], []
    for k, name in enumerate(BOUND_CHECKS):
        if name not in checks:
            continue
        rng = np.random.default_rng(seed_sequence(exp.master_seed, index, k))
        if name == "repeat-choice":
            r, choices = _check_repeat_choice(cfg, rng, index)
            rows += r
        else:
            rows += _CHECKS[name](cfg, rng, index)
    return {"rows": rows, "choices": choices}


def bounds_finish(exp, results, root: Path) -> list[Check]:
    cfg = exp.config
    rows = [r for res in results for r in res["rows"]]
    agg, checks = [], []
    for name in BOUND_CHECKS:
        mine = [r for r in rows if r["check"] == name]
        if not mine:
            continue
        held = sum(bool(r["holds"]) for r in mine)
        slacks = [r["slack"] for r in mine if not math.isnan(r["slack"])]
        agg.append([name, len(mine), held, min(slacks) if slacks else ""])
        if name == "repeat-choice":
            share = held / len(mine)
            need = cfg.get_float("expect", "repeat_choice_share", 0.5)
            checks.append(Check(name, share > need, f"argmin d > 1 in {held}/{len(mine)} instances (need > {need:.0%})"))
        else:
            checks.append(Check(name, held == len(mine), f"{held}/{len(mine)} hold"))
    write_csv(root / "aggregate.csv", ("check", "count", "holds", "min_slack"), agg)
    choices = [c for res in results for c in res["choices"]]
    if choices:
        ds = cfg.get_list("repeat-choice", "d", int, list(range(1, 7)))
        write_csv(root / "repeat_choice.csv", ("seed", "instance", "delta_m", "best_d", *(f"loss_d{d}" for d in ds)), choices)
    return checks


# ---------------------------------------------------------------------------
# prediction

PREDICTION_HEADER = ("seed", "d", "lambda", "alpha", "step", "error", "bound_rhs")


def _chain_task(cfg: Config):
    return chain_mrp(
        cfg.get_int("env", "states", 19),
        cfg.get_float("env", "gamma", 0.95),
        cfg.get("env", "profile", default="quadratic"),
        cfg.get_float("env", "noise", 0.0),
        cfg.get_bool("env", "realizable", False),
    )


def prediction_seed(exp: ExperimentConfig, index: int) -> dict:
    cfg = exp.config
    if env_kind(cfg) != "chain":
        raise ConfigError("env.kind", "prediction runs need a chain environment")
    task = _chain_task(cfg)
    p, phi = task.mrp, task.phi
    mu, v = stationary_distribution(p), evaluate_mrp(p)
    e_opt = prediction.value_error(p, phi, prediction.optimal_weights(p, phi, mu, v), mu, v)
    steps = cfg.get_int("prediction", "steps")
    record = cfg.get_int("prediction", "record_steps", steps)
    alpha = cfg.get_float("prediction", "alpha")
    tau = cfg.get_float("prediction", "tau", prediction.DEFAULT_TAU)
    rows = []
    for d in cfg.get_list("prediction", "d", int):
        if record % d or steps % d:
            raise ConfigError("prediction.record_steps", f"steps and record_steps must be multiples of d={d}")
        for li, lam in enumerate(cfg.get_list("prediction", "lambda", float)):
            rng = np.random.default_rng(seed_sequence(exp.master_seed, index, d, li))
            run = prediction.run_td(TabularEnv(p), phi, d, lam, alpha, steps, tau, rng, record // d)
            rhs = prediction.error_bound_factor(p.gamma, d, lam) * e_opt
            for step, w in zip(run.steps, run.weights):
                err = prediction.value_error(p, phi, w, mu, v) if not run.diverged else math.inf
                rows.append([index, d, lam, alpha, int(step), err, rhs])
    return {"rows": rows}


def prediction_finish(exp, results, root: Path) -> list[Check]:
    cfg = exp.config
    margin = cfg.get_float("expect", "bound_margin", 0.1)
    finals: dict[tuple, list] = {}
    curves: dict[tuple, list] = {}
    rhs = {}
    for res in results:
        by_key: dict[tuple, list] = {}
        for seed, d, lam, _, step, err, r in res["rows"]:
            by_key.setdefault((d, lam), []).append((step, err))
            rhs[(d, lam)] = r
        for key, pts in by_key.items():
            finals.setdefault(key, []).append(pts[-1][1])
            curves.setdefault(key, []).append(Series([s for s, _ in pts], [e for _, e in pts]))
    agg, checks = [], []
    lams = sorted({lam for _, lam in finals})
    series = {}
    for lam in lams:
        ds = sorted(d for d, l2 in finals if l2 == lam)
        means, ses = zip(*(mean_stderr(finals[(d, lam)]) for d in ds))
        series[f"lambda={lam:g}"] = Summary(np.array(ds, float), np.array(means), np.array(ses), len(results))
        for d in ds:
            m, se = mean_stderr(finals[(d, lam)])
            worst = max(finals[(d, lam)])
            limit = (1.0 + margin) * rhs[(d, lam)]
            agg.append([d, lam, m, se, len(finals[(d, lam)]), rhs[(d, lam)], worst / rhs[(d, lam)]])
            if cfg.has("expect", "bound_margin"):
                checks.append(Check(f"error-bound d={d} lambda={lam:g}", worst <= limit, f"worst final error {worst:.6g} vs limit {limit:.6g}"))
        summary = {f"d={d}": aggregate(curves[(d, lam)]) for d in ds}
        emit_plot_data(summary, root / f"learning_lambda{lam:g}", f"TD error, lambda={lam:g}", "time step", "error")
    write_csv(root / "aggregate.csv", ("d", "lambda", "final_error_mean", "final_error_stderr", "n", "bound_rhs", "worst_ratio"), agg)
    emit_plot_data(series, root / "final_error", "final error by d", "d", "error")
    return checks


# ---------------------------------------------------------------------------
# control

CONTROL_HEADER = ("seed", "algo", "env", "d", "episode", "eval_return_mean", "eval_return_stderr")
ALGOS = ("qlearning", "sarsa", "reinforce", "figar")


def _qlearning_config(cfg: Config, section: str, d: int, gamma: float | None = None) -> QLearningConfig:
    base = QLearningConfig()
    frac = cfg.get_float(section, "alias_fraction", base.alias_fraction)
    return QLearningConfig(
        d=d,
        episodes=cfg.get_int(section, "episodes", base.episodes),
        epsilon=cfg.get_float(section, "epsilon", base.epsilon),
        alpha0=cfg.get_float(section, "alpha", base.alpha0),
        alpha_decay=cfg.get_float(section, "alpha_decay", base.alpha_decay),
        gamma=cfg.get_float(section, "gamma", base.gamma) if gamma is None else gamma,
        max_steps=cfg.get_int(section, "max_steps", base.max_steps),
        eval_every=cfg.get_int(section, "eval_every", base.eval_every),
        eval_episodes=cfg.get_int(section, "eval_episodes", base.eval_episodes),
        alias_fraction=frac if frac > 0 else None,
    )


def _reinforce_config(cfg: Config, section: str, d: int, gamma: float | None = None) -> rf.ReinforceConfig:
    base = rf.ReinforceConfig()
    return rf.ReinforceConfig(
        d=d,
        gamma=cfg.get_float(section, "gamma", base.gamma) if gamma is None else gamma,
        lr=cfg.get_float(section, "alpha", base.lr),
        episodes=cfg.get_int(section, "episodes", base.episodes),
        baseline=cfg.get_bool(section, "baseline", base.baseline),
        baseline_decay=cfg.get_float(section, "baseline_decay", base.baseline_decay),
        weight_by_discount=cfg.get_bool(section, "weight_by_discount", base.weight_by_discount),
    )


def control_one(cfg: Config, section: str, algo: str, d: int, ss, gamma: float | None = None) -> dict:
    """One learner at one ``d``: its learning curve, score and extras."""
    kind = env_kind(cfg)
    window = cfg.get_int(section, "window", 100)
    score_window = cfg.get_int(section, "score_window", 500)
    out = {}
    if algo == "qlearning":
        if kind != "gridworld":
            raise ConfigError("env.kind", "Q-learning runs on the grid world only")
        _, curve = q_learning_run(gridworld_spec(cfg), _qlearning_config(cfg, section, d, gamma), ss)
        out["curve"], out["score"] = curve, curve.final
        return out
    if algo == "reinforce":
        if kind != "acrobot":
            raise ConfigError("env.kind", "REINFORCE runs on Acrobot only")
        train_ss, probe_ss = ss.spawn(2)
        config = _reinforce_config(cfg, section, d, gamma)
        agent, returns = rf.reinforce_acrobot_run(config, train_ss, substeps=_acrobot_substeps(cfg))
        n_probe = cfg.get_int(section, "variance_samples", 0)
        if n_probe:
            source = rf.AcrobotEpisodes(probe_ss, substeps=_acrobot_substeps(cfg))
            out["variance"] = rf.gradient_variance_probe(agent, source, n_probe)
    else:
        config = _sarsa_config(cfg, section, d, gamma)
        if kind == "acrobot":
            coder = _tile_coder(cfg)
            if algo == "sarsa":
                _, returns = sarsa_acrobot_run(config, ss, coder, substeps=_acrobot_substeps(cfg))
            else:
                env = ab.Acrobot(substeps=_acrobot_substeps(cfg))
                _, returns = figar_sarsa_run(env, coder, cfg.get_list(section, "d", int), config, ss)
        elif kind == "gridworld":
            spec = gridworld_spec(cfg)
            env = GridWorld(spec, max_steps=cfg.get_int("env", "max_steps", 200))
            feats = one_hot(env.n_states)
            if algo == "sarsa":
                _, returns = sarsa_lambda_run(env, feats, config, ss)
            else:
                _, returns = figar_sarsa_run(env, feats, cfg.get_list(section, "d", int), config, ss)
        else:
            raise ConfigError("env.kind", f"{algo} does not support environment {kind!r}")
    out["curve"] = window_curve(returns, window)
    out["score"] = float(np.mean(returns[-score_window:]))
    return out


def control_seed(exp: ExperimentConfig, index: int) -> dict:
    cfg = exp.config
    algo = cfg.get("control", "algo")
    if algo not in ALGOS:
        raise ConfigError("control.algo", f"unknown algorithm {algo!r}; expected one of {', '.join(ALGOS)}")
    env = env_kind(cfg)
    ds = [0] if algo == "figar" else cfg.get_list("control", "d", int)
    rows, scores, variances = [], [], []
    for d in ds:
        res = control_one(cfg, "control", algo, d, seed_sequence(exp.master_seed, index, d))
        c = res["curve"]
        for ep, m, se in zip(c.episodes, c.mean, c.stderr):
            rows.append([index, algo, env, d, ep, m, se])
        scores.append([index, d, res["score"]])
        if "variance" in res:
            variances.append([index, d, res["variance"]])
    return {"rows": rows, "scores": scores, "variances": variances}


def _scores_by(results, key_len=1) -> dict:
    out: dict = {}
    for res in results:
        for row in res["scores"]:
            out.setdefault(tuple(row[1 : 1 + key_len]) if key_len > 1 else row[1], []).append(row[-1])
    return out


def _beats_one_checks(cfg: Config, by_d: dict, label: str = "", best: bool = True) -> list[Check]:
    checks = []
    min_z = cfg.get_float("expect", "min_z", 2.0)
    others = [d for d in by_d if d != 1]
    if best and cfg.get_bool("expect", "best_d_gt_1", False) and 1 in by_d and others:
        best = max(others, key=lambda d: mean_stderr(by_d[d])[0])
        z = separation(by_d[best], by_d[1])
        checks.append(Check(f"best-d{label}", z >= min_z, f"best d={best} vs d=1: z={z:.2f} (need >= {min_z:g})"))
    if cfg.get_bool("expect", "each_d_beats_1", False) and 1 in by_d:
        for d in others:
            z = separation(by_d[d], by_d[1])
            checks.append(Check(f"d={d}-beats-d=1{label}", z >= min_z, f"z={z:.2f} (need >= {min_z:g})"))
    return checks


def control_finish(exp, results, root: Path) -> list[Check]:
    cfg = exp.config
    by_d = _scores_by(results)
    curves: dict = {}
    for res in results:
        per: dict = {}
        for _, _, _, d, ep, m, _ in res["rows"]:
            per.setdefault(d, ([], []))
            per[d][0].append(ep)
            per[d][1].append(m)
        for d, (x, y) in per.items():
            curves.setdefault(d, []).append(Series(x, y))
    summary = {f"d={d}": aggregate(curves[d]) for d in sorted(curves)}
    rows = []
    for d in sorted(curves):
        s = summary[f"d={d}"]
        rows += [[d, int(x), m, se, s.n] for x, m, se in zip(s.x, s.mean, s.stderr)]
    write_csv(root / "aggregate.csv", ("d", "episode", "mean", "stderr", "n"), rows)
    emit_plot_data(summary, root / "learning_curves", cfg.get("control", "algo"), "episode", "return")
    ds = sorted(by_d)
    stats = [mean_stderr(by_d[d]) for d in ds]
    write_csv(root / "scores.csv", ("d", "score_mean", "score_stderr", "n"), [[d, m, se, len(by_d[d])] for d, (m, se) in zip(ds, stats)])
    (root / "table.txt").write_text(
        format_table(["score"], ds, [[m for m, _ in stats]], [[se for _, se in stats]], corner="d")
    )
    checks = _beats_one_checks(cfg, by_d)
    variances: dict = {}
    for res in results:
        for _, d, v in res["variances"]:
            variances.setdefault(d, []).append(v)
    if variances:
        vds = sorted(variances)
        write_csv(root / "variance.csv", ("d", "trace_mean", "trace_stderr", "n"),
                  [[d, *mean_stderr(variances[d]), len(variances[d])] for d in vds])
        if cfg.get_bool("expect", "variance_decreases", False) and 1 in variances:
            base = float(np.mean(variances[1]))
            for d in vds:
                if d > 1:
                    m = float(np.mean(variances[d]))
                    checks.append(Check(f"variance d={d}<d=1", m < base, f"trace {m:.6g} vs {base:.6g}"))
    return checks


# ---------------------------------------------------------------------------
# sweep-d

SWEEP_HEADER = ("seed", "gamma", "d", "score")


def _gamma_key(gamma: float) -> int:
    return int(round(gamma * 1_000_000))


def sweep_seed(exp: ExperimentConfig, index: int) -> dict:
    cfg = exp.config
    algo = cfg.get("sweep", "algo")
    if algo not in ("qlearning", "sarsa", "reinforce"):
        raise ConfigError("sweep.algo", f"cannot sweep {algo!r}")
    scores = []
    for gamma in cfg.get_list("sweep", "gamma", float):
        for d in cfg.get_list("sweep", "d", int):
            ss = seed_sequence(exp.master_seed, index, _gamma_key(gamma), d)
            scores.append([index, gamma, d, control_one(cfg, "sweep", algo, d, ss, gamma)["score"]])
    return {"scores": scores}


def sweep_finish(exp, results, root: Path) -> list[Check]:
    cfg = exp.config
    cells = _scores_by(results, 2)
    gammas = cfg.get_list("sweep", "gamma", float)
    ds = cfg.get_list("sweep", "d", int)
    means = [[mean_stderr(cells[(g, d)])[0] for d in ds] for g in gammas]
    ses = [[mean_stderr(cells[(g, d)])[1] for d in ds] for g in gammas]
    write_csv(root / "aggregate.csv", ("gamma", "d", "mean", "stderr", "n"),
              [[g, d, means[i][j], ses[i][j], len(cells[(g, d)])] for i, g in enumerate(gammas) for j, d in enumerate(ds)])
    (root / "table.txt").write_text(format_table([f"{g:g}" for g in gammas], ds, means, ses, corner="gamma \\ d"))
    series = {
        f"gamma={g:g}": Summary(np.array(ds, float), np.array(means[i]), np.array(ses[i]), len(results))
        for i, g in enumerate(gammas)
    }
    emit_plot_data(series, root / "sweep", "score by d", "d", "score")
    checks = []
    if cfg.get_bool("expect", "best_d_gt_1", False):
        i, j = np.unravel_index(int(np.argmax(means)), (len(gammas), len(ds)))
        checks.append(Check("best-cell", ds[j] > 1, f"best cell gamma={gammas[i]:g}, d={ds[j]}: {means[i][j]:.2f}"))
    if cfg.has("expect", "reference_gamma"):
        g = cfg.get_float("expect", "reference_gamma")
        by_d = {d: cells[(g, d)] for d in ds}
        checks += _beats_one_checks(cfg, by_d, f" at gamma={g:g}", best=False)
    if cfg.has("expect", "better_cell"):
        gb, db = cfg.get_list("expect", "better_cell", float)
        gw, dw = cfg.get_list("expect", "worse_cell", float)
        z = separation(cells[(gb, int(db))], cells[(gw, int(dw))])
        min_z = cfg.get_float("expect", "min_z", 2.0)
        checks.append(Check(f"cell gamma={gb:g},d={int(db)} beats gamma={gw:g},d={int(dw)}", z >= min_z, f"z={z:.2f} (need >= {min_z:g})"))
    return checks


# ---------------------------------------------------------------------------
# bandit

BANDIT_HEADER = ("seed", "episode", "arm_d", "normalized_reward", "raw_return", "p_vector")


def _reward_range(cfg: Config, spec, max_steps: int) -> tuple[float, float]:
    if cfg.has("bandit", "reward_range"):
        lo, hi = cfg.get_list("bandit", "reward_range", float)
        return lo, hi
    # every step costs 1 and the episode is capped, plus a budget of pit visits
    pits = cfg.get_float("bandit", "pit_visits", 1.0)
    return spec.step_reward * max_steps + spec.pit_penalty * pits, 0.0


def bandit_seed(exp: ExperimentConfig, index: int) -> dict:
    cfg = exp.config
    kind = env_kind(cfg)
    fixed = cfg.get_float("bandit", "fixed_gamma", None)
    episodes = cfg.get_int("bandit", "episodes")
    ss = seed_sequence(exp.master_seed, index)
    baselines = []
    if kind == "bernoulli":
        means = cfg.get_list("env", "means", float)
        res = bernoulli_bandit_run(means, episodes, ss, fixed)
    elif kind == "gridworld":
        spec = gridworld_spec(cfg)
        max_steps = cfg.get_int("env", "max_steps", 100)
        env = GridWorld(spec, max_steps=max_steps)
        config = _sarsa_config(cfg, "bandit", 1)
        arms = cfg.get_list("bandit", "arms", int)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = meta_run(env, one_hot(env.n_states), arms, episodes, config, _reward_range(cfg, spec, max_steps), ss,
                           cfg.get_int("bandit", "window", 500), fixed)
        n_base = cfg.get_int("bandit", "baseline_episodes", 0)
        for d in arms if n_base else ():
            base = SarsaConfig(**{**config.__dict__, "d": d, "episodes": n_base})
            _, rets = sarsa_lambda_run(GridWorld(spec, max_steps=max_steps), one_hot(env.n_states), base,
                                       seed_sequence(exp.master_seed, index, 1, d))
            baselines.append([index, d, float(rets.mean())])
    else:
        raise ConfigError("env.kind", "bandit runs need a gridworld or bernoulli environment")
    rows = [
        [index, ep + 1, int(res.arms[a]), x, r, " ".join(repr(float(v)) for v in p)]
        for ep, (a, x, r, p) in enumerate(zip(res.chosen, res.normalized, res.raw, res.probs))
    ]
    hist = [[index, int(d), int(c), float(c) / len(res.chosen)] for d, c in zip(res.arms, res.histogram)]
    return {"rows": rows, "hist": hist, "clamped": res.clamped, "baselines": baselines, "raw": res.raw}


def bandit_finish(exp, results, root: Path) -> list[Check]:
    cfg = exp.config
    window = cfg.get_int("bandit", "window", 500)
    hist = [h for res in results for h in res["hist"]]
    write_csv(root / "histogram.csv", ("seed", "arm_d", "pulls", "share"), hist)
    write_csv(root / "aggregate.csv", ("seed", "clamped"), [[i, res["clamped"]] for i, res in enumerate(results)])
    curves = [Series(np.arange(1, len(res["raw"]) + 1), moving_average(res["raw"], window)) for res in results]
    emit_plot_data({"moving average": aggregate(curves)}, root / "moving_average", "meta-learner return", "episode", "return")
    checks = []
    baselines: dict = {}
    for res in results:
        for _, d, m in res["baselines"]:
            baselines.setdefault(d, []).append(m)
    if baselines:
        ds = sorted(baselines)
        write_csv(root / "baselines.csv", ("arm_d", "mean_return", "stderr", "n"), [[d, *mean_stderr(baselines[d]), len(baselines[d])] for d in ds])
    if cfg.has("expect", "dominant_d"):
        dom = cfg.get_int("expect", "dominant_d")
        need = cfg.get_float("expect", "dominant_share", 0.5)
        shares = [share for _, d, _, share in hist if d == dom]
        label = f"arm {dom}" if env_kind(cfg) == "bernoulli" else f"arm d={dom}"
        checks.append(Check(f"{label} share", bool(shares) and min(shares) > need,
                            f"shares {', '.join(f'{s:.3f}' for s in shares)} (need > {need:g} in every seed)"))
        if baselines:
            best = max(baselines, key=lambda d: np.mean(baselines[d]))
            checks.append(Check("dominant baseline", best == dom, f"best fixed-d baseline is d={best}"))
    return checks


# ---------------------------------------------------------------------------
# driver

KIND_JOBS = {
    "verify-bounds": (bounds_seed, bounds_finish, "bounds.csv", BOUND_HEADER),
    "prediction": (prediction_seed, prediction_finish, "prediction.csv", PREDICTION_HEADER),
    "control": (control_seed, control_finish, "control.csv", CONTROL_HEADER),
    "sweep-d": (sweep_seed, sweep_finish, "scores.csv", SWEEP_HEADER),
    "bandit": (bandit_seed, bandit_finish, "meta.csv", BANDIT_HEADER),
}


def _write_seed(kind: str, res: dict, directory: Path) -> None:
    _, _, name, header = KIND_JOBS[kind]
    rows = res["scores"] if kind == "sweep-d" else res["rows"]
    write_csv(directory / name, header, rows)
    if kind == "control":
        write_csv(directory / "scores.csv", ("seed", "d", "score"), res["scores"])
        if res["variances"]:
            write_csv(directory / "variance.csv", ("seed", "d", "trace"), res["variances"])
    elif kind == "verify-bounds" and res["choices"]:
        write_csv(directory / "repeat_choice.csv", ("seed", "instance", "delta_m", "best_d", "losses"),
                  [[*c[:4], list(c[4:])] for c in res["choices"]])
    elif kind == "bandit":
        write_csv(directory / "histogram.csv", ("seed", "arm_d", "pulls", "share"), res["hist"])


def _update_index(root: Path, line: str) -> None:
    path = root / "index.txt"
    lines = set(path.read_text().splitlines()) if path.exists() else set()
    lines.add(line)
    path.write_text("\n".join(sorted(lines)) + "\n")


def run_experiment(exp: ExperimentConfig, root, jobs: int = 1, expected_kind: str | None = None) -> RunOutcome:
    """Run every seed, aggregate, and persist under ``root/<digest>``."""
    if expected_kind and exp.kind != expected_kind:
        raise ConfigError("experiment.kind", f"this command runs {expected_kind!r} configs, got {exp.kind!r}")
    seed_job, finish, _, _ = KIND_JOBS[exp.kind]
    root = Path(root)
    digest = exp.digest()
    out = root / digest
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(exp.config.dumps())
    indices = range(exp.n_seeds)
    if jobs > 1 and exp.n_seeds > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(seed_job, [exp] * exp.n_seeds, indices))
    else:
        results = [seed_job(exp, i) for i in indices]
    for i, res in zip(indices, results):
        _write_seed(exp.kind, res, out / str(i))
    checks = finish(exp, results, out)
    (out / "checks.txt").write_text("".join(c.line() + "\n" for c in checks))
    name = exp.config.source.name if exp.config.source else "-"
    _update_index(root, f"{digest} {exp.kind} seeds={exp.n_seeds} master={exp.master_seed} {name}")
    return RunOutcome(out, checks)
