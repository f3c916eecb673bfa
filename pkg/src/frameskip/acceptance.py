"""The twelve acceptance criteria, each runnable on its own.

Every criterion drives the bundled configs through the same harness the CLI
uses (with the subset of checks it needs) and reports a
:class:`CriterionResult`. ``python -m frameskip.acceptance`` runs them all.
"""

from __future__ import annotations

import argparse
import filecmp
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cli import default_config
from .control.reinforce import SoftmaxLinearPolicy, _sums
from .harness.config import Config, ExperimentConfig
from .harness.experiments import run_experiment


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str
    elapsed: float
    limit: float | None = None

    @property
    def within_time(self) -> bool:
        return self.limit is None or self.elapsed <= self.limit

    @property
    def ok(self) -> bool:
        return self.passed and self.within_time

    def line(self) -> str:
        budget = f" (limit {self.limit:g} s)" if self.limit else ""
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name} [{self.elapsed:.1f} s{budget}] {self.detail}"


def load(name: str, overrides: dict | None = None) -> Config:
    """A bundled config with ``{"section.key": value}`` overrides."""
    cfg = Config.load(default_config(name))
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        cfg.set(section, key, value)
    return cfg


def _run(cfg: Config, root, jobs: int = 1):
    return run_experiment(ExperimentConfig.from_config(cfg), root, jobs=jobs)


def _timed(name, limit, fn) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(name, passed, detail, time.perf_counter() - t0, limit)


def _bounds(root, checks: str):
    out = _run(load("verify-bounds", {"bounds.checks": checks}), root)
    return out.passed, "; ".join(c.line() for c in out.checks)


# ---------------------------------------------------------------------------
# gradient oracle for criterion 10


def bandit_objective(w, features, rewards, start) -> float:
    """Expected reward of a one-decision episode: ``sum_s start_s sum_a pi(a|s) r(s,a)``."""
    policy = SoftmaxLinearPolicy(features.shape[1], rewards.shape[1], w)
    return float(sum(start[s] * policy.probs(features[s]) @ rewards[s] for s in range(len(start))))


def expected_episode_gradient(w, features, rewards, start, gamma=0.99) -> np.ndarray:
    """Exact expectation of the per-episode estimator, by enumerating episodes."""
    policy = SoftmaxLinearPolicy(features.shape[1], rewards.shape[1], w)
    grad = np.zeros_like(policy.w)
    for s, ps in enumerate(start):
        p = policy.probs(features[s])
        for a in range(rewards.shape[1]):
            ep = _sums(policy, [features[s]], [p], [a], [rewards[s, a]], [1], gamma, True, rewards[s, a])
            grad += ps * p[a] * ep.gradient(0.0)
    return grad


def finite_difference_gradient(f, w, h=1e-6) -> np.ndarray:
    g = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        up, down = w.copy(), w.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (f(up) - f(down)) / (2 * h)
    return g


def gradient_check(seed: int = 0) -> float:
    """Relative error between the estimator's expectation and finite differences."""
    rng = np.random.default_rng(seed)
    features = np.eye(2)
    rewards = rng.uniform(-1.0, 1.0, (2, 3))
    start = np.array([0.4, 0.6])
    w = rng.normal(0.0, 0.5, (3, 3))
    exact = expected_episode_gradient(w, features, rewards, start)
    fd = finite_difference_gradient(lambda v: bandit_objective(v, features, rewards, start), w)
    return float(np.abs(exact - fd).max() / np.abs(fd).max())


# ---------------------------------------------------------------------------
# criteria


def c1(root):
    return _timed("1 induced-model consistency", 10, lambda: _bounds(root, "consistency"))


def c2(root):
    return _timed("2 value and Q deficits", 30, lambda: _bounds(root, "deficit"))


def c3(root):
    return _timed("3 lower-bound tightness", 5, lambda: _bounds(root, "tightness"))


def c4(root):
    return _timed("4 reversible price of inertia", 10, lambda: _bounds(root, "reversible"))


def c5(root):
    return _timed("5 greedy loss", 15, lambda: _bounds(root, "greedy"))


def c6(root):
    return _timed("6 aggregate bound and repetition choice", 30, lambda: _bounds(root, "aggregate repeat-choice"))


def c7(root):
    def body():
        out = _run(load("prediction", {"prediction.lambda": "0 1"}), root)
        worst = [c for c in out.checks if not c.passed]
        return out.passed, f"{len(out.checks) - len(worst)}/{len(out.checks)} (d, lambda) bounds hold" + (
            "; " + "; ".join(c.line() for c in worst) if worst else ""
        )

    return _timed("7 prediction error bound", 120, body)


def c8(root):
    def body():
        a = _run(load("verify-bounds", {"bounds.checks": "grid-deficit"}), root)
        b = _run(load("control"), root)
        return a.passed and b.passed, "; ".join(c.line() for c in a.checks + b.checks)

    return _timed("8 pitted grid world", 600, body)


def c9(root):
    def body():
        out = _run(load("sweep-d"), root)
        return out.passed, "; ".join(c.line() for c in out.checks)

    return _timed("9 Acrobot Sarsa sweep", 1800, body)


def c10(root):
    def body():
        err = gradient_check()
        out = _run(load("reinforce"), root)
        fd_ok = err <= 1e-4
        return fd_ok and out.passed, f"finite-difference relative error {err:.2e}; " + "; ".join(c.line() for c in out.checks)

    return _timed("10 REINFORCE gradient and variance", 1800, body)


def c11(root):
    def body():
        a = _run(load("bandit"), root)
        b = _run(load("bandit-bernoulli"), root)
        return a.passed and b.passed, "; ".join(c.line() for c in a.checks + b.checks)

    return _timed("11 EXP3.1 arm selection", 600, body)


# small versions of every bundled config, for the determinism check
SMALL = {
    "verify-bounds": {
        "consistency.instances": 5,
        "deficit.instances": 5,
        "reversible.instances": 5,
        "greedy.instances": 5,
        "aggregate.instances": 5,
        "repeat-choice.instances": 5,
        "grid-deficit.targets": 2.13,
    },
    "prediction": {"experiment.seeds": 2, "prediction.steps": 16000, "prediction.record_steps": 8000},
    "control": {"experiment.seeds": 2, "control.d": "1 2", "control.episodes": 200, "control.eval_every": 50, "control.eval_episodes": 5},
    "reinforce": {"experiment.seeds": 2, "control.episodes": 50, "control.score_window": 10, "control.window": 10, "control.variance_samples": 5},
    "figar": {"experiment.seeds": 2, "control.episodes": 50, "control.score_window": 10, "control.window": 10},
    "sweep-d": {"experiment.seeds": 2, "sweep.gamma": "0.99 1.0", "sweep.d": "1 3", "sweep.episodes": 30, "sweep.score_window": 10},
    "bandit": {"experiment.seeds": 2, "bandit.episodes": 200, "bandit.window": 50, "bandit.baseline_episodes": 20},
    "bandit-bernoulli": {"experiment.seeds": 2, "bandit.episodes": 500},
}


def small_config(name: str, master_seed: int = 7) -> Config:
    return load(name, {**SMALL[name], "experiment.master_seed": master_seed})


def tree_differences(a: Path, b: Path) -> list[str]:
    """Relative paths whose presence or bytes differ between two trees."""
    files_a = {p.relative_to(a) for p in a.rglob("*") if p.is_file()}
    files_b = {p.relative_to(b) for p in b.rglob("*") if p.is_file()}
    diff = sorted(str(p) for p in files_a ^ files_b)
    diff += sorted(str(p) for p in files_a & files_b if not filecmp.cmp(a / p, b / p, shallow=False))
    return diff


def c12(root):
    def body():
        bad = []
        for name in SMALL:
            first, second = Path(root) / "det-a", Path(root) / "det-b"
            _run(small_config(name), first)
            _run(small_config(name), second, jobs=2)  # worker processes must not change a byte
            bad += [f"{name}: {p}" for p in tree_differences(first, second)]
        return not bad, "all configs byte-identical on rerun" if not bad else "differences: " + ", ".join(bad)

    return _timed("12 determinism", None, body)


CRITERIA = (c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run the acceptance criteria.")
    parser.add_argument("which", nargs="*", type=int, help="criterion numbers (default: all)")
    parser.add_argument("--out", type=Path, help="keep outputs here instead of a temporary directory")
    args = parser.parse_args(argv)
    chosen = [CRITERIA[i - 1] for i in args.which] if args.which else list(CRITERIA)
    with tempfile.TemporaryDirectory() as tmp:
        root = args.out or Path(tmp)
        results = []
        for fn in chosen:
            res = fn(root)
            print(res.line(), flush=True)
            results.append(res)
    return 0 if all(r.ok for r in results) else 1


if __name__ == "__main__":
    raise SystemExit(main())
