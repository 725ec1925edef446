"""Decision functions that trigger non-activity padding periods.

Two models are provided: an independent Bernoulli draw per period, and a
hidden Markov chain whose per-state emission probability controls how
"activity-like" each period looks. The HMM can be fitted to an observed
binary activity-flag sequence with expectation-maximization so that injected
padding mimics realistic activity timing.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_STOCHASTIC_TOL = 1e-9


@dataclass
class BernoulliDecision:
    """Fires independently each period with fixed probability."""

    probability: float
    seed: int = 0
    _rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0,1]: {self.probability}")

    def decide(self, period_index: int) -> bool:
        if self._rng is None:
            self._rng = np.random.default_rng(self.seed)
        return bool(self._rng.random() < self.probability)

    def fresh(self, seed: int | None = None) -> "BernoulliDecision":
        """Clone with untouched RNG state (optionally re-seeded)."""
        return BernoulliDecision(self.probability, self.seed if seed is None else seed)


@dataclass(eq=False)
class ActivityHmm:
    """Hidden Markov decision model over binary activity-like observations.

    ``transition`` is row-stochastic, ``emission[s]`` is the probability that
    state ``s`` emits an activity-like (padding) period, ``initial`` is the
    start-state distribution. Each ``decide`` call advances the hidden state
    by one transition (the first call draws from ``initial``) and emits.
    """

    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray
    seed: int = 0
    _rng: np.random.Generator | None = field(default=None, repr=False)
    _state: int | None = field(default=None, repr=False)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.emission = np.asarray(self.emission, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        n = self.state_count
        if n < 2:
            raise ValueError("need at least 2 states")
        if self.transition.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}")
        if self.emission.shape != (n,):
            raise ValueError(f"emission must have length {n}")
        if np.any(np.abs(self.transition.sum(axis=1) - 1.0) > _STOCHASTIC_TOL):
            raise ValueError("transition rows must sum to 1")
        if np.abs(self.initial.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError("initial distribution must sum to 1")
        if np.any((self.emission < 0) | (self.emission > 1)):
            raise ValueError("emission probabilities must be in [0,1]")

    @property
    def state_count(self) -> int:
        return len(self.initial)

    def decide(self, period_index: int) -> bool:
        if self._rng is None:
            self._rng = np.random.default_rng(self.seed)
        if self._state is None:
            self._state = _draw(self._rng, self.initial)
        else:
            self._state = _draw(self._rng, self.transition[self._state])
        return bool(self._rng.random() < self.emission[self._state])

    def fresh(self, seed: int | None = None) -> "ActivityHmm":
        return ActivityHmm(
            self.transition.copy(),
            self.emission.copy(),
            self.initial.copy(),
            self.seed if seed is None else seed,
        )

    def to_json(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "initial": self.initial.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ActivityHmm":
        return cls(
            np.asarray(payload["transition"], dtype=float),
            np.asarray(payload["emission"], dtype=float),
            np.asarray(payload["initial"], dtype=float),
            int(payload.get("seed", 0)),
        )


DecisionFunction = BernoulliDecision | ActivityHmm


def decide(fn: DecisionFunction, period_index: int) -> bool:
    """Draw the padding decision for one period from an initialized function."""
    return fn.decide(period_index)


def save_hmm(model: ActivityHmm, path: Path | str) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=2, sort_keys=True) + "\n")


def load_hmm(path: Path | str) -> ActivityHmm:
    return ActivityHmm.from_json(json.loads(Path(path).read_text()))


def _draw(rng: np.random.Generator, dist: np.ndarray) -> int:
    return int(np.searchsorted(np.cumsum(dist), rng.random(), side="right").clip(0, len(dist) - 1))


def hmm_sample(model: ActivityHmm, periods: int) -> np.ndarray:
    """Sample a boolean activity-like sequence; deterministic under model.seed."""
    from bisect import bisect_right

    rng = np.random.default_rng(model.seed)
    u = rng.random(2 * periods)
    cum_initial = np.cumsum(model.initial).tolist()
    cum_rows = [np.cumsum(row).tolist() for row in model.transition]
    emission = model.emission.tolist()
    n_states = model.state_count
    out = np.zeros(periods, dtype=bool)
    state = -1
    for i in range(periods):
        row = cum_initial if state < 0 else cum_rows[state]
        state = min(bisect_right(row, u[2 * i]), n_states - 1)
        out[i] = u[2 * i + 1] < emission[state]
    return out


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1, normalized."""
    values, vectors = np.linalg.eig(transition.T)
    idx = int(np.argmin(np.abs(values - 1.0)))
    pi = np.real(vectors[:, idx])
    pi = np.abs(pi)
    return pi / pi.sum()


def stationary_activity_rate(model: ActivityHmm) -> float:
    """Long-run fraction of activity-like periods the model emits."""
    pi = stationary_distribution(model.transition)
    return float(pi @ model.emission)


def _forward_backward(
    obs: np.ndarray, transition: np.ndarray, emission: np.ndarray, initial: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Scaled forward/backward passes; returns (alpha, beta, scales, loglik)."""
    T = len(obs)
    n = len(initial)
    b = np.where(obs[:, None], emission[None, :], 1.0 - emission[None, :])  # (T, n)
    alpha = np.zeros((T, n))
    beta = np.zeros((T, n))
    scales = np.zeros(T)

    alpha[0] = initial * b[0]
    scales[0] = alpha[0].sum() or np.finfo(float).tiny
    alpha[0] /= scales[0]
    for t in range(1, T):
        alpha[t] = (alpha[t - 1] @ transition) * b[t]
        scales[t] = alpha[t].sum() or np.finfo(float).tiny
        alpha[t] /= scales[t]

    beta[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (transition @ (b[t + 1] * beta[t + 1])) / scales[t + 1]

    return alpha, beta, scales, float(np.log(scales).sum())


def hmm_log_likelihood(model: ActivityHmm, flags: np.ndarray) -> float:
    """Log-probability of a binary flag sequence under the model."""
    obs = np.asarray(flags, dtype=bool)
    _, _, _, ll = _forward_backward(obs, model.transition, model.emission, model.initial)
    return ll


def baum_welch(
    flags: np.ndarray,
    state_count: int = 2,
    iterations: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
) -> tuple[ActivityHmm, list[float]]:
    """Single EM run from one seeded random initialization.

    Returns the fitted model and the per-iteration log-likelihood history
    (non-decreasing up to numerical tolerance). Rows are renormalized after
    every update.
    """
    obs = np.asarray(flags, dtype=bool)
    rng = np.random.default_rng(seed)
    n = state_count

    transition = rng.uniform(0.5, 1.5, size=(n, n))
    transition /= transition.sum(axis=1, keepdims=True)
    emission = rng.uniform(0.25, 0.75, size=n)
    initial = np.full(n, 1.0 / n)

    history: list[float] = []
    for _ in range(iterations):
        alpha, beta, scales, ll = _forward_backward(obs, transition, emission, initial)
        history.append(ll)

        gamma = alpha * beta
        gamma /= np.maximum(gamma.sum(axis=1, keepdims=True), np.finfo(float).tiny)

        b = np.where(obs[:, None], emission[None, :], 1.0 - emission[None, :])
        # expected transition counts: xi_sum[i, j] = sum_t alpha[t, i] A[i, j]
        # b[t+1, j] beta[t+1, j] / scales[t+1], folded into one matmul
        weighted = b[1:] * beta[1:] / scales[1:, None]
        xi_sum = transition * (alpha[:-1].T @ weighted)

        denom = np.maximum(gamma[:-1].sum(axis=0)[:, None], np.finfo(float).tiny)
        transition = xi_sum / denom
        transition = np.clip(transition, np.finfo(float).tiny, None)
        transition /= transition.sum(axis=1, keepdims=True)

        weight = np.maximum(gamma.sum(axis=0), np.finfo(float).tiny)
        emission = np.clip((gamma * obs[:, None]).sum(axis=0) / weight, 0.0, 1.0)
        initial = np.clip(gamma[0], np.finfo(float).tiny, None)
        initial /= initial.sum()

        if len(history) >= 2 and abs(history[-1] - history[-2]) < tol:
            break

    model = ActivityHmm(transition, emission, initial, seed)
    return model, history


def hmm_fit(
    flags: np.ndarray,
    state_count: int = 2,
    iterations: int = 100,
    seed: int = 0,
    restarts: int = 4,
    tol: float = 1e-6,
) -> ActivityHmm:
    """Fit an ActivityHmm to a binary flag sequence by EM (best of ``restarts``).

    An all-true or all-false sequence yields a degenerate single-regime model
    (pinned emissions, near-identity transitions) with a warning instead of a
    meaningless EM run.
    """
    obs = np.asarray(flags, dtype=bool)
    if state_count < 2:
        raise ValueError("state_count must be >= 2")
    if len(obs) < 10 * state_count:
        raise ValueError(f"need at least {10 * state_count} observations, got {len(obs)}")

    if obs.all() or not obs.any():
        warnings.warn(
            "activity flags carry a single regime; returning a degenerate model",
            stacklevel=2,
        )
        n = state_count
        transition = np.full((n, n), 0.01 / (n - 1))
        np.fill_diagonal(transition, 0.99)
        emission = np.full(n, 1.0 if obs.all() else 0.0)
        return ActivityHmm(transition, emission, np.full(n, 1.0 / n), seed)

    best: tuple[float, ActivityHmm] | None = None
    for r in range(restarts):
        model, history = baum_welch(obs, state_count, iterations, seed=seed + r, tol=tol)
        score = history[-1]
        if best is None or score > best[0]:
            best = (score, model)
    assert best is not None
    return best[1]


__all__ = [
    "BernoulliDecision",
    "ActivityHmm",
    "DecisionFunction",
    "decide",
    "hmm_fit",
    "baum_welch",
    "hmm_sample",
    "hmm_log_likelihood",
    "stationary_distribution",
    "stationary_activity_rate",
    "save_hmm",
    "load_hmm",
]
