"""Adam descent with a three-plateau learning-rate schedule.

The schedule keeps the initial rate for the first half of the run,
divides it by 10 at the halfway point and by 100 at three quarters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, OptimizerError


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(self.params)
        if self.v is None:
            self.v = np.zeros_like(self.params)


def adam_step(state: AdamState, grad, rate: float) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.params.shape:
        raise ContractError(
            f"gradient shape {grad.shape} != params {state.params.shape}")
    if not np.all(np.isfinite(grad)):
        raise OptimizerError("non-finite gradient component",
                             iteration=state.t)
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params = state.params - rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, params=params, m=m, v=v, t=t)


@dataclass(frozen=True)
class LrSchedule:
    lr0: float
    total: int

    def rate(self, t: int) -> float:
        return schedule_rate(self, t)


def schedule_rate(sched: LrSchedule, t: int) -> float:
    """Piecewise-constant rate; plateaus split at total/2 and 3*total/4."""
    if not 0 <= t < sched.total:
        raise ContractError(f"step {t} outside [0, {sched.total})")
    if t < sched.total // 2:
        return sched.lr0
    if t < (3 * sched.total) // 4:
        return sched.lr0 / 10.0
    return sched.lr0 / 100.0


@dataclass
class History:
    """Per-iteration record of one descent run."""

    costs: list[float] = field(default_factory=list)
    rates: list[float] = field(default_factory=list)
    final_params: np.ndarray = None
    error: str | None = None

    @property
    def final_cost(self) -> float:
        return self.costs[-1] if self.costs else float("nan")

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,rate,cost\n")
            for i, c in enumerate(self.costs):
                r = self.rates[i] if i < len(self.rates) else ""
                fh.write(f"{i},{r!r},{c!r}\n")


def descent_loop(grad_fn, c0, sched: LrSchedule, iters: int,
                 callback=None) -> History:
    """Run Adam against grad_fn: control -> (cost, gradient).

    Records iters + 1 costs (the initial cost plus one final
    re-evaluation after the last step). On a grad_fn failure the loop
    stops and returns the partial history with `error` set.
    """
    if iters < 1:
        raise ContractError("iters must be >= 1")
    state = AdamState(np.asarray(c0, dtype=float).copy())
    hist = History()
    try:
        for t in range(iters):
            cost, grad = grad_fn(state.params)
            rate = schedule_rate(sched, t)
            hist.costs.append(float(cost))
            hist.rates.append(rate)
            state = adam_step(state, grad, rate)
            if callback is not None:
                callback(t, float(cost), state.params)
        final_cost, _ = grad_fn(state.params)
        hist.costs.append(float(final_cost))
    except Exception as exc:  # noqa: BLE001 - partial history contract
        hist.error = f"{type(exc).__name__}: {exc}"
    hist.final_params = state.params
    return hist
