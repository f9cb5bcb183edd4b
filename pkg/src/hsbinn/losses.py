"""Physics-informed loss for the action potential surrogate.

Three weighted terms: mean squared data misfit at observed points,
squared initial-condition misfit at t = 0, and the per-ODE mean squared
residual at collocation times. The network sees scaled time tau =
t / t_max, so the residual applies the chain-rule factor 1/t_max to the
network's input derivative before comparing against the model rhs (the
same compiled rhs the reference solver integrates; the model is never
transcribed twice).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .capmodel import (
    DEFAULT_CONSTANTS,
    DrugConfig,
    ModelConstants,
    N_STATES,
    StimulusSpec,
    rhs_batch,
    rhs_jacobian_batch,
)
from . import nets
from .nets import MlpArch

WEIGHT_CLAMP = (0.01, 10_000.0)


def scale_time(t, t_max: float):
    """Map raw ms times onto the network's [0, 1] input scale."""
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    return np.asarray(t, dtype=np.float64) / t_max


def unscale_time(tau, t_max: float):
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    return np.asarray(tau, dtype=np.float64) * t_max


@dataclass
class LossWeights:
    """Eq-style weights: one scalar each for data and initial condition,
    one weight per ODE for the residual term."""

    data: float = 1.0
    ic: float = 1.0
    ode: np.ndarray = field(default_factory=lambda: np.ones(N_STATES))

    def __post_init__(self):
        self.ode = np.asarray(self.ode, dtype=np.float64)
        if self.ode.shape != (N_STATES,):
            raise ValueError(f"need {N_STATES} ODE weights")
        if self.data < 0 or self.ic < 0 or (self.ode < 0).any():
            raise ValueError("loss weights must be >= 0")

    def scaled(self, alpha: float) -> "LossWeights":
        return LossWeights(data=alpha * self.data, ic=alpha * self.ic, ode=alpha * self.ode)


@dataclass
class ObservationSet:
    """Sparse state measurements: (time, drug index, full state) triples
    stored column-wise."""

    times: np.ndarray
    config_index: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.config_index = np.asarray(self.config_index, dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.float64)
        n = self.times.size
        if self.config_index.shape != (n,) or self.states.shape != (n, N_STATES):
            raise ValueError("observation arrays disagree on length")
        if (self.times < 0).any():
            raise ValueError("observation times must be >= 0")

    def __len__(self) -> int:
        return self.times.size

    def for_config(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.config_index == idx
        return self.times[mask], self.states[mask]

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls(np.empty(0), np.empty(0, dtype=np.int64), np.empty((0, N_STATES)))


@dataclass
class CollocationBatch:
    """Scaled times in [0, 1] where the ODE residual is penalized."""

    tau: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if self.tau.size == 0:
            raise ValueError("collocation batch must be non-empty")
        if self.tau.min() < 0 or self.tau.max() > 1:
            raise ValueError("collocation times must lie in [0, 1]")

    def __len__(self) -> int:
        return self.tau.size


def sample_collocation(n: int, rng: np.random.Generator) -> CollocationBatch:
    """Fresh i.i.d. uniform draw of n scaled times."""
    if n <= 0:
        raise ValueError("batch size must be positive")
    return CollocationBatch(rng.random(n))


@dataclass(frozen=True)
class PinnProblem:
    """Everything the loss terms share across drug configurations."""

    arch: MlpArch
    t_max: float
    u0: np.ndarray
    stim: StimulusSpec
    constants: ModelConstants = DEFAULT_CONSTANTS

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        u0 = np.asarray(self.u0, dtype=np.float64)
        if u0.shape != (N_STATES,):
            raise ValueError(f"u0 must have shape ({N_STATES},)")
        object.__setattr__(self, "u0", u0)


@dataclass
class LossReport:
    """Raw (unweighted) per-term values plus the weights that combined
    them into the scalar the optimizer saw."""

    total: float
    data: float
    ic: float
    ode_raw: np.ndarray
    weights: LossWeights

    @property
    def ode_weighted(self) -> np.ndarray:
        return self.weights.ode * self.ode_raw

    @property
    def ode_total(self) -> float:
        return float(self.ode_weighted.sum())

    def as_record(self) -> dict:
        return {
            "loss_total": self.total,
            "loss_data": self.data,
            "loss_ic": self.ic,
            "loss_ode_raw": [float(x) for x in self.ode_raw],
            "loss_ode_weighted": [float(x) for x in self.ode_weighted],
        }


def data_loss(problem: PinnProblem, params: np.ndarray,
              times: np.ndarray, states: np.ndarray) -> float:
    """Mean over observations of the squared 14-state misfit. Empty
    observation sets contribute nothing."""
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        return 0.0
    tau = scale_time(times, problem.t_max)
    out = nets.forward(problem.arch, params, tau[:, None])
    r = out - states
    return float((r * r).sum() / times.size)


def ic_loss(problem: PinnProblem, params: np.ndarray) -> float:
    """Squared misfit of the prediction at t = 0 against u0."""
    out = nets.forward(problem.arch, params, np.zeros((1, 1)))
    r = out[0] - problem.u0
    return float((r * r).sum())


def ode_loss(problem: PinnProblem, params: np.ndarray, batch: CollocationBatch,
             drug: DrugConfig, weights: LossWeights) -> tuple[float, np.ndarray]:
    """Weighted residual loss and the raw per-ODE mean squares."""
    _, report, _ = _pinn_terms(problem, params, np.empty(0), np.empty((0, N_STATES)),
                               batch, drug, weights, with_grad=False)
    return report.ode_total, report.ode_raw


def pinn_loss(problem: PinnProblem, params: np.ndarray,
              obs_times: np.ndarray, obs_states: np.ndarray,
              batch: CollocationBatch, drug: DrugConfig,
              weights: LossWeights) -> tuple[float, LossReport]:
    total, report, _ = _pinn_terms(problem, params, obs_times, obs_states,
                                   batch, drug, weights, with_grad=False)
    return total, report


def pinn_loss_grad(problem: PinnProblem, params: np.ndarray,
                   obs_times: np.ndarray, obs_states: np.ndarray,
                   batch: CollocationBatch, drug: DrugConfig,
                   weights: LossWeights) -> tuple[float, LossReport, np.ndarray]:
    """Loss, per-term report and the exact gradient with respect to the
    main-network parameters."""
    return _pinn_terms(problem, params, obs_times, obs_states,
                       batch, drug, weights, with_grad=True)


def _pinn_terms(problem, params, obs_times, obs_states, batch, drug, weights, with_grad):
    arch = problem.arch
    t_max = problem.t_max
    grad = np.zeros(nets.param_count(arch)) if with_grad else None

    # data term
    obs_times = np.asarray(obs_times, dtype=np.float64)
    n = obs_times.size
    if n:
        tau_d = scale_time(obs_times, t_max)
        out_d, cache_d = nets.forward_cached(arch, params, tau_d[:, None])
        r_d = out_d - obs_states
        l_data = float((r_d * r_d).sum() / n)
        if with_grad and weights.data != 0.0:
            grad += nets.backward_params(arch, cache_d, (2.0 * weights.data / n) * r_d)
    else:
        l_data = 0.0

    # initial-condition term
    out_0, cache_0 = nets.forward_cached(arch, params, np.zeros((1, 1)))
    r_0 = out_0 - problem.u0[None, :]
    l_ic = float((r_0 * r_0).sum())
    if with_grad and weights.ic != 0.0:
        grad += nets.backward_params(arch, cache_0, (2.0 * weights.ic) * r_0)

    # ODE residual term
    m = len(batch)
    out, out_dot, cache = nets.forward_tangent(arch, params, batch.tau[:, None])
    t_raw = unscale_time(batch.tau, t_max)
    f = rhs_batch(t_raw, out, drug, problem.stim, problem.constants)
    resid = out_dot / t_max - f
    ode_raw = (resid * resid).mean(axis=0)
    if with_grad:
        lam_resid = resid * weights.ode[None, :]
        g_dot = (2.0 / (m * t_max)) * lam_resid
        jac = rhs_jacobian_batch(out, drug, problem.constants)
        g_out = -(2.0 / m) * np.einsum("mk,mki->mi", lam_resid, jac)
        grad += nets.backward_tangent_params(arch, cache, g_out, g_dot)

    total = float(weights.data * l_data + weights.ic * l_ic + weights.ode @ ode_raw)
    report = LossReport(total=total, data=l_data, ic=l_ic, ode_raw=ode_raw, weights=weights)
    return total, report, grad


def weights_from_raw(raw: np.ndarray,
                     clamp: tuple[float, float] = WEIGHT_CLAMP) -> LossWeights:
    """Balancing rule: aim every weighted ODE term at the median raw
    term, clamped to the allowed weight range. A raw term of exactly
    zero gets the clamp maximum (with a warning)."""
    target = float(np.median(raw))
    lo, hi = clamp
    ode_w = np.empty(N_STATES)
    for k in range(N_STATES):
        if raw[k] == 0.0:
            warnings.warn(
                f"ODE term {k} has zero residual at initialization; weight clamped to {hi}")
            ode_w[k] = hi
        else:
            ode_w[k] = min(hi, max(lo, target / raw[k]))
    return LossWeights(data=1.0, ic=1.0, ode=ode_w)


def balance_ode_weights(problem: PinnProblem, params: np.ndarray,
                        batch: CollocationBatch, drugs,
                        clamp: tuple[float, float] = WEIGHT_CLAMP) -> LossWeights:
    """One-shot residual-scale balancing run at a fresh initialization.

    Evaluates the raw per-ODE residual means with unit weights (averaged
    over the given drug configs), then applies weights_from_raw.
    """
    if isinstance(drugs, DrugConfig):
        drugs = [drugs]
    unit = LossWeights()
    raw = np.zeros(N_STATES)
    for drug in drugs:
        raw += ode_loss(problem, params, batch, drug, unit)[1]
    raw /= len(drugs)
    return weights_from_raw(raw, clamp)
