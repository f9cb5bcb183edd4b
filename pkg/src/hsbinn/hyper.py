"""Hypernetwork conditioning: a compound descriptor goes in, the full
flat parameter vector of the main surrogate network comes out.

The hypernetwork is a tanh MLP (5 -> 46 x 5 -> main parameter count)
whose linear output is multiplied by a learnable per-output gain,
initialized at 0.1 so the generated main networks start in a
well-conditioned weight range. Drug inputs are normalized to [-1, 1],
with IC50 values mapped through log10 first since they span three
decades.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .capmodel import DrugConfig, N_STATES
from . import nets
from .nets import MlpArch, NetParams
from .losses import (
    CollocationBatch,
    LossReport,
    LossWeights,
    PinnProblem,
    _pinn_terms,
)

MAIN_HIDDEN = (50,) * 5
HYPER_HIDDEN = (46,) * 5


def main_arch(hidden: tuple[int, ...] = MAIN_HIDDEN) -> MlpArch:
    """Surrogate network: scaled time in, the 14 states out (voltage
    unbounded, gates squashed into (0, 1))."""
    return MlpArch(
        in_width=1,
        hidden=hidden,
        out_width=N_STATES,
        out_activation=("linear",) + ("sigmoid",) * (N_STATES - 1),
    )


def hyper_mlp_arch(target_count: int, hidden: tuple[int, ...] = HYPER_HIDDEN) -> MlpArch:
    """Hypernetwork trunk: drug descriptor in, one linear output per
    main-network parameter."""
    return MlpArch(
        in_width=5,
        hidden=hidden,
        out_width=target_count,
        out_activation=("linear",) * target_count,
    )


@dataclass(frozen=True)
class DrugScaler:
    """Affine map from raw drug ranges onto [-1, 1] network inputs;
    IC50 fields go through log10 before the affine map."""

    c_lo: float = 0.0
    c_hi: float = 4.0
    ic50_lo: float = 0.1
    ic50_hi: float = 100.0

    def scale(self, drug: DrugConfig, warn_outside: bool = True) -> np.ndarray:
        x = drug.as_array()
        z = np.empty(5)
        z[0] = 2.0 * (x[0] - self.c_lo) / (self.c_hi - self.c_lo) - 1.0
        la, lb = math.log10(self.ic50_lo), math.log10(self.ic50_hi)
        z[1:] = 2.0 * (np.log10(x[1:]) - la) / (lb - la) - 1.0
        if warn_outside and (np.abs(z) > 1.0 + 1e-9).any():
            warnings.warn(f"drug {drug} lies outside the scaler's fitted range")
        return z

    def unscale(self, z: np.ndarray) -> DrugConfig:
        c = (z[0] + 1.0) / 2.0 * (self.c_hi - self.c_lo) + self.c_lo
        la, lb = math.log10(self.ic50_lo), math.log10(self.ic50_hi)
        ic = 10.0 ** ((z[1:] + 1.0) / 2.0 * (lb - la) + la)
        return DrugConfig(c=float(c), ic50_naf=float(ic[0]), ic50_cal=float(ic[1]),
                          ic50_tof=float(ic[2]), ic50_kr=float(ic[3]))

    def to_dict(self) -> dict:
        return {"c_lo": self.c_lo, "c_hi": self.c_hi,
                "ic50_lo": self.ic50_lo, "ic50_hi": self.ic50_hi}

    @classmethod
    def from_dict(cls, d: dict) -> "DrugScaler":
        return cls(**{k: float(v) for k, v in d.items()})


GAIN_INIT = 0.1


@dataclass(frozen=True)
class HyperSbinn:
    """The two-stage surrogate: hypernetwork trunk + gain head feeding
    the main network. Owns the shapes and the drug input scaling."""

    main: MlpArch = field(default_factory=main_arch)
    scaler: DrugScaler = field(default_factory=DrugScaler)
    t_max: float = 500.0
    trunk_hidden: tuple[int, ...] = HYPER_HIDDEN

    def __post_init__(self):
        # the trunk arch carries one activation tag per generated
        # parameter, so build it once rather than per access
        main_count = nets.param_count(self.main)
        trunk = hyper_mlp_arch(main_count, self.trunk_hidden)
        object.__setattr__(self, "_main_count", main_count)
        object.__setattr__(self, "_trunk", trunk)
        object.__setattr__(self, "_trunk_count", nets.param_count(trunk))

    @property
    def main_count(self) -> int:
        return self._main_count

    @property
    def trunk(self) -> MlpArch:
        return self._trunk

    def param_count(self) -> int:
        # trunk weights plus one gain per generated parameter
        return self._trunk_count + self._main_count

    def init_omega(self, rng: np.random.Generator) -> np.ndarray:
        trunk = nets.init_params(self.trunk, rng)
        gain = np.full(self.main_count, GAIN_INIT)
        return np.concatenate((trunk, gain))

    def split_omega(self, omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (self.param_count(),):
            raise ValueError(
                f"hyper parameter vector has length {omega.size}, need {self.param_count()}")
        return omega[:self._trunk_count], omega[self._trunk_count:]

    def generate(self, omega: np.ndarray, drug: DrugConfig) -> NetParams:
        """Main-network parameters for one drug configuration."""
        theta, _, _ = self._generate_cached(omega, drug)
        return NetParams(self.main, theta)

    def _generate_cached(self, omega, drug):
        trunk_w, gain = self.split_omega(omega)
        z = self.scaler.scale(drug)
        raw, cache = nets.forward_cached(self.trunk, trunk_w, z[None, :])
        theta = gain * raw[0]
        return theta, cache, raw[0]

    def _accumulate_backward_omega(self, cache, raw_out, gain, g_theta,
                                   grad: np.ndarray, scratch: np.ndarray) -> None:
        """Add d(loss)/d(omega) into grad, given d(loss)/d(theta);
        scratch must hold one trunk-sized work buffer."""
        nets.backward_params(self.trunk, cache, (g_theta * gain)[None, :], out=scratch)
        grad[:self._trunk_count] += scratch
        grad[self._trunk_count:] += g_theta * raw_out

    def predict(self, omega: np.ndarray, drug: DrugConfig, times) -> np.ndarray:
        """Surrogate states at raw ms times for one drug (one generate,
        then a batched main-network evaluation)."""
        theta = self.generate(omega, drug)
        return self.predict_from_params(theta, times)

    def predict_from_params(self, theta: NetParams, times) -> np.ndarray:
        tau = np.asarray(times, dtype=np.float64) / self.t_max
        return nets.forward(self.main, theta.values, tau[:, None])


def hyperpinn_loss(model: HyperSbinn, omega: np.ndarray, problem: PinnProblem,
                   configs, obs_per_config, batches, weights: LossWeights,
                   with_grad: bool = False):
    """Sum of the per-configuration PINN losses at the generated
    parameters; optionally with the gradient with respect to omega.

    obs_per_config holds (times, states) pairs aligned with configs;
    batches holds one CollocationBatch per config.
    """
    if len(configs) == 0:
        raise ValueError("need at least one drug configuration")
    total = 0.0
    reports: list[LossReport] = []
    grad = np.zeros(model.param_count()) if with_grad else None
    scratch = np.empty(nets.param_count(model.trunk)) if with_grad else None
    _, gain = model.split_omega(omega)
    for drug, (obs_t, obs_y), batch in zip(configs, obs_per_config, batches):
        theta, cache, raw_out = model._generate_cached(omega, drug)
        val, report, g_theta = _pinn_terms(
            problem, theta, obs_t, obs_y, batch, drug, weights, with_grad=with_grad)
        total += val
        reports.append(report)
        if with_grad:
            model._accumulate_backward_omega(cache, raw_out, gain, g_theta, grad, scratch)
    if with_grad:
        return total, reports, grad
    return total, reports
