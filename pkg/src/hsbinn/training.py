"""Dataset generation, Adamax optimization and the training loop.

Two training modes share the loop: "hyper" optimizes the hypernetwork
over a set of drug configurations (the normal path), "sbinn" fits the
main network directly to a single configuration (useful as a baseline
and for cheap single-compound studies).

Checkpoints are a small binary container: magic "HSBN1", a version
byte, a length-prefixed UTF-8 JSON metadata block (architectures,
iteration, RNG state, scaler bounds, loss weights, configs), then the
parameter and optimizer-moment vectors as length-prefixed little-endian
float64 arrays. Deterministic mode makes save/resume bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .capmodel import (
    DEFAULT_CONSTANTS,
    DrugConfig,
    ModelConstants,
    N_STATES,
    StimulusSpec,
)
from . import nets
from .hyper import MAIN_HIDDEN, HYPER_HIDDEN, DrugScaler, HyperSbinn, hyperpinn_loss, main_arch
from .losses import (
    LossWeights,
    ObservationSet,
    PinnProblem,
    pinn_loss_grad,
    sample_collocation,
    ode_loss,
    weights_from_raw,
)
from .solver import DEFAULT_STIMULUS, SolveConfig, Trajectory, solve_batch


class NumericsError(RuntimeError):
    """Training hit a non-finite loss or gradient."""


CHECKPOINT_MAGIC = b"HSBN1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    """Sampling box for compound descriptors."""

    q: int = 500
    ic50_range: tuple[float, float] = (0.1, 100.0)
    c_range: tuple[float, float] = (0.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if not (0 < self.ic50_range[0] < self.ic50_range[1]):
            raise ValueError("ic50_range must be positive and increasing")
        if not (0 <= self.c_range[0] < self.c_range[1]):
            raise ValueError("c_range must be non-negative and increasing")

    def to_dict(self) -> dict:
        return {"q": self.q, "ic50_range": list(self.ic50_range),
                "c_range": list(self.c_range), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(q=int(d["q"]), ic50_range=tuple(d["ic50_range"]),
                   c_range=tuple(d["c_range"]), seed=int(d["seed"]))


def generate_dataset(spec: DatasetSpec) -> list[DrugConfig]:
    """q i.i.d. uniform drug configurations, reproducible from the seed."""
    rng = np.random.default_rng(spec.seed)
    c = rng.uniform(*spec.c_range, size=spec.q)
    ic = rng.uniform(*spec.ic50_range, size=(spec.q, 4))
    return [DrugConfig(c=c[i], ic50_naf=ic[i, 0], ic50_cal=ic[i, 1],
                       ic50_tof=ic[i, 2], ic50_kr=ic[i, 3]) for i in range(spec.q)]


def build_observations(configs, fraction: float, rng: np.random.Generator,
                       stim: StimulusSpec = DEFAULT_STIMULUS,
                       solve_cfg: SolveConfig = SolveConfig(),
                       u0: np.ndarray | None = None,
                       constants: ModelConstants = DEFAULT_CONSTANTS,
                       ) -> tuple[ObservationSet, list[Trajectory | None]]:
    """Solve every configuration and keep a Bernoulli(fraction) subset
    of the grid points as observations (all 14 states per kept point).

    Configs whose solve fails are skipped with a warning; the returned
    trajectories list keeps their slot as None.
    """
    if not (0 < fraction <= 1):
        raise ValueError("fraction must lie in (0, 1]")
    trajs = solve_batch(configs, stim=stim, cfg=solve_cfg, u0=u0, constants=constants)
    times, idx, states = [], [], []
    for i, traj in enumerate(trajs):
        if traj is None:
            continue
        mask = rng.random(traj.t.size) < fraction
        times.append(traj.t[mask])
        idx.append(np.full(int(mask.sum()), i, dtype=np.int64))
        states.append(traj.states[mask])
    if times:
        obs = ObservationSet(np.concatenate(times), np.concatenate(idx),
                             np.concatenate(states))
    else:
        obs = ObservationSet.empty()
    return obs, trajs


def dataset_and_observations(dspec: DatasetSpec, fraction: float,
                             stim: StimulusSpec = DEFAULT_STIMULUS,
                             solve_cfg: SolveConfig = SolveConfig(),
                             u0: np.ndarray | None = None,
                             constants: ModelConstants = DEFAULT_CONSTANTS):
    """Deterministic dataset + observation pipeline shared by the CLI
    and tests: configs from the dataset seed, observation selection from
    a child stream of the same seed."""
    configs = generate_dataset(dspec)
    rng = np.random.default_rng([dspec.seed, 1])
    obs, trajs = build_observations(configs, fraction, rng, stim=stim,
                                    solve_cfg=solve_cfg, u0=u0, constants=constants)
    return configs, obs, trajs


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 80_000
    lr_plateau: float = 1e-4
    plateau_end: int = 10_000
    decay_end: int = 50_000
    lr_final: float = 1e-6
    colloc_size: int = 500
    obs_fraction: float = 0.006
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 2000
    deterministic: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.plateau_end < self.decay_end):
            raise ValueError("need 0 <= plateau_end < decay_end")
        if not (0 <= self.obs_fraction <= 1):
            raise ValueError("obs_fraction must lie in [0, 1]")
        if self.iters < 1 or self.colloc_size < 1:
            raise ValueError("iters and colloc_size must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Plateau, then linear decay, then constant floor. Continuous at
    both breakpoints."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if iteration <= cfg.plateau_end:
        return cfg.lr_plateau
    if iteration >= cfg.decay_end:
        return cfg.lr_final
    frac = (iteration - cfg.plateau_end) / (cfg.decay_end - cfg.plateau_end)
    return cfg.lr_plateau + frac * (cfg.lr_final - cfg.lr_plateau)


@dataclass
class AdamaxMoments:
    m: np.ndarray
    u: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamaxMoments":
        return cls(m=np.zeros(n), u=np.zeros(n), t=0)


def adamax_step(params: np.ndarray, grads: np.ndarray, moments: AdamaxMoments,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> tuple[np.ndarray, AdamaxMoments]:
    """One Adamax update (infinity-norm second moment, bias-corrected
    first moment). Pure: returns fresh arrays."""
    if params.shape != grads.shape:
        raise ValueError("params and grads must have identical shapes")
    t = moments.t + 1
    m = beta1 * moments.m + (1.0 - beta1) * grads
    u = np.maximum(beta2 * moments.u, np.abs(grads))
    step = lr / (1.0 - beta1 ** t)
    return params - step * m / (u + eps), AdamaxMoments(m=m, u=u, t=t)


def _adamax_inplace(params, grads, moments: AdamaxMoments, lr, beta1, beta2, eps):
    moments.t += 1
    moments.m *= beta1
    moments.m += (1.0 - beta1) * grads
    np.maximum(beta2 * moments.u, np.abs(grads), out=moments.u)
    step = lr / (1.0 - beta1 ** moments.t)
    params -= step * moments.m / (moments.u + eps)


@dataclass
class Checkpoint:
    """Full training state: enough to evaluate the surrogate and to
    resume training bit-exactly in deterministic mode."""

    mode: str
    iteration: int
    params: np.ndarray
    moments: AdamaxMoments
    weights: LossWeights | None
    rng_state: dict
    main_hidden: tuple[int, ...]
    trunk_hidden: tuple[int, ...] | None
    scaler: DrugScaler
    t_max: float
    stim: StimulusSpec
    constants: ModelConstants
    train_cfg: TrainConfig
    dataset: DatasetSpec | None = None
    v0: float = -85.0

    def model(self) -> HyperSbinn:
        if self.mode != "hyper":
            raise ValueError("only hyper checkpoints carry a hypernetwork")
        cached = getattr(self, "_model", None)
        if cached is None:
            cached = HyperSbinn(main=main_arch(self.main_hidden), scaler=self.scaler,
                                t_max=self.t_max, trunk_hidden=self.trunk_hidden)
            object.__setattr__(self, "_model", cached)
        return cached

    def predict(self, drug: DrugConfig, times) -> np.ndarray:
        """Surrogate states at raw ms times for one drug configuration."""
        if self.mode == "hyper":
            return self.model().predict(self.params, drug, times)
        arch = getattr(self, "_arch", None)
        if arch is None:
            arch = main_arch(self.main_hidden)
            object.__setattr__(self, "_arch", arch)
        tau = np.asarray(times, dtype=np.float64) / self.t_max
        return nets.forward(arch, self.params, tau[:, None])

    def generate_main_params(self, drug: DrugConfig) -> nets.NetParams:
        if self.mode == "hyper":
            return self.model().generate(self.params, drug)
        return nets.NetParams(main_arch(self.main_hidden), self.params)


def _write_array(fh, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<Q", data.size))
    fh.write(data.tobytes())


def _read_array(fh) -> np.ndarray:
    (n,) = struct.unpack("<Q", fh.read(8))
    buf = fh.read(8 * n)
    if len(buf) != 8 * n:
        raise ValueError("checkpoint truncated")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "mode": ckpt.mode,
        "iteration": ckpt.iteration,
        "moment_t": ckpt.moments.t,
        "rng_state": ckpt.rng_state,
        "main_hidden": list(ckpt.main_hidden),
        "trunk_hidden": list(ckpt.trunk_hidden) if ckpt.trunk_hidden else None,
        "scaler": ckpt.scaler.to_dict(),
        "t_max": ckpt.t_max,
        "stim": {"onset": ckpt.stim.onset, "duration": ckpt.stim.duration,
                 "amplitude": ckpt.stim.amplitude},
        "constants": {k: getattr(ckpt.constants, k)
                      for k in ckpt.constants.__dataclass_fields__},
        "train_cfg": ckpt.train_cfg.to_dict(),
        "dataset": ckpt.dataset.to_dict() if ckpt.dataset else None,
        "v0": ckpt.v0,
        "weights": None if ckpt.weights is None else {
            "data": ckpt.weights.data, "ic": ckpt.weights.ic,
            "ode": [float(x) for x in ckpt.weights.ode]},
    }
    blob = json.dumps(meta).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        _write_array(fh, ckpt.params)
        _write_array(fh, ckpt.moments.m)
        _write_array(fh, ckpt.moments.u)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version = fh.read(1)[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        params = _read_array(fh)
        m = _read_array(fh)
        u = _read_array(fh)
    weights = None
    if meta["weights"] is not None:
        weights = LossWeights(data=meta["weights"]["data"], ic=meta["weights"]["ic"],
                              ode=np.array(meta["weights"]["ode"]))
    return Checkpoint(
        mode=meta["mode"],
        iteration=meta["iteration"],
        params=params,
        moments=AdamaxMoments(m=m, u=u, t=meta["moment_t"]),
        weights=weights,
        rng_state=meta["rng_state"],
        main_hidden=tuple(meta["main_hidden"]),
        trunk_hidden=tuple(meta["trunk_hidden"]) if meta["trunk_hidden"] else None,
        scaler=DrugScaler.from_dict(meta["scaler"]),
        t_max=meta["t_max"],
        stim=StimulusSpec(**meta["stim"]),
        constants=ModelConstants(**meta["constants"]),
        train_cfg=TrainConfig.from_dict(meta["train_cfg"]),
        dataset=DatasetSpec.from_dict(meta["dataset"]) if meta["dataset"] else None,
        v0=meta.get("v0", -85.0),
    )


def _aggregate_reports(reports) -> dict:
    data = sum(r.data for r in reports)
    ic = sum(r.ic for r in reports)
    ode_raw = np.sum([r.ode_raw for r in reports], axis=0)
    ode_weighted = np.sum([r.ode_weighted for r in reports], axis=0)
    total = sum(r.total for r in reports)
    return {"loss_total": float(total), "loss_data": float(data), "loss_ic": float(ic),
            "loss_ode_raw": [float(x) for x in ode_raw],
            "loss_ode_weighted": [float(x) for x in ode_weighted]}


def _rng_state_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {"bit_generator": state["bit_generator"],
            "state": {"state": str(state["state"]["state"]),
                      "inc": str(state["state"]["inc"])},
            "has_uint32": state["has_uint32"], "uinteger": state["uinteger"]}


def _rng_from_json(d: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"]["state"]), "inc": int(d["state"]["inc"])},
        "has_uint32": d["has_uint32"], "uinteger": d["uinteger"]}
    return rng


def train(configs: list[DrugConfig],
          observations: ObservationSet,
          u0: np.ndarray,
          cfg: TrainConfig,
          *,
          mode: str = "hyper",
          stim: StimulusSpec = DEFAULT_STIMULUS,
          constants: ModelConstants = DEFAULT_CONSTANTS,
          t_max: float = 500.0,
          main_hidden: tuple[int, ...] = MAIN_HIDDEN,
          trunk_hidden: tuple[int, ...] = HYPER_HIDDEN,
          scaler: DrugScaler | None = None,
          dataset: DatasetSpec | None = None,
          log_file=None,
          checkpoint_path=None,
          resume: Checkpoint | None = None,
          ) -> tuple[Checkpoint, list[dict]]:
    """Run the optimization loop and return the final checkpoint plus
    one log record per iteration.

    Per-ODE loss weights are balanced once, at iteration 0, from the
    raw residual scales at the fresh initialization. A non-finite loss
    or gradient aborts with a diagnostic checkpoint (when a checkpoint
    path is given) and raises NumericsError.
    """
    if mode not in ("hyper", "sbinn"):
        raise ValueError(f"unknown training mode {mode!r}")
    if mode == "sbinn" and len(configs) != 1:
        raise ValueError("sbinn mode fits exactly one drug configuration")
    q = len(configs)
    if q < 1:
        raise ValueError("need at least one drug configuration")

    arch = main_arch(main_hidden)
    problem = PinnProblem(arch=arch, t_max=t_max, u0=u0, stim=stim, constants=constants)
    if observations.times.size and observations.times.max() > t_max:
        raise ValueError("observations extend beyond t_max")
    obs_split = [observations.for_config(i) for i in range(q)]

    model = None
    if mode == "hyper":
        model = HyperSbinn(main=arch, scaler=scaler or DrugScaler(),
                           t_max=t_max, trunk_hidden=trunk_hidden)

    if resume is not None:
        if resume.mode != mode:
            raise ValueError(f"checkpoint mode {resume.mode!r} != requested {mode!r}")
        params = resume.params.copy()
        moments = AdamaxMoments(m=resume.moments.m.copy(),
                                u=resume.moments.u.copy(), t=resume.moments.t)
        weights = resume.weights
        rng = _rng_from_json(resume.rng_state)
        start = resume.iteration
    else:
        rng = np.random.default_rng(cfg.seed)
        if mode == "hyper":
            params = model.init_omega(rng)
        else:
            params = nets.init_params(arch, rng)
        moments = AdamaxMoments.zeros(params.size)
        weights = None
        start = 0

    history: list[dict] = []

    def checkpoint_now(iteration) -> Checkpoint:
        return Checkpoint(
            mode=mode, iteration=iteration, params=params.copy(),
            moments=AdamaxMoments(m=moments.m.copy(), u=moments.u.copy(), t=moments.t),
            weights=weights, rng_state=_rng_state_json(rng),
            main_hidden=tuple(main_hidden),
            trunk_hidden=tuple(trunk_hidden) if mode == "hyper" else None,
            scaler=(model.scaler if model else scaler or DrugScaler()),
            t_max=t_max, stim=stim, constants=constants, train_cfg=cfg,
            dataset=dataset, v0=float(u0[0]))

    for it in range(start, cfg.iters):
        batches = [sample_collocation(cfg.colloc_size, rng) for _ in range(q)]

        if weights is None:
            # iteration-0 balancing: raw residual scale per ODE with unit
            # weights, each config evaluated at its own generated params
            unit = LossWeights()
            raw = np.zeros(N_STATES)
            for drug, batch in zip(configs, batches):
                theta = (model.generate(params, drug).values
                         if mode == "hyper" else params)
                raw += ode_loss(problem, theta, batch, drug, unit)[1]
            raw /= q
            weights = weights_from_raw(raw)

        lr = lr_at(it, cfg)
        if mode == "hyper":
            total, reports, grad = hyperpinn_loss(
                model, params, problem, configs, obs_split, batches,
                weights, with_grad=True)
            record = _aggregate_reports(reports)
        else:
            obs_t, obs_y = obs_split[0]
            total, report, grad = pinn_loss_grad(
                problem, params, obs_t, obs_y, batches[0], configs[0], weights)
            record = report.as_record()

        if not np.isfinite(total) or not np.all(np.isfinite(grad)):
            if checkpoint_path is not None:
                diag = Path(checkpoint_path).with_suffix(".diag.ckpt")
                save_checkpoint(checkpoint_now(it), diag)
            raise NumericsError(f"non-finite loss/gradient at iteration {it}")

        _adamax_inplace(params, grad, moments, lr, cfg.beta1, cfg.beta2, cfg.eps)

        record = {"iter": it, "lr": lr, **record}
        history.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")

        done = it + 1
        if checkpoint_path is not None and (
                done % cfg.checkpoint_every == 0 or done == cfg.iters):
            save_checkpoint(checkpoint_now(done), checkpoint_path)

    final = checkpoint_now(cfg.iters)
    return final, history
