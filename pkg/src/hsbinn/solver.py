"""Reference integration of the action potential ODE system.

An embedded Dormand-Prince 4(5) pair with adaptive step control produces
ground-truth trajectories. The fastest gate relaxes with a 0.005 ms time
constant, so explicit stepping is stability-limited to ~0.015 ms; the
whole integrator loop is numba-compiled to keep a 500 ms solve cheap.
Output samples land exactly on the uniform grid because the step is
clamped to never overshoot the next grid point (the stimulus edges are
clamped to as well, so the discontinuity never sits inside a step).
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .capmodel import (
    DEFAULT_CONSTANTS,
    DrugConfig,
    ModelConstants,
    N_STATES,
    STATE_NAMES,
    StimulusSpec,
    gate_steady_states,
    _rhs_istim,
    _stimulus,
)


class IntegrationError(RuntimeError):
    """Raised when adaptive stepping cannot proceed; carries the last
    time the integrator reached."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(message)
        self.t_reached = t_reached


class CalibrationError(RuntimeError):
    pass


DEFAULT_STIMULUS = StimulusSpec()

TRAJECTORY_HEADER = "t," + ",".join(STATE_NAMES)


@dataclass(frozen=True)
class SolveConfig:
    t_end: float = 500.0
    rtol: float = 1e-7
    atol: float = 1e-9
    max_step: float = 1.0
    grid_dt: float = 0.5

    def __post_init__(self):
        if self.t_end <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ValueError("t_end and tolerances must be positive")
        if self.max_step <= 0 or self.grid_dt <= 0:
            raise ValueError("max_step and grid_dt must be positive")


@dataclass
class Trajectory:
    """Uniform-grid samples of the 14 states plus the inputs that
    produced them."""

    t: np.ndarray
    states: np.ndarray
    drug: DrugConfig | None = None
    stim: StimulusSpec | None = None

    @property
    def v(self) -> np.ndarray:
        return self.states[:, 0]

    def column(self, name: str) -> np.ndarray:
        return self.states[:, STATE_NAMES.index(name)]


# Dormand-Prince 5(4) tableau; the 5th-order solution is propagated and
# the b5-b4 difference supplies the local error estimate.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.zeros((7, 7))
_DP_A[1, 0] = 1 / 5
_DP_A[2, :2] = (3 / 40, 9 / 40)
_DP_A[3, :3] = (44 / 45, -56 / 15, 32 / 9)
_DP_A[4, :4] = (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729)
_DP_A[5, :5] = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656)
_DP_A[6, :6] = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                  -17253 / 339200, 22 / 525, -1 / 40])

_OK, _UNDERFLOW, _NONFINITE = 0, 1, 2


@njit(cache=True, nogil=True)
def _dopri_step(y, h, k, drug, consts, istim, a, e, y_new, err_vec):
    """One trial step; k[0] must hold the slope at the step start. The
    applied current istim is constant within the step (steps never
    straddle a pulse edge). Fills k[1:], y_new and err_vec; k[6] is the
    slope at (t+h, y_new) for FSAL reuse."""
    n = y.shape[0]
    ystage = np.empty(n)
    for s in range(1, 7):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += a[s, j] * k[j, i]
            ystage[i] = y[i] + h * acc
        _rhs_istim(ystage, drug, consts, istim, k[s])
    for i in range(n):
        y_new[i] = y[i] + h * (a[6, 0] * k[0, i] + a[6, 2] * k[2, i]
                               + a[6, 3] * k[3, i] + a[6, 4] * k[4, i]
                               + a[6, 5] * k[5, i])
        acc = 0.0
        for j in range(7):
            acc += e[j] * k[j, i]
        err_vec[i] = h * acc
    # note k[6] was written by the s == 6 stage above (c[6] = 1)


@njit(cache=True, nogil=True)
def _integrate(y0, stops, record, rtol, atol, max_step, drug, consts, stim, out):
    """Integrate from stops[0] through stops[-1], writing the state at
    each recorded stop into successive rows of out (row 0 = y0)."""
    a, e = _DP_A, _DP_E
    n = y0.shape[0]
    y = y0.copy()
    k = np.empty((7, n))
    y_new = np.empty(n)
    err_vec = np.empty(n)

    t = stops[0]
    row = 0
    if record[0]:
        out[0] = y
        row = 1
    istim_k0 = _stimulus(t, stim)
    _rhs_istim(y, drug, consts, istim_k0, k[0])

    h_prop = min(0.01, max_step)
    hmin = 1e-12
    n_steps = 0

    for i_stop in range(1, stops.shape[0]):
        t_target = stops[i_stop]
        while t < t_target:
            dt_left = t_target - t
            if dt_left <= hmin:
                t = t_target
                break
            h = min(h_prop, max_step)
            # stretch slightly rather than leave an unsteppable sliver
            landing = h >= 0.95 * dt_left
            if landing:
                h = dt_left
            accepted = False
            while not accepted:
                if h < hmin:
                    return _UNDERFLOW, t, n_steps
                # the pulse is constant inside a step (edges are stops);
                # refresh the FSAL slope when a pulse edge was crossed
                istim = _stimulus(t + 0.5 * h, stim)
                if istim != istim_k0:
                    _rhs_istim(y, drug, consts, istim, k[0])
                    istim_k0 = istim
                _dopri_step(y, h, k, drug, consts, istim, a, e, y_new, err_vec)
                n_steps += 1
                finite = True
                for i in range(n):
                    if not np.isfinite(y_new[i]):
                        finite = False
                        break
                if not finite:
                    h *= 0.5
                    landing = False
                    continue
                err = 0.0
                for i in range(n):
                    sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
                    q = err_vec[i] / sc
                    err += q * q
                err = np.sqrt(err / n)
                if err <= 1.0:
                    accepted = True
                    if err == 0.0:
                        fac = 10.0
                    else:
                        fac = min(10.0, max(0.2, 0.9 * err ** -0.2))
                    if not landing:
                        h_prop = h * fac
                else:
                    fac = min(1.0, max(0.2, 0.9 * err ** -0.2))
                    h = h * fac
                    landing = False
            if landing:
                t = t_target
            else:
                t = t + h
            for i in range(n):
                y[i] = y_new[i]
                k[0, i] = k[6, i]
        if record[i_stop]:
            out[row] = y
            row += 1

    return _OK, t, n_steps


def resting_state(v0: float = -85.0) -> np.ndarray:
    """State with voltage v0 and every gate at its steady value, which
    makes all 13 gate derivatives exactly zero."""
    if not np.isfinite(v0):
        raise ValueError("v0 must be finite")
    return np.concatenate(([float(v0)], gate_steady_states(v0)))


def _output_grid(cfg: SolveConfig) -> np.ndarray:
    n = int(round(cfg.t_end / cfg.grid_dt))
    if abs(n * cfg.grid_dt - cfg.t_end) < 1e-9 * max(1.0, cfg.t_end):
        return np.linspace(0.0, cfg.t_end, n + 1)
    grid = np.arange(0.0, cfg.t_end, cfg.grid_dt)
    return np.append(grid, cfg.t_end)


def _merge_stops(grid: np.ndarray, stim: StimulusSpec, t_end: float):
    extra = []
    if stim.amplitude != 0.0:
        for edge in (stim.onset, stim.onset + stim.duration):
            if 0.0 < edge < t_end:
                extra.append(edge)
    stops = np.concatenate((grid, np.array(extra)))
    order = np.argsort(stops, kind="stable")
    stops = stops[order]
    record = np.concatenate((np.ones(grid.size, bool), np.zeros(len(extra), bool)))[order]
    # collapse duplicates, keeping the record flag if either copy had it
    keep_stops = [stops[0]]
    keep_rec = [record[0]]
    for s, r in zip(stops[1:], record[1:]):
        if s - keep_stops[-1] < 1e-12:
            keep_rec[-1] = keep_rec[-1] or r
        else:
            keep_stops.append(s)
            keep_rec.append(r)
    return np.array(keep_stops), np.array(keep_rec, dtype=bool)


def solve(drug: DrugConfig,
          stim: StimulusSpec = DEFAULT_STIMULUS,
          cfg: SolveConfig = SolveConfig(),
          u0: np.ndarray | None = None,
          constants: ModelConstants = DEFAULT_CONSTANTS) -> Trajectory:
    """Integrate the system for one drug configuration.

    Raises IntegrationError if step control underflows (the exception
    carries the last time reached).
    """
    if u0 is None:
        u0 = resting_state(-85.0)
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (N_STATES,):
        raise ValueError(f"u0 must have shape ({N_STATES},)")
    grid = _output_grid(cfg)
    stops, record = _merge_stops(grid, stim, cfg.t_end)
    out = np.empty((grid.size, N_STATES))
    status, t_reached, _ = _integrate(
        u0, stops, record, cfg.rtol, cfg.atol, cfg.max_step,
        drug.as_array(), constants.as_array(), stim.as_array(), out)
    if status == _UNDERFLOW:
        raise IntegrationError(
            f"step size underflow at t = {t_reached:.6g} ms", t_reached)
    if status == _NONFINITE:
        raise IntegrationError(
            f"state became non-finite near t = {t_reached:.6g} ms", t_reached)
    return Trajectory(t=grid, states=out, drug=drug, stim=stim)


def _thread_count() -> int:
    env = os.environ.get("HSBINN_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def solve_batch(drugs,
                stim: StimulusSpec = DEFAULT_STIMULUS,
                cfg: SolveConfig = SolveConfig(),
                u0: np.ndarray | None = None,
                constants: ModelConstants = DEFAULT_CONSTANTS,
                threads: int | None = None) -> list[Trajectory | None]:
    """Element-wise solve over a list of drug configs, order preserved.

    Failed elements come back as None (with a warning) so one stiff
    configuration cannot sink the batch.
    """
    if threads is None:
        threads = _thread_count()

    def _one(drug):
        try:
            return solve(drug, stim=stim, cfg=cfg, u0=u0, constants=constants)
        except IntegrationError as exc:
            return exc

    if threads > 1 and len(drugs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one, drugs))
    else:
        results = [_one(d) for d in drugs]

    out: list[Trajectory | None] = []
    for i, res in enumerate(results):
        if isinstance(res, IntegrationError):
            warnings.warn(f"solve failed for config {i}: {res}")
            out.append(None)
        else:
            out.append(res)
    return out


def calibrate_stimulus(target_peak: float = 10.0,
                       onset: float = 0.0,
                       duration: float = 1.0,
                       cfg: SolveConfig = SolveConfig(),
                       constants: ModelConstants = DEFAULT_CONSTANTS,
                       bracket: tuple[float, float] = (1.0, 1000.0),
                       margin: float = 1.25) -> StimulusSpec:
    """Find a pulse amplitude whose drug-free response is a real action
    potential peaking above target_peak.

    Bisects the pulse magnitude to the firing threshold and returns the
    threshold times a safety margin (sign flipped: depolarizing pulses
    are negative here).
    """
    if target_peak <= 0:
        raise ValueError("target_peak must be > 0 mV")
    drug = DrugConfig.drug_free()
    u0 = resting_state(-85.0)

    def fires(mag: float) -> bool:
        spec = StimulusSpec(onset=onset, duration=duration, amplitude=-mag)
        try:
            traj = solve(drug, stim=spec, cfg=cfg, u0=u0, constants=constants)
        except IntegrationError:
            return False
        vmax = traj.v.max()
        return vmax >= target_peak and vmax > 0.0

    lo, hi = bracket
    if not fires(hi):
        raise CalibrationError(
            f"no amplitude up to {hi} elicits an AP peaking above {target_peak} mV")
    if fires(lo):
        hi = lo
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if fires(mid):
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-3 * hi:
                break
    spec = StimulusSpec(onset=onset, duration=duration, amplitude=-margin * hi)
    if not fires(margin * hi):
        raise CalibrationError("calibrated amplitude failed verification replay")
    return spec


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Canonical CSV dump: header then full-precision decimal rows."""
    data = np.column_stack((traj.t, traj.states))
    with open(path, "w") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for row in data:
            fh.write(",".join("%.17g" % x for x in row) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"unexpected trajectory header: {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return Trajectory(t=data[:, 0], states=data[:, 1:])
