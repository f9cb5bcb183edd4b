"""Action potential biomarkers and surrogate-vs-solver evaluation.

APD90 is the time from the voltage peak until the membrane has
repolarized 90% of the way from the peak back to baseline; APD50 uses
50%. Threshold crossings are located by linear interpolation between
grid points, so the extracted duration is stable under grid refinement.

Curve agreement is scored with the normalized squared difference (NSD):
the mean squared pointwise gap divided by the squared range of the
reference curve, which makes the 14 heterogeneous-scale state curves
comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .capmodel import DrugConfig, STATE_NAMES
from .solver import SolveConfig, resting_state, solve
from .training import Checkpoint

STAT_NAMES = ("Min", "Q1", "Median", "Mean", "Q3", "Max")


@dataclass
class BiomarkerResult:
    t_peak: float
    v_peak: float
    v_baseline: float
    apd90: float | None
    apd50: float | None
    valid: bool
    reason: str | None = None


def _first_crossing(t: np.ndarray, v: np.ndarray, start: int, threshold: float):
    """First index past start where v falls through threshold, with the
    crossing time linearly interpolated; None when it never does."""
    below = np.nonzero(v[start + 1:] <= threshold)[0]
    if below.size == 0:
        return None
    j = start + 1 + below[0]
    if v[j] == threshold or v[j] == v[j - 1]:
        return float(t[j])
    frac = (threshold - v[j - 1]) / (v[j] - v[j - 1])
    return float(t[j - 1] + frac * (t[j] - t[j - 1]))


def apd90(t, v, baseline_window: float = 0.0, min_amplitude: float = 10.0) -> BiomarkerResult:
    """Extract peak, baseline and the APD90/APD50 durations from one
    voltage trace.

    baseline_window > 0 averages the pre-stimulus samples (t strictly
    below the window) for the baseline; otherwise the first sample is
    the baseline. A trace whose peak rises less than min_amplitude above
    baseline is flagged invalid (no action potential).
    """
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if t.shape != v.shape or t.ndim != 1 or t.size < 3:
        raise ValueError("need matching 1-d time and voltage arrays")
    if baseline_window > 0:
        pre = v[t < baseline_window]
        v_base = float(pre.mean()) if pre.size else float(v[0])
    else:
        v_base = float(v[0])
    i_peak = int(np.argmax(v))
    v_peak = float(v[i_peak])
    t_peak = float(t[i_peak])
    if v_peak - v_base < min_amplitude:
        return BiomarkerResult(t_peak, v_peak, v_base, None, None, False,
                               reason="no action potential elicited")
    thr90 = v_peak - 0.9 * (v_peak - v_base)
    thr50 = v_peak - 0.5 * (v_peak - v_base)
    t90 = _first_crossing(t, v, i_peak, thr90)
    t50 = _first_crossing(t, v, i_peak, thr50)
    if t90 is None:
        return BiomarkerResult(t_peak, v_peak, v_base, None,
                               None if t50 is None else t50 - t_peak, False,
                               reason="no 90% repolarization inside the window")
    return BiomarkerResult(t_peak, v_peak, v_base, t90 - t_peak,
                           None if t50 is None else t50 - t_peak, True)


def nsd(predicted, reference) -> float:
    """Normalized squared difference between two curves sampled on a
    common grid."""
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.shape != r.shape:
        raise ValueError(f"curves live on different grids: {p.shape} vs {r.shape}")
    rng = r.max() - r.min()
    if rng == 0.0:
        raise ValueError("reference curve has zero range")
    return float(((p - r) ** 2).mean() / rng ** 2)


def nsd_curves(pred_states: np.ndarray, ref_states: np.ndarray) -> np.ndarray:
    """Per-state NSD for two (grid, 14) state matrices."""
    if pred_states.shape != ref_states.shape:
        raise ValueError("state matrices live on different grids")
    return np.array([nsd(pred_states[:, k], ref_states[:, k])
                     for k in range(len(STATE_NAMES))])


def _summary(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"Min": float(v.min()), "Q1": float(q1), "Median": float(med),
            "Mean": float(v.mean()), "Q3": float(q3), "Max": float(v.max())}


@dataclass
class ConfigEval:
    index: int
    drug: DrugConfig
    nsd: np.ndarray
    apd90_solver: float | None
    apd90_surrogate: float | None
    apd90_error: float | None
    apd_valid: bool
    reason: str | None
    solver_seconds: float
    surrogate_seconds: float


@dataclass
class EvalReport:
    """Per-config raw values plus the six summary statistics per curve
    and for the absolute APD90 error, with timing bookkeeping."""

    rows: list[ConfigEval]
    curve_stats: dict
    apd90_stats: dict | None
    n_apd_excluded: int
    solver_seconds: float
    surrogate_seconds: float
    # reserved for numbers produced outside this tool (other baselines)
    external_baselines: dict = field(default_factory=dict)

    @property
    def speedup(self) -> float:
        if self.surrogate_seconds == 0:
            return float("inf")
        return self.solver_seconds / self.surrogate_seconds

    def to_json_dict(self) -> dict:
        return {
            "configs": [
                {
                    "index": r.index,
                    "drug": {"c": r.drug.c, "ic50_naf": r.drug.ic50_naf,
                             "ic50_cal": r.drug.ic50_cal, "ic50_tof": r.drug.ic50_tof,
                             "ic50_kr": r.drug.ic50_kr},
                    "nsd": {name: float(x) for name, x in zip(STATE_NAMES, r.nsd)},
                    "apd90_solver": r.apd90_solver,
                    "apd90_surrogate": r.apd90_surrogate,
                    "apd90_error": r.apd90_error,
                    "apd_valid": r.apd_valid,
                    "reason": r.reason,
                    "solver_seconds": r.solver_seconds,
                    "surrogate_seconds": r.surrogate_seconds,
                }
                for r in self.rows
            ],
            "curve_stats": self.curve_stats,
            "apd90_stats": self.apd90_stats,
            "n_apd_excluded": self.n_apd_excluded,
            "solver_seconds": self.solver_seconds,
            "surrogate_seconds": self.surrogate_seconds,
            "speedup": self.speedup,
            "external_baselines": self.external_baselines,
        }


def build_report(rows: list[ConfigEval]) -> EvalReport:
    """Aggregate per-config results into the summary-statistics report."""
    curve_stats = {}
    nsd_matrix = np.array([r.nsd for r in rows])
    for k, name in enumerate(STATE_NAMES):
        curve_stats[name] = _summary(nsd_matrix[:, k])
    apd_errors = [r.apd90_error for r in rows if r.apd_valid]
    apd_stats = _summary(apd_errors) if apd_errors else None
    return EvalReport(
        rows=rows,
        curve_stats=curve_stats,
        apd90_stats=apd_stats,
        n_apd_excluded=sum(1 for r in rows if not r.apd_valid),
        solver_seconds=sum(r.solver_seconds for r in rows),
        surrogate_seconds=sum(r.surrogate_seconds for r in rows),
    )


def evaluate(ckpt: Checkpoint, configs: list[DrugConfig],
             solve_cfg: SolveConfig = SolveConfig(),
             oracle_mode: bool = False) -> EvalReport:
    """Compare the surrogate against the reference solver on a set of
    drug configurations.

    Per config: solve, predict on the same grid, score the 14 NSD values
    and the absolute APD90 gap. Configs where either trace has no valid
    APD90 are excluded from the APD statistics but still counted. With
    oracle_mode the solver plays its own surrogate (a self-comparison
    that must come out all zeros).
    """
    u0 = resting_state(ckpt.v0)
    rows = []
    # warm both paths so compilation never lands inside a timed region
    _ = solve(configs[0], stim=ckpt.stim, cfg=solve_cfg, u0=u0, constants=ckpt.constants)
    if not oracle_mode:
        _ = ckpt.predict(configs[0], np.array([0.0, 1.0]))
    for i, drug in enumerate(configs):
        t0 = time.perf_counter()
        traj = solve(drug, stim=ckpt.stim, cfg=solve_cfg, u0=u0, constants=ckpt.constants)
        t_solve = time.perf_counter() - t0
        t0 = time.perf_counter()
        if oracle_mode:
            pred = traj.states
        else:
            pred = ckpt.predict(drug, traj.t)
        t_pred = time.perf_counter() - t0

        nsd_vec = nsd_curves(pred, traj.states)
        base_win = ckpt.stim.onset
        bio_ref = apd90(traj.t, traj.v, baseline_window=base_win)
        bio_pred = apd90(traj.t, pred[:, 0], baseline_window=base_win)
        valid = bio_ref.valid and bio_pred.valid
        if valid:
            err = abs(bio_pred.apd90 - bio_ref.apd90)
            reason = None
        else:
            err = None
            reason = bio_ref.reason if not bio_ref.valid else bio_pred.reason
        rows.append(ConfigEval(
            index=i, drug=drug, nsd=nsd_vec,
            apd90_solver=bio_ref.apd90, apd90_surrogate=bio_pred.apd90,
            apd90_error=err, apd_valid=valid, reason=reason,
            solver_seconds=t_solve, surrogate_seconds=t_pred))
    return build_report(rows)


def write_curve_stats_csv(report: EvalReport, path) -> None:
    """Per-curve NSD summary table (curve rows, statistic columns)."""
    with open(path, "w") as fh:
        fh.write("Curve," + ",".join(STAT_NAMES) + "\n")
        for name in STATE_NAMES:
            stats = report.curve_stats[name]
            fh.write(name + "," + ",".join("%.17g" % stats[s] for s in STAT_NAMES) + "\n")


def write_apd_stats_csv(report: EvalReport, path) -> None:
    """Absolute APD90 error summary; one row per method, with slots for
    externally supplied baselines."""
    with open(path, "w") as fh:
        fh.write("Method," + ",".join(STAT_NAMES) + "\n")
        if report.apd90_stats is not None:
            fh.write("hsbinn," + ",".join(
                "%.17g" % report.apd90_stats[s] for s in STAT_NAMES) + "\n")
        for method, stats in report.external_baselines.items():
            fh.write(method + "," + ",".join(
                "%.17g" % stats.get(s, float("nan")) for s in STAT_NAMES) + "\n")


def read_stats_csv(path) -> dict:
    """Parse either stats table back into {row: {stat: value}}."""
    out = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols = header[1:]
        for line in fh:
            parts = line.strip().split(",")
            out[parts[0]] = {c: float(x) for c, x in zip(cols, parts[1:])}
    return out
