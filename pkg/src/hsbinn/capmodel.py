"""Cardiac action potential model with drug-dependent channel block.

The cell is described by 14 coupled ODEs: the membrane voltage V and 13
dimensionless gate variables. Eight ionic currents follow the Ohmic form

    I = G_max * k(c, IC50) * g(V, gates) * (V - E_rev)

where k(c, IC50) = 1 / (1 + c/IC50) is the fractional conductance left
after block by a compound at concentration c. Four channels (Na-F, Ca-L,
To-F, K-R) are drug sensitive; the rest conduct unblocked. Cell
capacitance is 1, so dV/dt = -(I_stim + sum of currents).

Canonical state ordering (used by every array, CSV and network output):

    index  0: V        membrane voltage (mV)
    index  1: f_CaL    index  2: h_CaL
    index  3: f_NaF    index  4: f_NaL
    index  5: h_NaF    index  6: h_NaL
    index  7: f_ToF    index  8: f_ToS
    index  9: h_ToF    index 10: h_ToS
    index 11: f_KR     index 12: f_KL    index 13: h_KL

All gate ODEs share the relaxation form dg/dt = r(V) * (g_inf(V) - g)
with r(V) > 0, so each gate is a contraction toward g_inf(V) in (0, 1).

The scalar kernels below are numba-compiled and are the single
transcription of the model; the batch wrappers and the reference solver
reuse them point by point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

N_STATES = 14
N_GATES = 13
N_CURRENTS = 8

STATE_NAMES = (
    "V",
    "f_CaL", "h_CaL",
    "f_NaF", "f_NaL", "h_NaF", "h_NaL",
    "f_ToF", "f_ToS", "h_ToF", "h_ToS",
    "f_KR", "f_KL", "h_KL",
)
GATE_NAMES = STATE_NAMES[1:]
CURRENT_NAMES = ("I_CaL", "I_NaF", "I_ToF", "I_KR", "I_NaL", "I_ToS", "I_KL", "I_KI")

# drug vector layout: [c, ic50_naf, ic50_cal, ic50_tof, ic50_kr]
_DRUG_C, _DRUG_NAF, _DRUG_CAL, _DRUG_TOF, _DRUG_KR = range(5)

# constants vector layout
(_E_CA, _E_NA, _E_K,
 _G_CAL, _G_NAF, _G_TOF, _G_KR, _G_NAL, _G_TOS, _G_KL, _G_KI) = range(11)


@dataclass(frozen=True)
class DrugConfig:
    """Compound descriptor: concentration plus four channel IC50s (µM)."""

    c: float = 0.0
    ic50_naf: float = 100.0
    ic50_cal: float = 100.0
    ic50_tof: float = 100.0
    ic50_kr: float = 100.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"concentration must be >= 0, got {self.c}")
        for name in ("ic50_naf", "ic50_cal", "ic50_tof", "ic50_kr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.c, self.ic50_naf, self.ic50_cal, self.ic50_tof, self.ic50_kr],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, arr) -> "DrugConfig":
        c, naf, cal, tof, kr = (float(x) for x in arr)
        return cls(c=c, ic50_naf=naf, ic50_cal=cal, ic50_tof=tof, ic50_kr=kr)

    @classmethod
    def drug_free(cls) -> "DrugConfig":
        return cls(c=0.0)


@dataclass(frozen=True)
class ModelConstants:
    """Reversal potentials (mV) and maximal conductances (nS)."""

    e_ca: float = 40.0
    e_na: float = 74.0
    e_k: float = -85.0
    g_cal: float = 0.078
    g_naf: float = 16.52
    g_tof: float = 0.06
    g_kr: float = 0.03
    g_nal: float = 0.03
    g_tos: float = 0.02
    g_kl: float = 0.1505
    g_ki: float = 0.29

    def __post_init__(self):
        for name in ("g_cal", "g_naf", "g_tof", "g_kr", "g_nal", "g_tos", "g_kl", "g_ki"):
            if getattr(self, name) <= 0:
                raise ValueError(f"conductance {name} must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.e_ca, self.e_na, self.e_k,
             self.g_cal, self.g_naf, self.g_tof, self.g_kr,
             self.g_nal, self.g_tos, self.g_kl, self.g_ki],
            dtype=np.float64,
        )

    def with_overrides(self, **kwargs) -> "ModelConstants":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class StimulusSpec:
    """Rectangular pacing pulse. Amplitude is the signed applied current;
    a negative value depolarizes (dV/dt picks up -amplitude).

    The default amplitude comes from one calibration run against the
    drug-free model (firing threshold ~= -27.6, kept with a 1.25x
    safety margin); see solver.calibrate_stimulus."""

    onset: float = 0.0
    duration: float = 1.0
    amplitude: float = -35.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"stimulus duration must be > 0, got {self.duration}")

    def as_array(self) -> np.ndarray:
        return np.array([self.onset, self.duration, self.amplitude], dtype=np.float64)

    @classmethod
    def off(cls) -> "StimulusSpec":
        return cls(amplitude=0.0)


DEFAULT_CONSTANTS = ModelConstants()


# ---------------------------------------------------------------------------
# scalar kernels (single transcription of the model)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _sigmoid(z):
    # overflow-safe logistic
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _inhibition(c, ic50):
    return 1.0 / (1.0 + c / ic50)


@njit(cache=True, nogil=True)
def _phi_ratio(u, k):
    # u / (1 - exp(-k*u)) with its removable singularity at u = 0
    if abs(u) < 1e-4:
        return 1.0 / k + 0.5 * u + k * u * u / 12.0
    return u / (1.0 - np.exp(-k * u))


@njit(cache=True, nogil=True)
def _phi_ratio_deriv(u, k):
    if abs(u) < 1e-4:
        return 0.5 + k * u / 6.0
    e = np.exp(-k * u)
    d = 1.0 - e
    return (d - u * k * e) / (d * d)


@njit(cache=True, nogil=True)
def _chi_ratio(u, k):
    # u / (exp(k*u) - 1) with its removable singularity at u = 0
    if abs(u) < 1e-4:
        return 1.0 / k - 0.5 * u + k * u * u / 12.0
    return u / (np.exp(k * u) - 1.0)


@njit(cache=True, nogil=True)
def _chi_ratio_deriv(u, k):
    if abs(u) < 1e-4:
        return -0.5 + k * u / 6.0
    e = np.exp(k * u)
    d = e - 1.0
    return (d - u * k * e) / (d * d)


@njit(cache=True, nogil=True)
def _rate_kr(v):
    # activation rate of the rapid delayed rectifier gate
    a = 0.00138 * _phi_ratio(v + 7.0, 0.123)
    w = v + 10.0
    b = 0.00061 * w / (1.0 + np.exp(0.145 * w))
    return a - b


@njit(cache=True, nogil=True)
def _rate_kr_deriv(v):
    da = 0.00138 * _phi_ratio_deriv(v + 7.0, 0.123)
    w = v + 10.0
    e = np.exp(0.145 * w)
    d = 1.0 + e
    db = 0.00061 * (d - w * 0.145 * e) / (d * d)
    return da - db


@njit(cache=True, nogil=True)
def _rate_kl(v):
    # shared activation rate of the slow delayed rectifier pair
    u = v + 30.0
    return 7.19e-5 * _phi_ratio(u, 0.148) + 1.31e-4 * _chi_ratio(u, 0.0687)


@njit(cache=True, nogil=True)
def _rate_kl_deriv(v):
    u = v + 30.0
    return 7.19e-5 * _phi_ratio_deriv(u, 0.148) + 1.31e-4 * _chi_ratio_deriv(u, 0.0687)


@njit(cache=True, nogil=True)
def _gate_steady_rate(v, m, r):
    """Fill m with the 13 gate steady states g_inf(v) and r with the
    relaxation rates r(v) (1/ms), in canonical gate order."""
    # Ca-L
    m[0] = _sigmoid((v + 14.6) / 5.5)
    r[0] = 1.0 / 0.7
    m[1] = _sigmoid(-(v + 31.0) / 5.54)
    r[1] = (0.7 * np.exp(-0.0337 * (v + 14.5) ** 2) + 0.04) / 25.1
    # Na-F / Na-L
    m[2] = _sigmoid((v + 25.0) / 5.0)
    r[2] = 1.0 / 0.005
    m[3] = _sigmoid((v + 30.0) / 5.0)
    r[3] = 1.0 / 15.0
    m[4] = _sigmoid(-(v + 69.0) / 3.96)
    r[4] = 1.0 / 2.0
    m[5] = _sigmoid(-(v + 75.6) / 6.3)
    r[5] = 1.0 / (120.0 + np.exp((v + 100.0) / 25.0))
    # To-F / To-S
    m[6] = _sigmoid((v + 3.0) / 15.0)
    r[6] = 1.0 / (3.5 * np.exp(-v * v / 900.0) + 1.5)
    m[7] = _sigmoid((v + 3.0) / 15.0)
    r[7] = 1.0 / (9.0 * _sigmoid(-(v + 3.0) / 15.0) + 0.5)
    s_to = _sigmoid(-(v + 33.5) / 10.0)
    m[8] = s_to
    r[8] = 1.0 / (20.0 * (s_to + 1.0))
    m[9] = s_to
    r[9] = 1.0 / (3000.0 * _sigmoid(-(v + 60.0) / 10.0) + 30.0)
    # K-R
    m[10] = _sigmoid((v + 50.0) / 7.5)
    r[10] = _rate_kr(v)
    # K-L pair
    m_kl = _sigmoid((v - 1.5) / 16.7)
    r_kl = _rate_kl(v)
    m[11] = m_kl
    r[11] = r_kl
    m[12] = m_kl
    r[12] = r_kl / 4.0


@njit(cache=True, nogil=True)
def _gate_steady_rate_deriv(v, dm, dr):
    """dm, dr get d(g_inf)/dV and d(rate)/dV for the 13 gates."""
    s = _sigmoid((v + 14.6) / 5.5)
    dm[0] = s * (1.0 - s) / 5.5
    dr[0] = 0.0
    s = _sigmoid(-(v + 31.0) / 5.54)
    dm[1] = -s * (1.0 - s) / 5.54
    dr[1] = 0.7 * (-0.0674 * (v + 14.5)) * np.exp(-0.0337 * (v + 14.5) ** 2) / 25.1
    s = _sigmoid((v + 25.0) / 5.0)
    dm[2] = s * (1.0 - s) / 5.0
    dr[2] = 0.0
    s = _sigmoid((v + 30.0) / 5.0)
    dm[3] = s * (1.0 - s) / 5.0
    dr[3] = 0.0
    s = _sigmoid(-(v + 69.0) / 3.96)
    dm[4] = -s * (1.0 - s) / 3.96
    dr[4] = 0.0
    s = _sigmoid(-(v + 75.6) / 6.3)
    dm[5] = -s * (1.0 - s) / 6.3
    tau = 120.0 + np.exp((v + 100.0) / 25.0)
    dr[5] = -(np.exp((v + 100.0) / 25.0) / 25.0) / (tau * tau)
    s = _sigmoid((v + 3.0) / 15.0)
    dm[6] = s * (1.0 - s) / 15.0
    tau = 3.5 * np.exp(-v * v / 900.0) + 1.5
    dtau = 3.5 * (-2.0 * v / 900.0) * np.exp(-v * v / 900.0)
    dr[6] = -dtau / (tau * tau)
    dm[7] = s * (1.0 - s) / 15.0
    p = _sigmoid(-(v + 3.0) / 15.0)
    tau = 9.0 * p + 0.5
    dtau = -9.0 * p * (1.0 - p) / 15.0
    dr[7] = -dtau / (tau * tau)
    s_to = _sigmoid(-(v + 33.5) / 10.0)
    ds_to = -s_to * (1.0 - s_to) / 10.0
    dm[8] = ds_to
    tau = 20.0 * (s_to + 1.0)
    dr[8] = -20.0 * ds_to / (tau * tau)
    dm[9] = ds_to
    w = _sigmoid(-(v + 60.0) / 10.0)
    tau = 3000.0 * w + 30.0
    dtau = -300.0 * w * (1.0 - w)
    dr[9] = -dtau / (tau * tau)
    s = _sigmoid((v + 50.0) / 7.5)
    dm[10] = s * (1.0 - s) / 7.5
    dr[10] = _rate_kr_deriv(v)
    s = _sigmoid((v - 1.5) / 16.7)
    dm_kl = s * (1.0 - s) / 16.7
    dr_kl = _rate_kl_deriv(v)
    dm[11] = dm_kl
    dr[11] = dr_kl
    dm[12] = dm_kl
    dr[12] = dr_kl / 4.0


@njit(cache=True, nogil=True)
def _currents(y, drug, consts, out):
    """Fill out with the 8 ionic currents in CURRENT_NAMES order."""
    v = y[0]
    c = drug[0]
    k_cal = _inhibition(c, drug[2])
    k_naf = _inhibition(c, drug[1])
    k_tof = _inhibition(c, drug[3])
    k_kr = _inhibition(c, drug[4])
    out[0] = consts[3] * k_cal * y[1] * y[2] * (v - consts[0])
    out[1] = consts[4] * k_naf * y[3] * y[5] * (v - consts[1])
    out[2] = consts[5] * k_tof * y[7] * y[9] * (v - consts[2])
    out[3] = consts[6] * k_kr * y[11] * _sigmoid(-(v + 33.0) / 22.4) * (v - consts[2])
    out[4] = consts[7] * y[4] * y[6] * (v - consts[1])
    out[5] = consts[8] * y[8] * (y[10] + 0.5 * _sigmoid(-(v + 33.5) / 10.0)) * (v - consts[2])
    out[6] = consts[9] * y[12] * y[13] * (v - consts[2])
    out[7] = consts[10] * _sigmoid(-(v + 92.0) / 10.0) * (v - consts[2])


@njit(cache=True, nogil=True)
def _stimulus(t, stim):
    if stim[0] <= t < stim[0] + stim[1]:
        return stim[2]
    return 0.0


@njit(cache=True, nogil=True)
def _rhs_istim(y, drug, consts, istim, dy):
    """Time derivative given the applied current value directly."""
    cur = np.empty(8)
    _currents(y, drug, consts, cur)
    total = istim
    for j in range(8):
        total += cur[j]
    dy[0] = -total
    m = np.empty(13)
    r = np.empty(13)
    _gate_steady_rate(y[0], m, r)
    for k in range(13):
        dy[1 + k] = r[k] * (m[k] - y[1 + k])


@njit(cache=True, nogil=True)
def _rhs(t, y, drug, consts, stim, dy):
    """Time derivative of the full state, written into dy."""
    _rhs_istim(y, drug, consts, _stimulus(t, stim), dy)


@njit(cache=True, nogil=True)
def _jacobian(y, drug, consts, jac):
    """State Jacobian of the rhs (stimulus is state-independent)."""
    v = y[0]
    c = drug[0]
    k_cal = _inhibition(c, drug[2])
    k_naf = _inhibition(c, drug[1])
    k_tof = _inhibition(c, drug[3])
    k_kr = _inhibition(c, drug[4])
    e_ca, e_na, e_k = consts[0], consts[1], consts[2]

    jac[:, :] = 0.0

    # dV/dt row: -(sum of currents); each current G*k*g(V,gates)*(V-E)
    # conducting fractions and their V-dependence
    q_kr = _sigmoid(-(v + 33.0) / 22.4)
    dq_kr = -q_kr * (1.0 - q_kr) / 22.4
    p_tos = _sigmoid(-(v + 33.5) / 10.0)
    dp_tos = -p_tos * (1.0 - p_tos) / 10.0
    g_ki = _sigmoid(-(v + 92.0) / 10.0)
    dg_ki = -g_ki * (1.0 - g_ki) / 10.0

    dvv = 0.0
    # Ca-L
    g = y[1] * y[2]
    dvv += consts[3] * k_cal * g
    jac[0, 1] = -consts[3] * k_cal * y[2] * (v - e_ca)
    jac[0, 2] = -consts[3] * k_cal * y[1] * (v - e_ca)
    # Na-F
    g = y[3] * y[5]
    dvv += consts[4] * k_naf * g
    jac[0, 3] = -consts[4] * k_naf * y[5] * (v - e_na)
    jac[0, 5] = -consts[4] * k_naf * y[3] * (v - e_na)
    # To-F
    g = y[7] * y[9]
    dvv += consts[5] * k_tof * g
    jac[0, 7] = -consts[5] * k_tof * y[9] * (v - e_k)
    jac[0, 9] = -consts[5] * k_tof * y[7] * (v - e_k)
    # K-R
    dvv += consts[6] * k_kr * (y[11] * q_kr + y[11] * dq_kr * (v - e_k))
    jac[0, 11] = -consts[6] * k_kr * q_kr * (v - e_k)
    # Na-L
    g = y[4] * y[6]
    dvv += consts[7] * g
    jac[0, 4] = -consts[7] * y[6] * (v - e_na)
    jac[0, 6] = -consts[7] * y[4] * (v - e_na)
    # To-S
    g = y[8] * (y[10] + 0.5 * p_tos)
    dvv += consts[8] * (g + y[8] * 0.5 * dp_tos * (v - e_k))
    jac[0, 8] = -consts[8] * (y[10] + 0.5 * p_tos) * (v - e_k)
    jac[0, 10] = -consts[8] * y[8] * (v - e_k)
    # K-L
    g = y[12] * y[13]
    dvv += consts[9] * g
    jac[0, 12] = -consts[9] * y[13] * (v - e_k)
    jac[0, 13] = -consts[9] * y[12] * (v - e_k)
    # K-I
    dvv += consts[10] * (g_ki + dg_ki * (v - e_k))
    jac[0, 0] = -dvv

    # gate rows: dg/dt = r(V) (m(V) - g)
    m = np.empty(13)
    r = np.empty(13)
    dm = np.empty(13)
    dr = np.empty(13)
    _gate_steady_rate(v, m, r)
    _gate_steady_rate_deriv(v, dm, dr)
    for k in range(13):
        jac[1 + k, 0] = dr[k] * (m[k] - y[1 + k]) + r[k] * dm[k]
        jac[1 + k, 1 + k] = -r[k]


@njit(cache=True, nogil=True)
def _rhs_batch(ts, ys, drug, consts, stim, out):
    for i in range(ts.shape[0]):
        _rhs(ts[i], ys[i], drug, consts, stim, out[i])


@njit(cache=True, nogil=True)
def _jacobian_batch(ys, drug, consts, out):
    for i in range(ys.shape[0]):
        _jacobian(ys[i], drug, consts, out[i])


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def inhibition_factor(c: float, ic50: float) -> float:
    """Fractional conductance (1 + c/ic50)^-1 remaining under block."""
    if ic50 <= 0:
        raise ValueError(f"ic50 must be > 0, got {ic50}")
    if c < 0:
        raise ValueError(f"concentration must be >= 0, got {c}")
    return float(_inhibition(c, ic50))


def gate_steady_states(v: float) -> np.ndarray:
    """Steady-state values of the 13 gates at voltage v (canonical order)."""
    m = np.empty(13)
    r = np.empty(13)
    _gate_steady_rate(float(v), m, r)
    return m


def gate_rates(v: float) -> np.ndarray:
    """Relaxation rates r(v) > 0 of the 13 gates (1/ms)."""
    m = np.empty(13)
    r = np.empty(13)
    _gate_steady_rate(float(v), m, r)
    return r


@dataclass(frozen=True)
class GateSpec:
    """Handle on one gate's kinetics: g_inf(V) and its relaxation rate."""

    name: str
    index: int

    def steady(self, v: float) -> float:
        return float(gate_steady_states(v)[self.index])

    def rate(self, v: float) -> float:
        return float(gate_rates(v)[self.index])


GATES = tuple(GateSpec(name, i) for i, name in enumerate(GATE_NAMES))


def ionic_currents(state, drug: DrugConfig, constants: ModelConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """The 8 ionic currents at a given state, in CURRENT_NAMES order."""
    y = np.asarray(state, dtype=np.float64)
    out = np.empty(8)
    _currents(y, drug.as_array(), constants.as_array(), out)
    return out


def stimulus(t: float, spec: StimulusSpec) -> float:
    """Applied pulse current at time t."""
    return float(_stimulus(float(t), spec.as_array()))


def rhs(t: float, state, drug: DrugConfig,
        spec: StimulusSpec = StimulusSpec.off(),
        constants: ModelConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Full 14-component time derivative at (t, state)."""
    y = np.asarray(state, dtype=np.float64)
    if y.shape != (N_STATES,):
        raise ValueError(f"state must have shape ({N_STATES},), got {y.shape}")
    dy = np.empty(N_STATES)
    _rhs(float(t), y, drug.as_array(), constants.as_array(), spec.as_array(), dy)
    return dy


def rhs_batch(ts, states, drug: DrugConfig,
              spec: StimulusSpec = StimulusSpec.off(),
              constants: ModelConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Vectorized rhs over rows of states; ts gives each row's time."""
    ts = np.ascontiguousarray(ts, dtype=np.float64)
    ys = np.ascontiguousarray(states, dtype=np.float64)
    out = np.empty_like(ys)
    _rhs_batch(ts, ys, drug.as_array(), constants.as_array(), spec.as_array(), out)
    return out


def rhs_jacobian(state, drug: DrugConfig,
                 constants: ModelConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """State Jacobian d(rhs)/d(state), shape (14, 14)."""
    y = np.asarray(state, dtype=np.float64)
    jac = np.empty((N_STATES, N_STATES))
    _jacobian(y, drug.as_array(), constants.as_array(), jac)
    return jac


def rhs_jacobian_batch(states, drug: DrugConfig,
                       constants: ModelConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    ys = np.ascontiguousarray(states, dtype=np.float64)
    out = np.empty((ys.shape[0], N_STATES, N_STATES))
    _jacobian_batch(ys, drug.as_array(), constants.as_array(), out)
    return out
