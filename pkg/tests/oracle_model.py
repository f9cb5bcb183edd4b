"""Independent hand transcription of the ionic model used as the test
oracle. Written from the channel definitions directly, scalar math only,
structured channel by channel; deliberately shares no code with the
library so a transcription slip on either side shows up as a mismatch.
"""

import math


def sig(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def block(c, ic50):
    return 1.0 / (1.0 + c / ic50)


# constants: reversal potentials (mV) and maximal conductances (nS)
E_CA, E_NA, E_K = 40.0, 74.0, -85.0
G_CA, G_NAL, G_NAF = 0.078, 0.03, 16.52
G_KR, G_KS, G_K1 = 0.03, 0.1505, 0.29
G_TOF, G_TOS = 0.06, 0.02

# state layout: V, f_CaL, h_CaL, f_NaF, f_NaL, h_NaF, h_NaL,
#               f_ToF, f_ToS, h_ToF, h_ToS, f_KR, f_KL, h_KL


def currents(state, drug):
    v = state[0]
    (f_cal, h_cal, f_naf, f_nal, h_naf, h_nal,
     f_tof, f_tos, h_tof, h_tos, f_kr, f_kl, h_kl) = state[1:]
    c, ic_naf, ic_cal, ic_tof, ic_kr = drug

    i_ca = G_CA * block(c, ic_cal) * (f_cal * h_cal) * (v - E_CA)
    i_naf = G_NAF * block(c, ic_naf) * (f_naf * h_naf) * (v - E_NA)
    i_tof = G_TOF * block(c, ic_tof) * (f_tof * h_tof) * (v - E_K)
    i_kr = G_KR * block(c, ic_kr) * (f_kr * sig(-(v + 33.0) / 22.4)) * (v - E_K)
    i_nal = G_NAL * (f_nal * h_nal) * (v - E_NA)
    i_tos = G_TOS * (f_tos * (h_tos + 0.5 * sig(-(v + 33.5) / 10.0))) * (v - E_K)
    i_kl = G_KS * (f_kl * h_kl) * (v - E_K)
    i_k1 = G_K1 * sig(-(v + 92.0) / 10.0) * (v - E_K)
    return [i_ca, i_naf, i_tof, i_kr, i_nal, i_tos, i_kl, i_k1]


def alpha_kr(v):
    a = 0.00138 * (v + 7.0)
    den = 1.0 - math.exp(-0.123 * (v + 7.0))
    first = 0.00138 / 0.123 if abs(v + 7.0) < 1e-10 else a / den
    b = 0.00061 * (v + 10.0)
    second = b / (1.0 + math.exp(0.145 * (v + 10.0)))
    return first - second


def alpha_kl(v):
    u = v + 30.0
    if abs(u) < 1e-10:
        first = 7.19e-5 / 0.148
        second = 1.31e-4 / 0.0687
    else:
        first = 7.19e-5 * u / (1.0 - math.exp(-0.148 * u))
        second = 1.31e-4 * u / (math.exp(0.0687 * u) - 1.0)
    return first + second


def gate_derivatives(state):
    v = state[0]
    (f_cal, h_cal, f_naf, f_nal, h_naf, h_nal,
     f_tof, f_tos, h_tof, h_tos, f_kr, f_kl, h_kl) = state[1:]

    d_f_cal = (sig((v + 14.6) / 5.5) - f_cal) / 0.7
    d_h_cal = (0.7 * math.exp(-0.0337 * (v + 14.5) ** 2) + 0.04) \
        * (sig(-(v + 31.0) / 5.54) - h_cal) / 25.1
    d_f_naf = (sig((v + 25.0) / 5.0) - f_naf) / 0.005
    d_h_naf = (sig(-(v + 69.0) / 3.96) - h_naf) / 2.0
    d_f_nal = (sig((v + 30.0) / 5.0) - f_nal) / 15.0
    d_h_nal = (sig(-(v + 75.6) / 6.3) - h_nal) / (120.0 + math.exp((v + 100.0) / 25.0))
    d_f_tof = (sig((v + 3.0) / 15.0) - f_tof) / (3.5 * math.exp(-v ** 2 / 900.0) + 1.5)
    d_h_tof = (sig(-(v + 33.5) / 10.0) - h_tof) \
        / (20.0 * (sig(-(v + 33.5) / 10.0) + 1.0))
    d_f_tos = (sig((v + 3.0) / 15.0) - f_tos) / (9.0 * sig(-(v + 3.0) / 15.0) + 0.5)
    d_h_tos = (sig(-(v + 33.5) / 10.0) - h_tos) \
        / (3000.0 * sig(-(v + 60.0) / 10.0) + 30.0)
    d_f_kr = alpha_kr(v) * (sig((v + 50.0) / 7.5) - f_kr)
    d_f_kl = alpha_kl(v) * (sig((v - 1.5) / 16.7) - f_kl)
    d_h_kl = 0.25 * alpha_kl(v) * (sig((v - 1.5) / 16.7) - h_kl)

    return [d_f_cal, d_h_cal, d_f_naf, d_f_nal, d_h_naf, d_h_nal,
            d_f_tof, d_f_tos, d_h_tof, d_h_tos, d_f_kr, d_f_kl, d_h_kl]


def stim_current(t, onset, duration, amplitude):
    return amplitude if onset <= t < onset + duration else 0.0


def full_rhs(t, state, drug, stim=(0.0, 1.0, 0.0)):
    cur = currents(state, drug)
    dv = -(stim_current(t, *stim) + sum(cur))
    return [dv] + gate_derivatives(state)
