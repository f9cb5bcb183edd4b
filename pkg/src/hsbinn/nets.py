"""Minimal MLP engine with the two derivative paths the training needs:
reverse-mode gradients with respect to the flat parameter vector, and a
forward-tangent pass for the derivative of the outputs with respect to
the scalar time input. Reverse mode is also provided through the tangent
computation, so losses that involve the time derivative (the ODE
residual) differentiate exactly.

Everything is float64 numpy; parameters live in one flat vector laid out
layer by layer as W (fan_in, fan_out) then b (fan_out).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ACTIVATIONS = ("linear", "tanh", "sigmoid")


@dataclass(frozen=True)
class MlpArch:
    """Shape and activation description of a fully connected network.

    out_activation holds one tag per output column so a single head can
    mix bounded (sigmoid) and unbounded (linear) outputs.
    """

    in_width: int
    hidden: tuple[int, ...]
    out_width: int
    out_activation: tuple[str, ...]
    hidden_activation: str = "tanh"

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1 or any(w < 1 for w in self.hidden):
            raise ValueError("all widths must be >= 1")
        if len(self.out_activation) != self.out_width:
            raise ValueError("need one output activation per output")
        bad = set(self.out_activation).union((self.hidden_activation,)) - set(_ACTIVATIONS)
        if bad:
            raise ValueError(f"unknown activation(s) {sorted(bad)!r}")
        # column indices per nonlinearity, so wide heads avoid python loops
        object.__setattr__(self, "_sig_cols", np.array(
            [j for j, a in enumerate(self.out_activation) if a == "sigmoid"], dtype=np.intp))
        object.__setattr__(self, "_tanh_cols", np.array(
            [j for j, a in enumerate(self.out_activation) if a == "tanh"], dtype=np.intp))

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.in_width, *self.hidden, self.out_width)

    def layer_dims(self) -> list[tuple[int, int]]:
        w = self.widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    def to_dict(self) -> dict:
        return {
            "in_width": self.in_width,
            "hidden": list(self.hidden),
            "out_width": self.out_width,
            "out_activation": list(self.out_activation),
            "hidden_activation": self.hidden_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArch":
        return cls(
            in_width=int(d["in_width"]),
            hidden=tuple(int(x) for x in d["hidden"]),
            out_width=int(d["out_width"]),
            out_activation=tuple(d["out_activation"]),
            hidden_activation=d.get("hidden_activation", "tanh"),
        )


def param_count(arch: MlpArch) -> int:
    """Total number of weights and biases."""
    return sum(fi * fo + fo for fi, fo in arch.layer_dims())


@dataclass
class NetParams:
    """Flat parameter vector bound to its architecture."""

    arch: MlpArch
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expect = param_count(self.arch)
        if self.values.shape != (expect,):
            raise ValueError(
                f"parameter vector has length {self.values.size}, arch needs {expect}")


def init_params(arch: MlpArch, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    parts = []
    for fi, fo in arch.layer_dims():
        limit = np.sqrt(6.0 / (fi + fo))
        parts.append(rng.uniform(-limit, limit, size=fi * fo))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


def unflatten(arch: MlpArch, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (no copies) of the flat vector as per-layer (W, b)."""
    params = np.asarray(params)
    if params.shape != (param_count(arch),):
        raise ValueError("parameter vector length does not match architecture")
    out = []
    pos = 0
    for fi, fo in arch.layer_dims():
        w = params[pos:pos + fi * fo].reshape(fi, fo)
        pos += fi * fo
        b = params[pos:pos + fo]
        pos += fo
        out.append((w, b))
    return out


def flatten(arch: MlpArch, layers) -> np.ndarray:
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    flat = np.concatenate(parts)
    if flat.size != param_count(arch):
        raise ValueError("layer shapes do not match architecture")
    return flat


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _apply_hidden(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return _sigmoid(a)
    return a


def _apply_output(arch: MlpArch, a: np.ndarray) -> np.ndarray:
    sig, tnh = arch._sig_cols, arch._tanh_cols
    if sig.size == 0 and tnh.size == 0:
        return a
    z = a.copy()
    if sig.size:
        z[:, sig] = _sigmoid(a[:, sig])
    if tnh.size:
        z[:, tnh] = np.tanh(a[:, tnh])
    return z


def _d1_hidden(name: str, z: np.ndarray) -> np.ndarray:
    # first derivative of the activation, written in terms of its value
    if name == "tanh":
        return 1.0 - z * z
    if name == "sigmoid":
        return z * (1.0 - z)
    return np.ones_like(z)


def _d1_output(arch: MlpArch, z: np.ndarray):
    sig, tnh = arch._sig_cols, arch._tanh_cols
    if sig.size == 0 and tnh.size == 0:
        return None  # identity; callers treat None as ones
    d = np.ones_like(z)
    if sig.size:
        s = z[:, sig]
        d[:, sig] = s * (1.0 - s)
    if tnh.size:
        t = z[:, tnh]
        d[:, tnh] = 1.0 - t * t
    return d


def _as_batch(arch: MlpArch, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        if arch.in_width == 1:
            x = x[:, None]
        else:
            x = x[None, :]
    if x.shape[1] != arch.in_width:
        raise ValueError(f"input width {x.shape[1]} != arch in_width {arch.in_width}")
    return x


@dataclass
class ForwardCache:
    """Layer views plus per-layer post-activation values (and tangents
    when the pass carried them)."""

    layers: list
    zs: list
    zdots: list | None = None
    adots: list | None = None


def forward_cached(arch: MlpArch, params: np.ndarray, x) -> tuple[np.ndarray, ForwardCache]:
    x = _as_batch(arch, x)
    layers = unflatten(arch, params)
    zs = [x]
    z = x
    last = len(layers) - 1
    for l, (w, b) in enumerate(layers):
        a = z @ w + b
        z = _apply_output(arch, a) if l == last else _apply_hidden(arch.hidden_activation, a)
        zs.append(z)
    return z, ForwardCache(layers=layers, zs=zs)


def forward(arch: MlpArch, params: np.ndarray, x) -> np.ndarray:
    """Batched network evaluation; rows of x are independent inputs."""
    out, _ = forward_cached(arch, params, x)
    return out


def forward_tangent(arch: MlpArch, params: np.ndarray, x,
                    x_dot: np.ndarray | None = None):
    """Forward pass carrying the directional derivative d(out)/d(input)
    along x_dot (default: ones, i.e. the scalar-input time derivative).

    Returns (out, out_dot, cache); the cache supports both backward
    passes below.
    """
    x = _as_batch(arch, x)
    if x_dot is None:
        x_dot = np.ones_like(x)
    else:
        x_dot = np.asarray(x_dot, dtype=np.float64).reshape(x.shape)
    layers = unflatten(arch, params)
    zs = [x]
    zdots = [x_dot]
    adots = [None]
    z, zd = x, x_dot
    last = len(layers) - 1
    for l, (w, b) in enumerate(layers):
        a = z @ w + b
        ad = zd @ w
        if l == last:
            z = _apply_output(arch, a)
            d1 = _d1_output(arch, z)
            zd = ad if d1 is None else d1 * ad
        else:
            z = _apply_hidden(arch.hidden_activation, a)
            zd = _d1_hidden(arch.hidden_activation, z) * ad
        zs.append(z)
        zdots.append(zd)
        adots.append(ad)
    return z, zd, ForwardCache(layers=layers, zs=zs, zdots=zdots, adots=adots)


def input_derivative(arch: MlpArch, params: np.ndarray, x) -> np.ndarray:
    """d(outputs)/d(scalar input) at each row of x."""
    _, out_dot, _ = forward_tangent(arch, params, x)
    return out_dot


def backward_params(arch: MlpArch, cache: ForwardCache, g_out: np.ndarray,
                    out: np.ndarray | None = None) -> np.ndarray:
    """Reverse pass: gradient of sum(g_out * out) with respect to the
    flat parameters, summed over the batch in a fixed order. Pass out
    to reuse a gradient buffer (it is overwritten)."""
    dims = arch.layer_dims()
    zs = cache.zs
    grad = np.empty(param_count(arch)) if out is None else out
    g_z = np.asarray(g_out, dtype=np.float64)
    pos = grad.size
    last = len(dims) - 1
    for l in range(last, -1, -1):
        fi, fo = dims[l]
        z_cur = zs[l + 1]
        d1 = _d1_output(arch, z_cur) if l == last else _d1_hidden(arch.hidden_activation, z_cur)
        g_a = g_z if d1 is None else g_z * d1
        pos -= fo
        np.sum(g_a, axis=0, out=grad[pos:pos + fo])
        pos -= fi * fo
        np.matmul(zs[l].T, g_a, out=grad[pos:pos + fi * fo].reshape(fi, fo))
        if l > 0:
            g_z = g_a @ cache.layers[l][0].T
    return grad


def _d1_mul(arch: MlpArch, name: str, z: np.ndarray, is_out: bool):
    """Activation derivative written as (d1, m) with d2 = d1 * m, which
    lets the tangent backward fuse its two derivative factors."""
    if is_out:
        sig, tnh = arch._sig_cols, arch._tanh_cols
        if sig.size == 0 and tnh.size == 0:
            return None, None
        d1 = np.ones_like(z)
        m = np.zeros_like(z)
        if sig.size:
            s = z[:, sig]
            d1[:, sig] = s * (1.0 - s)
            m[:, sig] = 1.0 - 2.0 * s
        if tnh.size:
            t = z[:, tnh]
            d1[:, tnh] = 1.0 - t * t
            m[:, tnh] = -2.0 * t
        return d1, m
    if name == "tanh":
        return 1.0 - z * z, -2.0 * z
    if name == "sigmoid":
        d1 = z * (1.0 - z)
        return d1, 1.0 - 2.0 * z
    return None, None


def backward_tangent_params(arch: MlpArch, cache: ForwardCache,
                            g_out: np.ndarray, g_outdot: np.ndarray,
                            out: np.ndarray | None = None) -> np.ndarray:
    """Reverse pass through the primal+tangent computation: gradient of
    sum(g_out * out + g_outdot * out_dot) with respect to the flat
    parameters. Needs a cache from forward_tangent."""
    if cache.zdots is None:
        raise ValueError("cache was built without tangents; use forward_tangent")
    dims = arch.layer_dims()
    zs, zdots, adots = cache.zs, cache.zdots, cache.adots
    grad = np.empty(param_count(arch)) if out is None else out
    g_z = np.asarray(g_out, dtype=np.float64)
    g_zd = np.asarray(g_outdot, dtype=np.float64)
    pos = grad.size
    last = len(dims) - 1
    for l in range(last, -1, -1):
        fi, fo = dims[l]
        z_cur = zs[l + 1]
        ad = adots[l + 1]
        d1, m = _d1_mul(arch, arch.hidden_activation, z_cur, is_out=(l == last))
        if d1 is None:
            g_a, g_ad = g_z, g_zd
        else:
            # d2 = d1 * m, so g_z*d1 + g_zd*d2*ad = d1*(g_z + g_zd*m*ad)
            g_a = d1 * (g_z + g_zd * m * ad)
            g_ad = g_zd * d1
        pos -= fo
        np.sum(g_a, axis=0, out=grad[pos:pos + fo])
        pos -= fi * fo
        dw = grad[pos:pos + fi * fo].reshape(fi, fo)
        np.matmul(zs[l].T, g_a, out=dw)
        dw += zdots[l].T @ g_ad
        if l > 0:
            w = cache.layers[l][0]
            g_z = g_a @ w.T
            g_zd = g_ad @ w.T
    return grad


def value_and_grad(arch: MlpArch, params: np.ndarray, x, loss_fn):
    """Value and exact parameter gradient of a scalar loss of the
    network outputs.

    loss_fn maps the (m, out_width) output matrix to a pair
    (value, d value / d outputs).
    """
    out, cache = forward_cached(arch, params, x)
    value, g_out = loss_fn(out)
    return value, backward_params(arch, cache, g_out)


def grad_params(arch: MlpArch, params: np.ndarray, x, loss_fn) -> np.ndarray:
    """Gradient half of value_and_grad; kept as its own verb since most
    callers only want the vector."""
    return value_and_grad(arch, params, x, loss_fn)[1]
