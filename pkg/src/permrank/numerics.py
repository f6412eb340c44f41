"""Dense numeric kernel: activations, BCE, MLP and Bi-LSTM passes, Adam.

Parameters of every model are plain ``dict[str, np.ndarray]`` mappings so that
the optimizer, the gradient checker and the checkpoint writer can treat them
uniformly. Row-vector convention throughout: a dense layer computes
``x @ W + b`` with ``W`` of shape ``(in_dim, out_dim)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, FormatError, ShapeError

Params = Dict[str, np.ndarray]

BCE_EPS = 1e-7
INIT_SCALE = 0.05
DEFAULT_HIDDEN = (128, 64, 32)

_P_MAX = float(np.nextafter(1.0, 0.0))
_P_MIN = float(np.finfo(np.float64).tiny)


def _sigmoid(x):
    # branch-free stable logistic; no input validation (internal hot path)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_stable(x):
    """Overflow-safe logistic function with output strictly inside (0, 1).

    Accepts a scalar or an array. Non-finite inputs raise ``DomainError``.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("sigmoid input must be finite")
    out = np.clip(_sigmoid(arr), _P_MIN, _P_MAX)
    if np.ndim(x) == 0:
        return float(out)
    return out


def bce_loss(labels, probs, mask=None, eps: float = BCE_EPS) -> float:
    """Mean binary cross-entropy over the masked-in positions."""
    y, p, w = _bce_inputs(labels, probs, mask)
    n = w.sum()
    if n == 0:
        raise DomainError("bce_loss needs at least one masked-in position")
    p = np.clip(p, eps, 1.0 - eps)
    terms = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float((terms * w).sum() / n)


def bce_grad(labels, probs, mask=None, eps: float = BCE_EPS) -> np.ndarray:
    """Gradient of :func:`bce_loss` with respect to ``probs``."""
    y, p, w = _bce_inputs(labels, probs, mask)
    n = w.sum()
    if n == 0:
        raise DomainError("bce_grad needs at least one masked-in position")
    clipped = (p < eps) | (p > 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    g = (pc - y) / (pc * (1.0 - pc)) * w / n
    g[clipped] = 0.0
    return g


def _bce_inputs(labels, probs, mask):
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    w = np.ones_like(p) if mask is None else np.asarray(mask, dtype=np.float64)
    if not (y.shape == p.shape == w.shape):
        raise ShapeError(f"bce shapes differ: {y.shape}, {p.shape}, {w.shape}")
    return y, p, w


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


def init_mlp(in_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN,
             rng: Optional[np.random.Generator] = None,
             scale: float = INIT_SCALE, prefix: str = "") -> Params:
    """Uniform(-scale, scale) init of a ReLU stack ending in one logistic unit."""
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = [in_dim, *hidden, 1]
    params: Params = {}
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}W{k}"] = rng.uniform(-scale, scale, size=(a, b))
        params[f"{prefix}b{k}"] = rng.uniform(-scale, scale, size=b)
    return params


def mlp_layers(params: Params, prefix: str = "") -> list:
    """Return ``[(W, b), ...]`` in layer order."""
    layers = []
    k = 0
    while f"{prefix}W{k}" in params:
        layers.append((params[f"{prefix}W{k}"], params[f"{prefix}b{k}"]))
        k += 1
    if not layers:
        raise ShapeError(f"no MLP layers under prefix {prefix!r}")
    for (w0, _), (w1, _) in zip(layers[:-1], layers[1:]):
        if w0.shape[1] != w1.shape[0]:
            raise ShapeError("MLP layer dimensions do not chain")
    if layers[-1][0].shape[1] != 1:
        raise ShapeError("MLP output dimension must be 1")
    return layers


@dataclass
class MlpCache:
    inputs: list  # input to each layer (post-activation of the previous one)
    pre: list  # pre-activations of each layer
    prob: np.ndarray
    single: bool


def mlp_forward(params: Params, x, prefix: str = "") -> Tuple[np.ndarray, MlpCache]:
    """Forward pass. ``x`` is one input vector or a ``(batch, in_dim)`` matrix.

    Returns probabilities (scalar-shaped for a single vector, ``(batch,)``
    otherwise) and the cache needed by :func:`mlp_backward`.
    """
    layers = mlp_layers(params, prefix)
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != layers[0][0].shape[0]:
        raise ShapeError(f"MLP expects input dim {layers[0][0].shape[0]}, got {a.shape}")
    inputs, pre = [], []
    for k, (w, b) in enumerate(layers):
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if k < len(layers) - 1 else z
    prob = np.clip(_sigmoid(a[:, 0]), _P_MIN, _P_MAX)
    cache = MlpCache(inputs, pre, prob, single)
    return (prob[0] if single else prob), cache


def mlp_backward(params: Params, cache: MlpCache, grad_prob, prefix: str = "") -> Tuple[Params, np.ndarray]:
    """Backpropagate ``dL/dprob`` through the network.

    ``grad_prob`` has the shape of the forward output. Returns parameter
    gradients (keys as in ``params``) and the gradient w.r.t. the input.
    Rows of a batch contribute additively.
    """
    layers = mlp_layers(params, prefix)
    if len(layers) != len(cache.pre) or cache.inputs[0].shape[1] != layers[0][0].shape[0]:
        raise ShapeError("cache does not match params")
    g = np.asarray(grad_prob, dtype=np.float64).reshape(-1)
    if g.shape[0] != cache.prob.shape[0]:
        raise ShapeError("upstream gradient length differs from batch size")
    p = cache.prob
    dz = (g * p * (1.0 - p))[:, None]
    grads: Params = {}
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        grads[f"{prefix}W{k}"] = cache.inputs[k].T @ dz
        grads[f"{prefix}b{k}"] = dz.sum(axis=0)
        da = dz @ w.T
        if k > 0:
            dz = da * (cache.pre[k - 1] > 0.0)
    grad_x = da[0] if cache.single else da
    return grads, grad_x


# ---------------------------------------------------------------------------
# Bi-LSTM with peephole connections
# ---------------------------------------------------------------------------

_GATE_X = ("W_xi", "W_xf", "W_xc", "W_xo")
_GATE_H = ("W_hi", "W_hf", "W_hc", "W_ho")
_GATE_B = ("b_i", "b_f", "b_c", "b_o")
_PEEP = ("W_ci", "W_cf", "W_co")  # diagonal, stored as vectors
DIRECTIONS = ("fwd", "bwd")


def bilstm_param_names(prefix: str = "") -> list:
    names = []
    for d in DIRECTIONS:
        for n in _GATE_X + _GATE_H + _PEEP + _GATE_B:
            names.append(f"{prefix}{d}.{n}")
    return names


def init_bilstm(input_dim: int, hidden_dim: int = 32,
                rng: Optional[np.random.Generator] = None,
                scale: float = INIT_SCALE, prefix: str = "") -> Params:
    rng = rng if rng is not None else np.random.default_rng(0)
    params: Params = {}
    for d in DIRECTIONS:
        for n in _GATE_X:
            params[f"{prefix}{d}.{n}"] = rng.uniform(-scale, scale, size=(input_dim, hidden_dim))
        for n in _GATE_H:
            params[f"{prefix}{d}.{n}"] = rng.uniform(-scale, scale, size=(hidden_dim, hidden_dim))
        for n in _PEEP + _GATE_B:
            params[f"{prefix}{d}.{n}"] = rng.uniform(-scale, scale, size=hidden_dim)
    return params


def bilstm_dims(params: Params, prefix: str = "") -> Tuple[int, int]:
    try:
        w = params[f"{prefix}fwd.W_xi"]
    except KeyError:
        raise ShapeError(f"no Bi-LSTM parameters under prefix {prefix!r}") from None
    d, h = w.shape
    for name in bilstm_param_names(prefix):
        short = name.rsplit(".", 1)[1]
        arr = params[name]
        want = (d, h) if short in _GATE_X else (h, h) if short in _GATE_H else (h,)
        if arr.shape != want:
            raise ShapeError(f"{name} has shape {arr.shape}, expected {want}")
    return d, h


@dataclass
class DirectionState:
    """Per-step activations of one direction, each ``(batch, T, hidden)``."""
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    h: np.ndarray


@dataclass
class BiLstmState:
    x: np.ndarray  # (batch, T, input_dim)
    fwd: DirectionState
    bwd: DirectionState  # stored in reversed time order
    single: bool
    literal_cell: bool = False


def _stack(params, prefix, d):
    p = lambda n: params[f"{prefix}{d}.{n}"]
    wx = np.concatenate([p(n) for n in _GATE_X], axis=1)
    wh = np.concatenate([p(n) for n in _GATE_H], axis=1)
    b = np.concatenate([p(n) for n in _GATE_B])
    return wx, wh, b, p("W_ci"), p("W_cf"), p("W_co")


def _run_direction(params, prefix, d, x, literal_cell):
    wx, wh, b, w_ci, w_cf, w_co = _stack(params, prefix, d)
    bsz, steps, _ = x.shape
    hd = wh.shape[0]
    xa = x @ wx + b  # (B, T, 4H), input contributions for every step at once
    st = {k: np.empty((bsz, steps, hd)) for k in "ifogch"}
    h = np.zeros((bsz, hd))
    c = np.zeros((bsz, hd))
    for t in range(steps):
        a = xa[:, t] + h @ wh
        i = _sigmoid(a[:, :hd] + w_ci * c)
        f = _sigmoid(a[:, hd:2 * hd] + w_cf * c)
        g = np.tanh(a[:, 2 * hd:3 * hd])
        c = f * (x[:, t] if literal_cell else c) + i * g
        o = _sigmoid(a[:, 3 * hd:] + w_co * c)
        h = o * np.tanh(c)
        for k, v in zip("ifogch", (i, f, o, g, c, h)):
            st[k][:, t] = v
    return DirectionState(**st)


def bilstm_forward(params: Params, sequence, prefix: str = "",
                   literal_cell: bool = False) -> Tuple[np.ndarray, BiLstmState]:
    """Run the gated recurrence in both directions and concatenate outputs.

    ``sequence`` is ``(T, input_dim)`` or a batch ``(batch, T, input_dim)`` of
    equal-length sequences. Output has shape ``(..., T, 2 * hidden_dim)`` with
    the forward state first.

    ``literal_cell=True`` replaces ``f * c_prev`` in the cell update with
    ``f * x_t``; this requires ``hidden_dim == input_dim``.
    """
    d, hd = bilstm_dims(params, prefix)
    x = np.asarray(sequence, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] == 0 or x.shape[2] != d:
        raise ShapeError(f"Bi-LSTM expects nonempty (T, {d}) sequences, got {np.shape(sequence)}")
    if literal_cell and d != hd:
        raise ShapeError("literal cell update needs hidden_dim == input_dim")
    fwd = _run_direction(params, prefix, "fwd", x, literal_cell)
    bwd = _run_direction(params, prefix, "bwd", x[:, ::-1], literal_cell)
    out = np.concatenate([fwd.h, bwd.h[:, ::-1]], axis=2)
    state = BiLstmState(x, fwd, bwd, single, literal_cell)
    return (out[0] if single else out), state


def _backprop_direction(params, prefix, d, x, s: DirectionState, dh_out, literal_cell):
    wx, wh, _, w_ci, w_cf, w_co = _stack(params, prefix, d)
    bsz, steps, _ = x.shape
    hd = wh.shape[0]
    da_all = np.empty((bsz, steps, 4 * hd))
    dx = np.zeros_like(x)
    dw_ci = np.zeros(hd)
    dw_cf = np.zeros(hd)
    dw_co = np.zeros(hd)
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((bsz, hd))
    dc_next = np.zeros((bsz, hd))
    zeros = np.zeros((bsz, hd))
    for t in range(steps - 1, -1, -1):
        i, f, o, g, c = s.i[:, t], s.f[:, t], s.o[:, t], s.g[:, t], s.c[:, t]
        c_prev = s.c[:, t - 1] if t > 0 else zeros
        h_prev = s.h[:, t - 1] if t > 0 else zeros
        tc = np.tanh(c)
        dh = dh_out[:, t] + dh_next
        da_o = dh * tc * o * (1.0 - o)
        dc = dh * o * (1.0 - tc * tc) + dc_next + da_o * w_co
        da_i = dc * g * i * (1.0 - i)
        da_f = dc * (x[:, t] if literal_cell else c_prev) * f * (1.0 - f)
        da_g = dc * i * (1.0 - g * g)
        dw_co += (da_o * c).sum(axis=0)
        dw_ci += (da_i * c_prev).sum(axis=0)
        dw_cf += (da_f * c_prev).sum(axis=0)
        da = np.concatenate([da_i, da_f, da_g, da_o], axis=1)
        da_all[:, t] = da
        dwh += h_prev.T @ da
        dh_next = da @ wh.T
        dc_next = da_i * w_ci + da_f * w_cf + (0.0 if literal_cell else dc * f)
        if literal_cell:
            dx[:, t] += dc * f
    dwx = np.einsum("btd,btg->dg", x, da_all)
    db = da_all.sum(axis=(0, 1))
    dx += da_all @ wx.T
    grads = {}
    for k, n in enumerate(_GATE_X):
        grads[f"{prefix}{d}.{n}"] = dwx[:, k * hd:(k + 1) * hd]
    for k, n in enumerate(_GATE_H):
        grads[f"{prefix}{d}.{n}"] = dwh[:, k * hd:(k + 1) * hd]
    for k, n in enumerate(_GATE_B):
        grads[f"{prefix}{d}.{n}"] = db[k * hd:(k + 1) * hd]
    grads[f"{prefix}{d}.W_ci"] = dw_ci
    grads[f"{prefix}{d}.W_cf"] = dw_cf
    grads[f"{prefix}{d}.W_co"] = dw_co
    return grads, dx


def bilstm_backward(params: Params, cache: BiLstmState, grad_h,
                    prefix: str = "") -> Tuple[Params, np.ndarray]:
    """Backpropagation through time for :func:`bilstm_forward`.

    ``grad_h`` matches the forward output shape. Returns parameter gradients
    and the gradient with respect to the input sequence.
    """
    d, hd = bilstm_dims(params, prefix)
    gh = np.asarray(grad_h, dtype=np.float64)
    if cache.single:
        gh = gh[None]
    x = cache.x
    if gh.shape != (x.shape[0], x.shape[1], 2 * hd) or x.shape[2] != d:
        raise ShapeError(f"upstream gradient shape {np.shape(grad_h)} does not match cache")
    g_f, dx_f = _backprop_direction(params, prefix, "fwd", x, cache.fwd, gh[:, :, :hd], cache.literal_cell)
    g_b, dx_b = _backprop_direction(params, prefix, "bwd", x[:, ::-1], cache.bwd,
                                    gh[:, ::-1, hd:], cache.literal_cell)
    grads = {**g_f, **g_b}
    dx = dx_f + dx_b[:, ::-1]
    return grads, (dx[0] if cache.single else dx)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Params, **kwargs) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()}, **kwargs)


def adam_step(state: AdamState, params: Params, grads: Params) -> Tuple[Params, AdamState]:
    """One bias-corrected Adam update, applied in place.

    Parameters missing from ``grads`` are treated as having zero gradient.
    """
    for k, g in grads.items():
        if k not in params or params[k].shape != np.shape(g):
            raise ShapeError(f"gradient {k!r} does not match parameters")
    for k, p in params.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        elif state.m[k].shape != p.shape:
            raise ShapeError(f"optimizer state for {k!r} has wrong shape")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: Tuple[str, int]
    tolerance: Optional[float]

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.max_rel_error < self.tolerance


def grad_check(loss_fn: Callable[[Params], Tuple[float, Params]], params: Params,
               tolerance: Optional[float] = 1e-4, h: float = 1e-5,
               max_coords: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` returns ``(loss, grads)``. With ``max_coords`` set,
    a random subset of that many coordinates is checked, spread over all
    tensors. ``params`` is restored before returning.
    """
    _, analytic = loss_fn(params)
    coords = [(k, j) for k in params for j in range(params[k].size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        # at least one coordinate per tensor, the rest uniformly
        picked = {(k, int(rng.integers(params[k].size))) for k in params}
        rest = rng.choice(len(coords), size=max(max_coords - len(picked), 0), replace=False)
        picked.update(coords[r] for r in rest)
        coords = sorted(picked)
    worst_err, worst = 0.0, ("", -1)
    for k, j in coords:
        flat = params[k].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        lp, _ = loss_fn(params)
        flat[j] = orig - h
        lm, _ = loss_fn(params)
        flat[j] = orig
        num = (lp - lm) / (2.0 * h)
        ana = float(np.asarray(analytic.get(k, np.zeros_like(params[k]))).reshape(-1)[j])
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        if err > worst_err:
            worst_err, worst = err, (k, j)
    return GradCheckReport(worst_err, len(coords), worst, tolerance)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"PERMRANK-CKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, kind: str, params: Params, meta: Optional[dict] = None,
                    seed: Optional[int] = None) -> None:
    """Write a header line of JSON followed by raw little-endian float64 data.

    Tensors are stored in the insertion order of ``params``. Output bytes are
    a pure function of the arguments.
    """
    tensors = []
    offset = 0
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"tensor {name!r} has non-finite entries")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {"kind": kind, "seed": seed, "meta": meta or {}, "tensors": tensors,
              "nbytes": offset}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[str, Params, dict, Optional[int]]:
    """Inverse of :func:`save_checkpoint`: ``(kind, params, meta, seed)``."""
    raw = Path(path).read_bytes()
    first, _, rest = raw.partition(b"\n")
    magic, _, version = first.partition(b" ")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    if version != str(CHECKPOINT_VERSION).encode():
        raise FormatError(f"{path}: unsupported checkpoint version {version.decode()!r}")
    head, _, body = rest.partition(b"\n")
    header = json.loads(head)
    if len(body) != header["nbytes"]:
        raise FormatError(f"{path}: truncated checkpoint body")
    params: Params = {}
    for t in header["tensors"]:
        n = math.prod(t["shape"])
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    return header["kind"], params, header["meta"], header["seed"]
