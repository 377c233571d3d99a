"""Masked GRU regressor with hand-written backpropagation and Nadam.

Layout follows the drift-regression network: a masked stack of GRU layers
whose candidate activation is ReLU (gates stay sigmoid), the last layer's
state at the final valid frame, a tanh dense bottleneck with dropout after
its first layer, and a single sigmoid output. Non-temporal inputs (the
intensity vectors) skip the GRU stack and enter the bottleneck directly.

Parameters live in an ordered ``dict`` of float64 arrays. GRU kernels are
stored gate-stacked in ``z, r, h`` order: ``W`` is ``(n_in, 3u)``, ``U`` is
``(u, 3u)`` and ``b`` is ``(3u,)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DataError, TrainingDivergence

GRU_UNITS = (50, 60, 70, 80, 90, 100)
DENSE_UNITS = (2000, 2000)
DROPOUT = 0.05

_QNN_MAGIC = b"QNN1"


@dataclass(frozen=True)
class Architecture:
    n_features: int = 16
    gru_units: tuple = GRU_UNITS
    dense_units: tuple = DENSE_UNITS
    dropout: float = DROPOUT

    @property
    def temporal(self) -> bool:
        return len(self.gru_units) > 0

    def param_shapes(self) -> list[tuple[str, tuple]]:
        shapes = []
        n_in = self.n_features
        for i, u in enumerate(self.gru_units):
            shapes += [(f"gru{i}.W", (n_in, 3 * u)), (f"gru{i}.U", (u, 3 * u)), (f"gru{i}.b", (3 * u,))]
            n_in = u
        for j, u in enumerate(self.dense_units):
            shapes += [(f"dense{j}.W", (n_in, u)), (f"dense{j}.b", (u,))]
            n_in = u
        shapes += [("out.W", (n_in, 1)), ("out.b", (1,))]
        return shapes

    def n_params(self, temporal_only: bool = False) -> int:
        return sum(int(np.prod(s)) for name, s in self.param_shapes()
                   if not temporal_only or name.startswith("gru"))


def init_params(arch: Architecture, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform input and dense kernels, orthogonal recurrent kernels, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes():
        kind = name.split(".")[1]
        if kind == "b":
            params[name] = np.zeros(shape)
        elif kind == "U":
            u = shape[0]
            params[name] = np.hstack([_orthogonal(rng, u) for _ in range(3)])
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def gru_cell(x_t, h_prev, W, U, b):
    """One GRU step: sigmoid gates, ReLU candidate, ``h = (1-z) h_prev + z h~``."""
    u = U.shape[0]
    a = x_t @ W + b
    zr = expit(a[..., : 2 * u] + h_prev @ U[:, : 2 * u])
    z, r = zr[..., :u], zr[..., u:]
    cand = np.maximum(a[..., 2 * u:] + (r * h_prev) @ U[:, 2 * u:], 0.0)
    return (1.0 - z) * h_prev + z * cand


@dataclass
class _GRUCache:
    # per-step arrays are time-major: (T, B, ...)
    x: np.ndarray
    mask: np.ndarray
    h_prev: np.ndarray
    zr: np.ndarray
    cand_pre: np.ndarray
    rh: np.ndarray

    @property
    def z(self):
        u = self.h_prev.shape[-1]
        return self.zr[..., :u]


def gru_layer_forward(x, mask, W, U, b, layer=0):
    """Run one GRU layer over ``x`` of shape ``(B, T, n_in)``.

    Masked steps copy the previous state forward unchanged. Returns the
    ``(B, T, u)`` state sequence and the cache for backpropagation.
    """
    B, T, _ = x.shape
    u = U.shape[0]
    A = np.ascontiguousarray((x @ W + b).transpose(1, 0, 2))
    Uzr, Uh = np.ascontiguousarray(U[:, : 2 * u]), np.ascontiguousarray(U[:, 2 * u:])
    mask_t = np.ascontiguousarray(mask.T[:, :, None])
    dt = A.dtype
    H = np.empty((T, B, u), dtype=dt)
    h_prev = np.empty((T, B, u), dtype=dt)
    zr_all = np.empty((T, B, 2 * u), dtype=dt)
    cpre_all = np.empty((T, B, u), dtype=dt)
    rh_all = np.empty((T, B, u), dtype=dt)
    h = np.zeros((B, u), dtype=dt)
    for t in range(T):
        a = A[t]
        h_prev[t] = h
        zr = zr_all[t]
        np.matmul(h, Uzr, out=zr)
        zr += a[:, : 2 * u]
        expit(zr, out=zr)
        z = zr[:, :u]
        rh = rh_all[t]
        np.multiply(zr[:, u:], h, out=rh)
        cpre = cpre_all[t]
        np.matmul(rh, Uh, out=cpre)
        cpre += a[:, 2 * u:]
        cand = np.maximum(cpre, 0.0)
        # (1 - z) h + z cand
        cand -= h
        cand *= z
        cand += h
        h = np.where(mask_t[t], cand, h)
        H[t] = h
    if not np.isfinite(h).all() or not np.isfinite(H).all():
        raise TrainingDivergence(f"non-finite state in GRU layer {layer}", layer=layer)
    cache = _GRUCache(x=x, mask=mask, h_prev=h_prev, zr=zr_all, cand_pre=cpre_all, rh=rh_all)
    return H.transpose(1, 0, 2), cache


def gru_layer_backward(dH, dh_last, cache: _GRUCache, W, U):
    """Reverse pass of :func:`gru_layer_forward`.

    Args:
        dH: gradient w.r.t. the state sequence ``(B, T, u)`` or ``None``.
        dh_last: gradient w.r.t. the final state ``(B, u)`` or ``None``.

    Returns:
        ``(dx, dW, dU, db)``.
    """
    x, mask = cache.x, cache.mask
    B, T, n_in = x.shape
    u = U.shape[0]
    Uzr_T = np.ascontiguousarray(U[:, : 2 * u].T)
    Uh_T = np.ascontiguousarray(U[:, 2 * u:].T)
    mask_t = np.ascontiguousarray(mask.T[:, :, None])
    dH_t = None if dH is None else np.ascontiguousarray(dH.transpose(1, 0, 2))
    dA = np.empty((T, B, 3 * u))
    dh = np.zeros((B, u)) if dh_last is None else dh_last.copy()
    for t in range(T - 1, -1, -1):
        if dH_t is not None:
            dh += dH_t[t]
        m = mask_t[t]
        dnew = np.where(m, dh, 0.0)
        zr, hp, cpre = cache.zr[t], cache.h_prev[t], cache.cand_pre[t]
        z, r = zr[:, :u], zr[:, u:]
        da = dA[t]
        dzr = da[:, : 2 * u]
        dcpre = da[:, 2 * u:]
        # d/dz of (1-z) h + z cand is cand - h; cand = relu(cpre)
        np.maximum(cpre, 0.0, out=dcpre)
        dcpre -= hp
        np.multiply(dnew, dcpre, out=dzr[:, :u])
        np.multiply(dnew, z, out=dcpre)
        dcpre *= cpre > 0.0
        drh = dcpre @ Uh_T
        np.multiply(drh, hp, out=dzr[:, u:])
        dzr *= zr
        dzr *= 1.0 - zr
        dhp = dnew * (1.0 - z)
        dhp += drh * r
        dhp += dzr @ Uzr_T
        dh = np.where(m, dhp, dh)
    dA2 = dA.reshape(T * B, 3 * u)
    x_t = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(T * B, n_in)
    dW = x_t.T @ dA2
    db = dA2.sum(axis=0)
    dU = np.empty_like(U)
    dU[:, : 2 * u] = cache.h_prev.reshape(T * B, u).T @ dA2[:, : 2 * u]
    dU[:, 2 * u:] = cache.rh.reshape(T * B, u).T @ dA2[:, 2 * u:]
    dx = (dA2 @ W.T).reshape(T, B, n_in).transpose(1, 0, 2)
    return dx, dW, dU, db


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward pass."""

    inputs: np.ndarray
    mask: np.ndarray | None
    gru_caches: list = field(default_factory=list)
    dense_in: list = field(default_factory=list)
    dense_out: list = field(default_factory=list)
    dropout_masks: list = field(default_factory=list)
    head_in: np.ndarray | None = None
    y_hat: np.ndarray | None = None
    train: bool = False

    def relu_pattern(self) -> np.ndarray:
        """Boolean on/off pattern of every candidate ReLU at valid steps."""
        parts = []
        for c in self.gru_caches:
            parts.append((c.cand_pre > 0.0)[c.mask.T].ravel())
        return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def _valid_length(mask):
    steps = np.flatnonzero(mask.any(axis=0))
    return int(steps[-1]) + 1


def forward(params, arch: Architecture, x, mask=None, train=False, rng=None,
            dropout_masks=None):
    """Predict amplified drift for a batch.

    Args:
        x: ``(B, T, n_features)`` sequences for temporal architectures, or
            ``(B, n_features)`` vectors otherwise. A single sample without the
            batch axis is accepted.
        mask: ``(B, T)`` validity mask; all steps valid when omitted.
        train: enables dropout. Masks come from ``rng`` unless given
            explicitly through ``dropout_masks``.

    Computation runs in the widest float type among inputs and parameters,
    so casting both to ``np.longdouble`` gives an extended-precision pass.

    Returns:
        ``(y_hat, trace)`` with ``y_hat`` of shape ``(B,)`` in ``(0, 1)``.
    """
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(float)
    if arch.temporal:
        if x.ndim == 2:
            x = x[None]
            mask = None if mask is None else np.asarray(mask)[None]
        mask = np.ones(x.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != x.shape[:2]:
            raise DataError(f"mask shape {mask.shape} does not match input {x.shape[:2]}")
        if not mask.any(axis=1).all():
            raise DataError("every sample needs at least one unmasked frame")
        T = _valid_length(mask)
        x, mask = x[:, :T], mask[:, :T]
    elif x.ndim == 1:
        x = x[None]
    if x.shape[-1] != arch.n_features:
        raise DataError(f"expected {arch.n_features} input features, got {x.shape[-1]}")
    trace = ForwardTrace(inputs=x, mask=mask, train=train)
    a = x
    for i, _ in enumerate(arch.gru_units):
        a, cache = gru_layer_forward(a, mask, params[f"gru{i}.W"], params[f"gru{i}.U"],
                                     params[f"gru{i}.b"], layer=i)
        trace.gru_caches.append(cache)
    if arch.temporal:
        # masked steps carry the state, so the last column is the last valid state
        a = a[:, -1]
    for j, _ in enumerate(arch.dense_units):
        trace.dense_in.append(a)
        a = np.tanh(a @ params[f"dense{j}.W"] + params[f"dense{j}.b"])
        trace.dense_out.append(a)
        keep = None
        if train and j == 0 and arch.dropout > 0:
            if dropout_masks is not None:
                keep = dropout_masks[0]
            else:
                if rng is None:
                    raise ValueError("train-mode forward needs an rng for dropout")
                keep = rng.random(a.shape) >= arch.dropout
            a = a * keep / (1.0 - arch.dropout)
        trace.dropout_masks.append(keep)
    trace.head_in = a
    logit = a @ params["out.W"] + params["out.b"]
    y_hat = expit(logit[:, 0])
    if not np.isfinite(y_hat).all():
        raise TrainingDivergence("non-finite prediction", layer="out")
    trace.y_hat = y_hat
    return y_hat, trace


def mae_loss(y_hat, y) -> float:
    """Mean absolute error over the batch."""
    return float(np.mean(np.abs(np.asarray(y_hat, dtype=float) - np.asarray(y, dtype=float))))


def backward(params, arch: Architecture, trace: ForwardTrace, y):
    """Gradient of the batch-mean absolute error w.r.t. every parameter.

    The subgradient of ``|e|`` at ``e = 0`` is taken as 0, and so is the ReLU
    derivative at 0.
    """
    y = np.broadcast_to(np.asarray(y, dtype=float), trace.y_hat.shape)
    B = y.size
    grads = {}
    dy = np.sign(trace.y_hat - y) / B
    dlogit = (dy * trace.y_hat * (1.0 - trace.y_hat))[:, None]
    grads["out.W"] = trace.head_in.T @ dlogit
    grads["out.b"] = dlogit.sum(axis=0)
    da = dlogit @ params["out.W"].T
    for j in range(len(arch.dense_units) - 1, -1, -1):
        keep = trace.dropout_masks[j]
        if keep is not None:
            da = da * keep / (1.0 - arch.dropout)
        dz = da * (1.0 - trace.dense_out[j] ** 2)
        grads[f"dense{j}.W"] = trace.dense_in[j].T @ dz
        grads[f"dense{j}.b"] = dz.sum(axis=0)
        da = dz @ params[f"dense{j}.W"].T
    dH, dh_last = None, da
    for i in range(len(arch.gru_units) - 1, -1, -1):
        W, U = params[f"gru{i}.W"], params[f"gru{i}.U"]
        dx, grads[f"gru{i}.W"], grads[f"gru{i}.U"], grads[f"gru{i}.b"] = gru_layer_backward(
            dH, dh_last, trace.gru_caches[i], W, U)
        dH, dh_last = dx, None
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDivergence(f"non-finite gradient for {name}", layer=name)
    return {name: grads[name] for name in params}


@dataclass
class NadamState:
    m: dict
    v: dict
    t: int = 0
    _scratch: dict = field(default_factory=dict, repr=False)

    @classmethod
    def fresh(cls, params):
        return cls(m=zeros_like_params(params), v=zeros_like_params(params), t=0)

    def buffers(self, name, like):
        if name not in self._scratch:
            self._scratch[name] = (np.empty_like(like), np.empty_like(like))
        return self._scratch[name]


def nadam_step(params, grads, state: NadamState, lr=2e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Apply one Nesterov-Adam update in place and advance ``state.t``.

    With step ``t`` (1-based)::

        m = b1 m + (1 - b1) g
        v = b2 v + (1 - b2) g^2
        m_hat = m / (1 - b1^(t+1)),  v_hat = v / (1 - b2^t)
        theta -= lr (b1 m_hat + (1 - b1) g / (1 - b1^t)) / (sqrt(v_hat) + eps)
    """
    state.t += 1
    t = state.t
    c_m = 1.0 - beta1 ** (t + 1)
    c_g = 1.0 - beta1 ** t
    c_v = 1.0 - beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        num, denom = state.buffers(name, theta)
        m *= beta1
        np.multiply(g, 1.0 - beta1, out=num)
        m += num
        v *= beta2
        np.multiply(g, g, out=num)
        num *= 1.0 - beta2
        v += num
        np.multiply(v, 1.0 / c_v, out=denom)
        np.sqrt(denom, out=denom)
        denom += eps
        np.multiply(m, beta1 / c_m, out=num)
        num += ((1.0 - beta1) / c_g) * g
        num *= lr
        num /= denom
        theta -= num
        if not np.isfinite(theta).all():
            raise TrainingDivergence(f"non-finite update for {name}", layer=name)
    return params, state


def predict(params, arch: Architecture, x, mask=None, batch_size=256) -> np.ndarray:
    """Eval-mode predictions in fixed-order batches."""
    x = np.asarray(x, dtype=float)
    out = []
    for lo in range(0, x.shape[0], batch_size):
        m = None if mask is None else mask[lo: lo + batch_size]
        out.append(forward(params, arch, x[lo: lo + batch_size], m)[0])
    return np.concatenate(out) if out else np.zeros(0)


def _arch_header(arch: Architecture) -> bytes:
    ints = [arch.n_features, len(arch.gru_units), *arch.gru_units,
            len(arch.dense_units), *arch.dense_units]
    return _QNN_MAGIC + struct.pack(f"<{len(ints)}I", *ints) + struct.pack("<d", arch.dropout)


def save_checkpoint(path, params, arch: Architecture, meta: dict | None = None) -> None:
    """Write a ``QNN1`` checkpoint plus a ``.json`` sidecar next to it."""
    path = Path(path)
    body = b"".join(np.ascontiguousarray(params[name], dtype="<f8").tobytes()
                    for name, _ in arch.param_shapes())
    path.write_bytes(_arch_header(arch) + body)
    sidecar = {"architecture": asdict(arch), "n_params": arch.n_params()}
    sidecar.update(meta or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=list))


def load_checkpoint(path) -> tuple[dict, Architecture, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _QNN_MAGIC:
        raise DataError(f"{path}: not a QNN1 checkpoint")
    off = 4

    def take(n):
        nonlocal off
        vals = struct.unpack_from(f"<{n}I", raw, off)
        off += 4 * n
        return vals

    n_features, n_gru = take(2)
    gru = take(n_gru)
    (n_dense,) = take(1)
    dense = take(n_dense)
    (dropout,) = struct.unpack_from("<d", raw, off)
    off += 8
    arch = Architecture(n_features=n_features, gru_units=tuple(gru), dense_units=tuple(dense),
                        dropout=dropout)
    flat = np.frombuffer(raw, dtype="<f8", offset=off)
    if flat.size != arch.n_params():
        raise DataError(f"{path}: payload holds {flat.size} values, architecture needs {arch.n_params()}")
    params, pos = {}, 0
    for name, shape in arch.param_shapes():
        n = int(np.prod(shape))
        params[name] = flat[pos: pos + n].reshape(shape).astype(float)
        pos += n
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return params, arch, meta
