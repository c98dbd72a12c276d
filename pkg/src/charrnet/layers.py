"""Neural layers with hand-derived gradients.

Two families:

* Group layers over manifold-valued spectrogram tensors: an equivariant
  layer that strides a learned weighted mean along the window axis, and an
  invariant layer that measures manifold distances from each window in a
  receptive field to that field's mean. Weights are softmax-normalized
  logits, which keeps them convex under unconstrained optimization.
* Conventional layers for the baseline and the shared real backbone:
  strided 1-D convolution (real or complex), modReLU, magnitude, ReLU,
  global average pooling, dense, and softmax cross-entropy.

All forwards return (output, cache); backwards consume the cache plus the
upstream gradient and return gradients for parameters and inputs. Input
gradients for manifold tensors are expressed in tangent coordinates
(d/d log r, d/d theta). Everything is float64/complex128.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeError
from .liegroup import EPS_RES, wrap_angle

__all__ = [
    "EPS_DIST",
    "ManifoldTensor",
    "softmax_rows",
    "convex_weights",
    "equivariant_forward",
    "equivariant_backward",
    "invariant_forward",
    "invariant_backward",
    "conv1d_forward",
    "conv1d_backward",
    "modrelu_forward",
    "modrelu_backward",
    "magnitude_forward",
    "magnitude_backward",
    "relu_forward",
    "relu_backward",
    "global_avg_pool_forward",
    "global_avg_pool_backward",
    "dense_forward",
    "dense_backward",
    "softmax_cross_entropy",
]

# smoothing inside the distance so coincident points keep finite gradients
EPS_DIST = 1e-12
_TINY = 1e-30


@dataclass(frozen=True)
class ManifoldTensor:
    """Grid of manifold points, shape [W, N, C] or batched [B, W, N, C]."""

    r: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        theta = np.asarray(self.theta, dtype=np.float64)
        if r.shape != theta.shape:
            raise SizeError("r and theta must have identical shapes")
        if r.ndim not in (3, 4):
            raise SizeError("manifold tensor must be [W, N, C] or [B, W, N, C]")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", theta)

    @property
    def batched(self) -> bool:
        return self.r.ndim == 4


def manifold_from_frames(frames: np.ndarray, eps_r: float = 1e-12) -> ManifoldTensor:
    """Polar-decompose complex spectra [..., W, N] into a 1-channel tensor."""
    mag = np.abs(frames)
    clamped = mag < eps_r
    r = np.where(clamped, eps_r, mag)
    theta = np.where(clamped, 0.0, np.angle(frames))
    return ManifoldTensor(r[..., None], theta[..., None])


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def convex_weights(logits: np.ndarray) -> np.ndarray:
    """Per-filter convex kernel weights from unconstrained logits [F, K]."""
    return softmax_rows(np.asarray(logits, dtype=np.float64))


def _softmax_rows_backward(w: np.ndarray, gw: np.ndarray) -> np.ndarray:
    return w * (gw - (w * gw).sum(axis=-1, keepdims=True))


def _as_batched(t: ManifoldTensor):
    if t.batched:
        return t.r, t.theta, True
    return t.r[None], t.theta[None], False


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # [B, W, N, C] -> [B, W', N, C, K]
    if x.shape[1] < kernel:
        raise SizeError(f"need at least {kernel} windows, got {x.shape[1]}")
    return np.lib.stride_tricks.sliding_window_view(x, kernel, axis=1)[:, ::stride]


def _wfm_conv_forward(lam: np.ndarray, theta: np.ndarray, logits: np.ndarray, stride: int):
    """Strided weighted mean along the window axis, per bin and channel.

    lam, theta: [B, W, N, C]; logits: [F, K]. Returns per-filter means
    lam_m, theta_m: [B, W', N, C, F] plus the cache for both backward
    passes and the invariant layer's distance stage.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    kernel = logits.shape[1]
    w = convex_weights(logits)
    lamw = _windows(lam, kernel, stride)
    thetaw = _windows(theta, kernel, stride)
    sinw = np.sin(thetaw)
    cosw = np.cos(thetaw)
    lam_m = np.einsum("fk,bwnck->bwncf", w, lamw)
    s = np.einsum("fk,bwnck->bwncf", w, sinw)
    c = np.einsum("fk,bwnck->bwncf", w, cosw)
    res2 = s * s + c * c
    degenerate = np.sqrt(res2) < EPS_RES
    theta_m = np.where(degenerate, 0.0, wrap_angle(np.arctan2(s, c)))
    cache = {
        "w": w, "stride": stride, "in_shape": lam.shape,
        "lamw": lamw, "thetaw": thetaw, "sinw": sinw, "cosw": cosw,
        "s": s, "c": c, "res2": res2, "degenerate": degenerate,
    }
    return lam_m, theta_m, cache


def _wfm_conv_backward(cache, g_lam_m: np.ndarray, g_theta_m: np.ndarray):
    """Gradients of the strided mean w.r.t. logits and (log r, theta) inputs."""
    w = cache["w"]
    stride = cache["stride"]
    lamw, sinw, cosw = cache["lamw"], cache["sinw"], cache["cosw"]
    s, c, res2 = cache["s"], cache["c"], cache["res2"]
    inv = np.where(cache["degenerate"], 0.0, 1.0 / np.maximum(res2, _TINY))
    gs = g_theta_m * c * inv
    gc = -g_theta_m * s * inv

    g_weights = (
        np.einsum("bwncf,bwnck->fk", g_lam_m, lamw)
        + np.einsum("bwncf,bwnck->fk", gs, sinw)
        + np.einsum("bwncf,bwnck->fk", gc, cosw)
    )
    g_logits = _softmax_rows_backward(w, g_weights)

    a_lam = np.einsum("bwncf,fk->bwnck", g_lam_m, w)
    a_s = np.einsum("bwncf,fk->bwnck", gs, w)
    a_c = np.einsum("bwncf,fk->bwnck", gc, w)
    g_lam_in = np.zeros(cache["in_shape"])
    g_theta_in = np.zeros(cache["in_shape"])
    n_out = lamw.shape[1]
    for k in range(w.shape[1]):
        sl = slice(k, k + stride * (n_out - 1) + 1, stride)
        g_lam_in[:, sl] += a_lam[..., k]
        g_theta_in[:, sl] += a_s[..., k] * cosw[..., k] - a_c[..., k] * sinw[..., k]
    return g_logits, g_lam_in, g_theta_in


def equivariant_forward(x: ManifoldTensor, logits: np.ndarray, stride: int):
    """Strided weighted Fréchet mean along windows; filters multiply channels.

    [.., W, N, C] -> [.., W', N, C*F] with W' = (W - K)//stride + 1. Output
    transforms exactly like the input under any per-bin group action.
    """
    r, theta, batched = _as_batched(x)
    lam = np.log(r)
    lam_m, theta_m, cache = _wfm_conv_forward(lam, theta, np.asarray(logits, float), stride)
    b, wp, n, cin, f = lam_m.shape
    out = ManifoldTensor(
        np.exp(lam_m).reshape(b, wp, n, cin * f),
        theta_m.reshape(b, wp, n, cin * f),
    )
    cache["out_lam"] = lam_m
    cache["batched"] = batched
    if not batched:
        out = ManifoldTensor(out.r[0], out.theta[0])
    return out, cache


def equivariant_backward(cache, g_lam_out: np.ndarray, g_theta_out: np.ndarray):
    """Backward through the equivariant layer.

    Upstream and returned input gradients are in tangent coordinates
    (d/d log r, d/d theta). Returns (g_logits, g_lam_in, g_theta_in).
    """
    shape = cache["out_lam"].shape
    if not cache["batched"]:
        g_lam_out, g_theta_out = g_lam_out[None], g_theta_out[None]
    g_logits, g_lam_in, g_theta_in = _wfm_conv_backward(
        cache, g_lam_out.reshape(shape), g_theta_out.reshape(shape)
    )
    if not cache["batched"]:
        g_lam_in, g_theta_in = g_lam_in[0], g_theta_in[0]
    return g_logits, g_lam_in, g_theta_in


def invariant_forward(x: ManifoldTensor, logits: np.ndarray, stride: int):
    """Mean manifold distance from each window in a receptive field to its wFM.

    [.., W, N, C] -> real [.., W', N, C*F]. The output is unchanged by any
    per-bin group action on the input: log-radius differences cancel the
    scaling and wrapped angle differences cancel the rotation.
    """
    r, theta, batched = _as_batched(x)
    lam = np.log(r)
    lam_m, theta_m, cache = _wfm_conv_forward(lam, theta, np.asarray(logits, float), stride)
    u = cache["lamw"][..., None] - lam_m[..., None, :]          # [B,W',N,C,K,F]
    v = wrap_angle(cache["thetaw"][..., None] - theta_m[..., None, :])
    d = np.sqrt(u * u + v * v + EPS_DIST)
    y = d.mean(axis=-2)
    b, wp, n, cin, f = y.shape
    cache.update({"u": u, "v": v, "d": d, "batched": batched, "out_shape": y.shape})
    out = y.reshape(b, wp, n, cin * f)
    if not batched:
        out = out[0]
    return out, cache


def invariant_backward(cache, g_out: np.ndarray):
    """Backward through the invariant layer; returns (g_logits, g_lam, g_theta)."""
    if not cache["batched"]:
        g_out = g_out[None]
    g_y = g_out.reshape(cache["out_shape"])
    u, v, d = cache["u"], cache["v"], cache["d"]
    kernel = u.shape[-2]
    gd = g_y[..., None, :] / kernel
    gu = gd * u / d
    gv = gd * v / d
    g_lam_m = -gu.sum(axis=-2)
    g_theta_m = -gv.sum(axis=-2)
    g_logits, g_lam_in, g_theta_in = _wfm_conv_backward(cache, g_lam_m, g_theta_m)
    stride = cache["stride"]
    n_out = u.shape[1]
    gu_k = gu.sum(axis=-1)
    gv_k = gv.sum(axis=-1)
    for k in range(kernel):
        sl = slice(k, k + stride * (n_out - 1) + 1, stride)
        g_lam_in[:, sl] += gu_k[..., k]
        g_theta_in[:, sl] += gv_k[..., k]
    if not cache["batched"]:
        g_lam_in, g_theta_in = g_lam_in[0], g_theta_in[0]
    return g_logits, g_lam_in, g_theta_in


# ---------------------------------------------------------------------------
# conventional layers


def _same_pad(t: int, kernel: int, stride: int):
    out_len = -(-t // stride)
    total = max((out_len - 1) * stride + kernel - t, 0)
    left = total // 2
    return out_len, left, total - left


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """Strided 1-D convolution with 'same' padding.

    x: [B, C, T]; w: [F, C, K]; b: [F]. Works for real and complex dtypes.
    """
    batch, _, t = x.shape
    f, _, kernel = w.shape
    out_len, left, right = _same_pad(t, kernel, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    y = np.zeros((batch, f, out_len), dtype=np.result_type(x, w))
    for k in range(kernel):
        xs = xp[:, :, k : k + stride * (out_len - 1) + 1 : stride]
        y += np.einsum("fc,bct->bft", w[:, :, k], xs)
    y += b[None, :, None]
    return y, {"xp": xp, "w": w, "stride": stride, "t": t, "left": left}


def conv1d_backward(cache, g: np.ndarray):
    """Returns (g_x, g_w, g_b); complex parameters get real-pair gradients
    packed as complex numbers (dL/d re + i dL/d im)."""
    xp, w, stride = cache["xp"], cache["w"], cache["stride"]
    f, c, kernel = w.shape
    out_len = g.shape[-1]
    g_w = np.zeros_like(w)
    g_xp = np.zeros_like(xp)
    wc = np.conj(w)
    for k in range(kernel):
        sl = slice(k, k + stride * (out_len - 1) + 1, stride)
        xs = xp[:, :, sl]
        g_w[:, :, k] = np.einsum("bft,bct->fc", g, np.conj(xs))
        g_xp[:, :, sl] += np.einsum("fc,bft->bct", wc[:, :, k], g)
    g_b = g.sum(axis=(0, 2))
    g_x = g_xp[:, :, cache["left"] : cache["left"] + cache["t"]]
    return g_x, g_w, g_b


def modrelu_forward(z: np.ndarray, bias: np.ndarray):
    """modReLU: scale z to magnitude |z| + bias when positive, else zero.

    bias is per-channel (axis 1 of [B, C, T ]).
    """
    m = np.maximum(np.abs(z), _TINY)
    gate = (m + bias[None, :, None]) > 0
    scale = np.where(gate, 1.0 + bias[None, :, None] / m, 0.0)
    return z * scale, {"z": z, "m": m, "gate": gate, "scale": scale, "bias": bias}


def modrelu_backward(cache, g: np.ndarray):
    z, m, gate, scale = cache["z"], cache["m"], cache["gate"], cache["scale"]
    bias = cache["bias"]
    proj = np.real(g * np.conj(z))  # dL/d|z| direction
    g_z = np.where(gate, g * scale - (bias[None, :, None] / (m ** 3)) * proj * z, 0.0)
    g_bias = np.where(gate, proj / m, 0.0).sum(axis=(0, 2))
    return g_z, g_bias


def magnitude_forward(z: np.ndarray):
    m = np.maximum(np.abs(z), _TINY)
    return m, {"z": z, "m": m}


def magnitude_backward(cache, g: np.ndarray):
    return g * cache["z"] / cache["m"]


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, {"mask": mask}


def relu_backward(cache, g: np.ndarray):
    return g * cache["mask"]


def global_avg_pool_forward(x: np.ndarray):
    return x.mean(axis=-1), {"t": x.shape[-1]}


def global_avg_pool_backward(cache, g: np.ndarray):
    return np.repeat(g[..., None], cache["t"], axis=-1) / cache["t"]


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w.T + b, {"x": x, "w": w}


def dense_backward(cache, g: np.ndarray):
    g_x = g @ cache["w"]
    g_w = g.T @ cache["x"]
    g_b = g.sum(axis=0)
    return g_x, g_w, g_b


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch via a stable log-sum-exp.

    Returns (loss, g_logits) with g_logits already divided by batch size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(batch), labels]))
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    probs[np.arange(batch), labels] -= 1.0
    return loss, probs / batch
