"""Model assembly: the group-layer classifier and the complex-conv baseline.

Both models are param-dict functions: `init_params` draws a named dict of
float64 arrays (complex kernels split into `_re`/`_im`), `model_forward`
maps a batch of complex bursts to class logits, and `model_backward`
accumulates gradients for every entry of the dict. Checkpoints are a
little-endian binary container carrying the model config and the arrays.

The group-layer classifier: Kaiser STFT -> polar decomposition per bin ->
equivariant mean layer -> invariant distance layer -> bins*filters
flattened into channels -> real conv backbone over the window axis ->
global average pool -> dense softmax head. The baseline: strided complex
conv stack with modReLU on raw samples -> magnitude -> the same backbone.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import layers
from .dsp import stft_array
from .errors import ConfigError, SizeError
from .layers import ManifoldTensor, manifold_from_frames

__all__ = [
    "StftConfig",
    "WfmLayerConfig",
    "ConvStackConfig",
    "ModelConfig",
    "init_params",
    "model_forward",
    "model_backward",
    "loss_and_grads",
    "predict_logits",
    "parameter_count",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_digest",
]

MAGIC = b"CHRR"
VERSION = 1


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 64
    hop: int = 64
    kaiser_beta: float = 8.6


@dataclass(frozen=True)
class WfmLayerConfig:
    filters: int = 8
    kernel: int = 4
    stride: int = 2


@dataclass(frozen=True)
class ConvStackConfig:
    channels: tuple = (32, 64, 64)
    kernel: int = 5
    stride: int = 2


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    num_classes: int
    burst_len: int
    stft: StftConfig = field(default_factory=StftConfig)
    equivariant: WfmLayerConfig = field(default_factory=WfmLayerConfig)
    invariant: WfmLayerConfig = field(default_factory=WfmLayerConfig)
    backbone: ConvStackConfig = field(default_factory=ConvStackConfig)
    complex_stack: ConvStackConfig = field(
        default_factory=lambda: ConvStackConfig(channels=(16, 32, 64, 64), kernel=9)
    )

    def __post_init__(self):
        if self.kind not in ("charrnet", "baseline"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.burst_len < self.stft.window_len:
            raise ConfigError("burst_len must be >= stft window_len")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["stft"] = StftConfig(**doc["stft"])
        for key in ("equivariant", "invariant"):
            doc[key] = WfmLayerConfig(**doc[key])
        for key in ("backbone", "complex_stack"):
            sub = dict(doc[key])
            sub["channels"] = tuple(sub["channels"])
            doc[key] = ConvStackConfig(**sub)
        return ModelConfig(**doc)

    @property
    def n_windows(self) -> int:
        return (self.burst_len - self.stft.window_len) // self.stft.hop + 1

    def wfm_stack_shape(self) -> tuple:
        """(windows, channels) after the equivariant + invariant layers."""
        w = self.n_windows
        eq, inv = self.equivariant, self.invariant
        w1 = (w - eq.kernel) // eq.stride + 1
        if w1 < inv.kernel:
            raise ConfigError("too few windows for the invariant layer kernel")
        w2 = (w1 - inv.kernel) // inv.stride + 1
        return w2, self.stft.window_len * eq.filters * inv.filters


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    """Draw the named parameter dict for a model config."""
    params = {}
    if cfg.kind == "charrnet":
        params["equivariant.logits"] = 0.5 * rng.standard_normal(
            (cfg.equivariant.filters, cfg.equivariant.kernel)
        )
        params["invariant.logits"] = 0.5 * rng.standard_normal(
            (cfg.invariant.filters, cfg.invariant.kernel)
        )
        _, backbone_in = cfg.wfm_stack_shape()
    else:
        c_in = 1
        for i, c_out in enumerate(cfg.complex_stack.channels):
            k = cfg.complex_stack.kernel
            std = np.sqrt(1.0 / (2.0 * c_in * k))
            params[f"cstack.conv{i}.w_re"] = rng.standard_normal((c_out, c_in, k)) * std
            params[f"cstack.conv{i}.w_im"] = rng.standard_normal((c_out, c_in, k)) * std
            params[f"cstack.conv{i}.b_re"] = np.zeros(c_out)
            params[f"cstack.conv{i}.b_im"] = np.zeros(c_out)
            params[f"cstack.conv{i}.modrelu_bias"] = np.zeros(c_out)
            c_in = c_out
        backbone_in = cfg.complex_stack.channels[-1]

    c_in = backbone_in
    for i, c_out in enumerate(cfg.backbone.channels):
        k = cfg.backbone.kernel
        params[f"backbone.conv{i}.w"] = _he(rng, (c_out, c_in, k), c_in * k)
        params[f"backbone.conv{i}.b"] = np.zeros(c_out)
        c_in = c_out
    params["head.w"] = 0.01 * rng.standard_normal((cfg.num_classes, c_in))
    params["head.b"] = np.zeros(cfg.num_classes)
    return params


def parameter_count(params: dict) -> int:
    return int(sum(v.size for v in params.values()))


def _backbone_forward(h: np.ndarray, params: dict, cfg: ModelConfig):
    caches = []
    for i in range(len(cfg.backbone.channels)):
        h, conv_cache = layers.conv1d_forward(
            h, params[f"backbone.conv{i}.w"], params[f"backbone.conv{i}.b"], cfg.backbone.stride
        )
        h, relu_cache = layers.relu_forward(h)
        caches.append((conv_cache, relu_cache))
    pooled, pool_cache = layers.global_avg_pool_forward(h)
    logits, head_cache = layers.dense_forward(pooled, params["head.w"], params["head.b"])
    return logits, {"stages": caches, "pool": pool_cache, "head": head_cache}


def _backbone_backward(cache, g_logits: np.ndarray, grads: dict, cfg: ModelConfig):
    g, g_w, g_b = layers.dense_backward(cache["head"], g_logits)
    grads["head.w"] = g_w
    grads["head.b"] = g_b
    g = layers.global_avg_pool_backward(cache["pool"], g)
    for i in reversed(range(len(cfg.backbone.channels))):
        conv_cache, relu_cache = cache["stages"][i]
        g = layers.relu_backward(relu_cache, g)
        g, g_w, g_b = layers.conv1d_backward(conv_cache, g)
        grads[f"backbone.conv{i}.w"] = g_w
        grads[f"backbone.conv{i}.b"] = g_b
    return g


def _charrnet_forward(x: np.ndarray, params: dict, cfg: ModelConfig):
    frames = stft_array(x, cfg.stft.window_len, cfg.stft.hop, cfg.stft.kaiser_beta)
    mt = manifold_from_frames(frames)
    eq_out, eq_cache = layers.equivariant_forward(
        mt, params["equivariant.logits"], cfg.equivariant.stride
    )
    inv_out, inv_cache = layers.invariant_forward(
        eq_out, params["invariant.logits"], cfg.invariant.stride
    )
    b, w2, n, cf = inv_out.shape
    feats = np.ascontiguousarray(inv_out.reshape(b, w2, n * cf).transpose(0, 2, 1))
    logits, bb_cache = _backbone_forward(feats, params, cfg)
    return logits, {
        "eq": eq_cache, "inv": inv_cache, "bb": bb_cache, "inv_shape": inv_out.shape,
    }


def _charrnet_backward(cache, g_logits: np.ndarray, cfg: ModelConfig) -> dict:
    grads = {}
    g_feats = _backbone_backward(cache["bb"], g_logits, grads, cfg)
    b, w2, n, cf = cache["inv_shape"]
    g_inv = np.ascontiguousarray(g_feats.transpose(0, 2, 1)).reshape(b, w2, n, cf)
    g_inv_logits, g_lam, g_theta = layers.invariant_backward(cache["inv"], g_inv)
    grads["invariant.logits"] = g_inv_logits
    g_eq_logits, _, _ = layers.equivariant_backward(cache["eq"], g_lam, g_theta)
    grads["equivariant.logits"] = g_eq_logits
    return grads


def _baseline_forward(x: np.ndarray, params: dict, cfg: ModelConfig):
    h = x[:, None, :].astype(np.complex128)
    caches = []
    for i in range(len(cfg.complex_stack.channels)):
        w = params[f"cstack.conv{i}.w_re"] + 1j * params[f"cstack.conv{i}.w_im"]
        b = params[f"cstack.conv{i}.b_re"] + 1j * params[f"cstack.conv{i}.b_im"]
        h, conv_cache = layers.conv1d_forward(h, w, b, cfg.complex_stack.stride)
        h, act_cache = layers.modrelu_forward(h, params[f"cstack.conv{i}.modrelu_bias"])
        caches.append((conv_cache, act_cache))
    mag, mag_cache = layers.magnitude_forward(h)
    logits, bb_cache = _backbone_forward(mag, params, cfg)
    return logits, {"cstack": caches, "mag": mag_cache, "bb": bb_cache}


def _baseline_backward(cache, g_logits: np.ndarray, cfg: ModelConfig) -> dict:
    grads = {}
    g = _backbone_backward(cache["bb"], g_logits, grads, cfg)
    g = layers.magnitude_backward(cache["mag"], g)
    for i in reversed(range(len(cfg.complex_stack.channels))):
        conv_cache, act_cache = cache["cstack"][i]
        g, g_bias = layers.modrelu_backward(act_cache, g)
        grads[f"cstack.conv{i}.modrelu_bias"] = g_bias
        g, g_w, g_b = layers.conv1d_backward(conv_cache, g)
        grads[f"cstack.conv{i}.w_re"] = g_w.real
        grads[f"cstack.conv{i}.w_im"] = g_w.imag
        grads[f"cstack.conv{i}.b_re"] = g_b.real
        grads[f"cstack.conv{i}.b_im"] = g_b.imag
    return grads


def model_forward(x: np.ndarray, params: dict, cfg: ModelConfig, want_cache: bool = False):
    """Class logits for a batch of complex bursts [B, L]."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise SizeError("input batch must be [B, L]")
    if x.shape[1] != cfg.burst_len:
        raise SizeError(f"burst length {x.shape[1]} != configured {cfg.burst_len}")
    forward = _charrnet_forward if cfg.kind == "charrnet" else _baseline_forward
    logits, cache = forward(x, params, cfg)
    return (logits, cache) if want_cache else logits


def model_backward(cache, g_logits: np.ndarray, cfg: ModelConfig) -> dict:
    backward = _charrnet_backward if cfg.kind == "charrnet" else _baseline_backward
    return backward(cache, g_logits, cfg)


def loss_and_grads(x: np.ndarray, labels: np.ndarray, params: dict, cfg: ModelConfig):
    """Mean cross-entropy and parameter gradients for one mini-batch."""
    logits, cache = model_forward(x, params, cfg, want_cache=True)
    loss, g_logits = layers.softmax_cross_entropy(logits, labels)
    return loss, model_backward(cache, g_logits, cfg)


def predict_logits(x: np.ndarray, params: dict, cfg: ModelConfig, batch_size: int = 256):
    """Forward pass in evaluation batches."""
    x = np.asarray(x, dtype=np.complex128)
    out = np.empty((x.shape[0], cfg.num_classes))
    for start in range(0, x.shape[0], batch_size):
        out[start : start + batch_size] = model_forward(
            x[start : start + batch_size], params, cfg
        )
    return out


# ---------------------------------------------------------------------------
# checkpoint container


def checkpoint_digest(cfg: ModelConfig) -> bytes:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).digest()


def save_checkpoint(path, cfg: ModelConfig, params: dict) -> None:
    """Write magic, version, config digest + document, then named float64 blocks."""
    config_json = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    digest = checkpoint_digest(cfg)
    chunks = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", len(digest)), digest,
        struct.pack("<I", len(config_json)), config_json,
        struct.pack("<I", len(params)),
    ]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.extend(struct.pack("<I", dim) for dim in arr.shape)
        chunks.append(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelConfig, params dict)."""
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise ConfigError("not a model checkpoint (bad magic)")
    offset = 4
    (version,) = struct.unpack_from("<I", view, offset); offset += 4
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    (digest_len,) = struct.unpack_from("<I", view, offset); offset += 4
    digest = bytes(view[offset : offset + digest_len]); offset += digest_len
    (config_len,) = struct.unpack_from("<I", view, offset); offset += 4
    config_json = bytes(view[offset : offset + config_len]); offset += config_len
    cfg = ModelConfig.from_dict(json.loads(config_json))
    if hashlib.sha256(config_json).digest() != digest:
        raise ConfigError("checkpoint config digest mismatch")
    (n_blocks,) = struct.unpack_from("<I", view, offset); offset += 4
    params = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", view, offset); offset += 2
        name = bytes(view[offset : offset + name_len]).decode(); offset += name_len
        (rank,) = struct.unpack_from("<B", view, offset); offset += 1
        shape = struct.unpack_from(f"<{rank}I", view, offset); offset += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(view, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        params[name] = arr.astype(np.float64)
    return cfg, params
