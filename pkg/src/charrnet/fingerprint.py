"""Synthetic transmitter population and labeled dataset generation.

Each device is a perturbed copy of a shared nominal low-pass biquad
cascade: manufacturing tolerance is modeled as small independent jitter on
every pole's radius and angle. Bursts are OFDM-like waveforms (QPSK on a
subset of subcarriers, cyclic prefix per symbol) filtered by the device
cascade, optionally passed through a multipath channel realization, and
landed in AWGN.

A dataset is a directory: `meta.json` (generation parameters and record
accounting), `records.bin` (little-endian float32 interleaved I/Q, fixed
burst length), and `labels.csv` (record_index, device_id, channel_tag,
split). Every record is reproducible from (seed, record_index).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.signal

from .channel import (
    AwgnSpec,
    GeometrySpec,
    ReflectorGeometry,
    add_awgn,
    plan_geometry,
    realize_geometry_channel,
)
from .dsp import ComplexSignal, convolve, ifft_array
from .errors import ConfigError, SizeError

__all__ = [
    "DeviceFingerprint",
    "BurstSpec",
    "DatasetConfig",
    "DatasetRecord",
    "nominal_lowpass_cascade",
    "make_population",
    "generate_burst",
    "apply_fingerprint",
    "fingerprint_response",
    "parse_channel_tag",
    "build_dataset",
    "load_dataset",
    "regenerate_record",
]

logger = logging.getLogger(__name__)

MAX_POLE_RADIUS = 0.99

_POP_STREAM = 0x706F70  # 'pop'
_GEO_STREAM = 0x67656F  # 'geo'

_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


@dataclass(frozen=True)
class DeviceFingerprint:
    """Per-device IIR cascade; rows are (b0, b1, b2, a1, a2)."""

    device_id: int
    biquad_sections: np.ndarray

    def __post_init__(self):
        sections = np.asarray(self.biquad_sections, dtype=np.float64)
        if sections.ndim != 2 or sections.shape[1] != 5:
            raise SizeError("biquad sections must be an (S, 5) array")
        for b0, b1, b2, a1, a2 in sections:
            roots = np.roots([1.0, a1, a2])
            if np.any(np.abs(roots) > MAX_POLE_RADIUS + 1e-12):
                raise ValueError("unstable biquad section: pole outside radius 0.99")
        object.__setattr__(self, "biquad_sections", sections)


@dataclass(frozen=True)
class BurstSpec:
    """OFDM-like burst layout."""

    n_subcarriers: int = 64
    cp_len: int = 16
    n_symbols: int = 10
    constellation: str = "qpsk"
    active_subcarriers: int = 52

    def __post_init__(self):
        n = self.n_subcarriers
        if n < 2 or (n & (n - 1)) != 0:
            raise ConfigError("n_subcarriers must be a power of two >= 2")
        if not (0 <= self.cp_len <= n):
            raise ConfigError("cp_len must lie in [0, n_subcarriers]")
        if self.n_symbols < 1:
            raise ConfigError("n_symbols must be >= 1")
        if self.constellation != "qpsk":
            raise ConfigError(f"unsupported constellation {self.constellation!r}")
        if self.active_subcarriers % 2 or not (2 <= self.active_subcarriers < n):
            raise ConfigError("active_subcarriers must be even and < n_subcarriers")

    @property
    def burst_len(self) -> int:
        return self.n_symbols * (self.n_subcarriers + self.cp_len)


@dataclass(frozen=True)
class DatasetRecord:
    """One labeled burst."""

    burst: ComplexSignal
    device_id: int
    channel_tag: str
    split: str


@dataclass(frozen=True)
class DatasetConfig:
    """Everything needed to generate a dataset deterministically."""

    n_devices: int = 10
    train_bursts_per_device: int = 200
    test_bursts_per_device: int = 50
    train_tags: tuple = ("pristine",)
    test_tags: tuple = (
        "pristine", "nLOS10", "LOS10", "nLOS30", "LOS100", "nLOS400", "LOS400",
    )
    snr_db: float = 20.0
    burst: BurstSpec = field(default_factory=BurstSpec)
    pole_jitter_ppm: float = 5000.0
    cutoff: float = 0.4  # fraction of Nyquist
    sections: int = 2
    max_delay_samples: int = 16
    attn_db_range: tuple = (-15.0, -5.0)
    position_jitter: float = 0.25
    max_reflectors: int = 50

    def __post_init__(self):
        if self.n_devices < 1:
            raise ConfigError("n_devices must be >= 1")
        for tag in tuple(self.train_tags) + tuple(self.test_tags):
            parse_channel_tag(tag, self)  # raises on unknown tags


def nominal_lowpass_cascade(cutoff: float = 0.4, sections: int = 2) -> np.ndarray:
    """Butterworth-style low-pass cascade via the bilinear cookbook biquad.

    `cutoff` is the -3 dB point as a fraction of Nyquist. Section Q values
    are those of a 2*sections-order Butterworth response.
    """
    if not (0 < cutoff < 1):
        raise ConfigError("cutoff must lie in (0, 1) of Nyquist")
    if sections < 1:
        raise ConfigError("sections must be >= 1")
    w0 = np.pi * cutoff
    cos_w0, sin_w0 = np.cos(w0), np.sin(w0)
    out = np.zeros((sections, 5))
    for j in range(sections):
        q = 1.0 / (2.0 * np.cos(np.pi * (2 * j + 1) / (4 * sections)))
        alpha = sin_w0 / (2.0 * q)
        a0 = 1.0 + alpha
        out[j] = [
            (1.0 - cos_w0) / 2.0 / a0,
            (1.0 - cos_w0) / a0,
            (1.0 - cos_w0) / 2.0 / a0,
            -2.0 * cos_w0 / a0,
            (1.0 - alpha) / a0,
        ]
    return out


def _poles_of(section) -> tuple:
    # complex-conjugate pole pair (radius, angle) of z^2 + a1 z + a2
    _, _, _, a1, a2 = section
    radius = math.sqrt(a2)
    angle = math.acos(min(1.0, max(-1.0, -a1 / (2.0 * radius))))
    return radius, angle


def make_population(
    n_devices: int, pole_jitter_ppm: float, seed: int, cutoff: float = 0.4, sections: int = 2
) -> list:
    """Device fingerprints as independently pole-jittered cascade copies.

    Every pole's radius and angle deviate by a relative factor drawn from
    U[-jitter, +jitter] with jitter = pole_jitter_ppm * 1e-6, per device
    and per section. Deterministic per (seed, device_id).
    """
    if n_devices < 1:
        raise ConfigError("n_devices must be >= 1")
    nominal = nominal_lowpass_cascade(cutoff, sections)
    jitter = pole_jitter_ppm * 1e-6
    population = []
    for device_id in range(n_devices):
        rng = np.random.default_rng([seed, _POP_STREAM, device_id])
        sections_out = nominal.copy()
        for s in range(nominal.shape[0]):
            radius, angle = _poles_of(nominal[s])
            radius = radius * (1.0 + rng.uniform(-jitter, jitter))
            angle = angle * (1.0 + rng.uniform(-jitter, jitter))
            if radius > MAX_POLE_RADIUS:
                logger.warning(
                    "device %d section %d pole radius %.6f clamped to %.2f",
                    device_id, s, radius, MAX_POLE_RADIUS,
                )
                radius = MAX_POLE_RADIUS
            sections_out[s, 3] = -2.0 * radius * np.cos(angle)
            sections_out[s, 4] = radius * radius
        population.append(DeviceFingerprint(device_id, sections_out))
    return population


def _subcarrier_slots(spec: BurstSpec) -> np.ndarray:
    # active bins straddle DC symmetrically: 1..half and n-half..n-1
    half = spec.active_subcarriers // 2
    n = spec.n_subcarriers
    return np.concatenate([np.arange(1, half + 1), np.arange(n - half, n)])


def generate_burst(spec: BurstSpec, rng: np.random.Generator) -> ComplexSignal:
    """Random QPSK OFDM burst, cyclic-prefixed, normalized to unit power."""
    slots = _subcarrier_slots(spec)
    symbols = _QPSK[rng.integers(0, 4, size=(spec.n_symbols, slots.size))]
    grid = np.zeros((spec.n_symbols, spec.n_subcarriers), dtype=np.complex128)
    grid[:, slots] = symbols
    time = ifft_array(grid)
    with_cp = np.concatenate([time[:, -spec.cp_len:], time], axis=1) if spec.cp_len else time
    samples = with_cp.reshape(-1)
    samples = samples / np.sqrt(np.mean(np.abs(samples) ** 2))
    return ComplexSignal(samples)


def apply_fingerprint(burst: ComplexSignal, fp: DeviceFingerprint) -> ComplexSignal:
    """Run the burst through the device cascade (same filter on I and Q)."""
    s = fp.biquad_sections
    sos = np.column_stack([s[:, :3], np.ones(s.shape[0]), s[:, 3:]])
    return ComplexSignal(scipy.signal.sosfilt(sos, burst.samples), burst.sample_rate_hz)


def fingerprint_response(fp: DeviceFingerprint, n_points: int = 512) -> np.ndarray:
    """Complex frequency response of the cascade at n uniform frequencies."""
    w = 2.0 * np.pi * np.arange(n_points) / n_points
    z1 = np.exp(-1j * w)
    z2 = z1 * z1
    resp = np.ones(n_points, dtype=np.complex128)
    for b0, b1, b2, a1, a2 in fp.biquad_sections:
        resp = resp * (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
    return resp


_TAG_RE = re.compile(r"(n?LOS)(\d+)")


def parse_channel_tag(tag: str, cfg: DatasetConfig) -> Optional[GeometrySpec]:
    """Map a channel tag to its geometry; "pristine" maps to no channel.

    Reflector counts are capped at cfg.max_reflectors (tag names keep their
    nominal counts).
    """
    if tag == "pristine":
        return None
    m = _TAG_RE.fullmatch(tag)
    if not m:
        raise ConfigError(f"unknown channel tag {tag!r}")
    n_reflectors = min(int(m.group(2)), cfg.max_reflectors)
    los = m.group(1) == "LOS"
    if n_reflectors == 0 and not los:
        raise ConfigError(f"channel tag {tag!r} has no propagation path")
    return GeometrySpec(
        n_reflectors=n_reflectors,
        line_of_sight=los,
        max_delay_samples=cfg.max_delay_samples,
        attn_db_range=tuple(cfg.attn_db_range),
        position_jitter=cfg.position_jitter,
    )


def _record_layout(cfg: DatasetConfig) -> list:
    """Global record order: (split, tag, device_id) per record index."""
    layout = []
    for split, tags, per_device in (
        ("train", cfg.train_tags, cfg.train_bursts_per_device),
        ("test", cfg.test_tags, cfg.test_bursts_per_device),
    ):
        for tag in tags:
            for device in range(cfg.n_devices):
                layout.extend((split, tag, device) for _ in range(per_device))
    return layout


def _geometry_plans(cfg: DatasetConfig, seed: int) -> dict:
    plans = {}
    for split_id, (split, tags) in enumerate(
        (("train", cfg.train_tags), ("test", cfg.test_tags))
    ):
        for tag in tags:
            spec = parse_channel_tag(tag, cfg)
            if spec is None:
                plans[(split, tag)] = None
                continue
            rng = np.random.default_rng([seed, _GEO_STREAM, split_id, zlib.crc32(tag.encode())])
            plans[(split, tag)] = plan_geometry(spec, rng)
    return plans


def _generate_record(
    cfg: DatasetConfig,
    seed: int,
    index: int,
    fp: DeviceFingerprint,
    plan: Optional[ReflectorGeometry],
) -> np.ndarray:
    rng = np.random.default_rng([seed, index])
    x = apply_fingerprint(generate_burst(cfg.burst, rng), fp)
    if plan is not None:
        x = convolve(x, realize_geometry_channel(plan, rng))
    x = add_awgn(x, AwgnSpec(cfg.snr_db), rng)
    out = np.empty(2 * x.samples.size, dtype="<f4")
    out[0::2] = x.samples.real
    out[1::2] = x.samples.imag
    return out


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def build_dataset(cfg: DatasetConfig, out_dir, seed: int, workers: int = 1) -> dict:
    """Generate a dataset directory; returns the meta document."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    population = make_population(
        cfg.n_devices, cfg.pole_jitter_ppm, seed, cfg.cutoff, cfg.sections
    )
    plans = _geometry_plans(cfg, seed)
    layout = _record_layout(cfg)
    burst_len = cfg.burst.burst_len

    def one(index: int) -> np.ndarray:
        split, tag, device = layout[index]
        return _generate_record(cfg, seed, index, population[device], plans[(split, tag)])

    records = np.empty((len(layout), 2 * burst_len), dtype="<f4")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for index, row in enumerate(pool.map(one, range(len(layout)), chunksize=64)):
                records[index] = row
    else:
        for index in range(len(layout)):
            records[index] = one(index)

    labels = io.StringIO()
    writer = csv.writer(labels, lineterminator="\n")
    writer.writerow(["record_index", "device_id", "channel_tag", "split"])
    for index, (split, tag, device) in enumerate(layout):
        writer.writerow([index, device, tag, split])

    meta = {
        "config_version": 1,
        "seed": int(seed),
        "population_seed": int(seed),
        "n_devices": cfg.n_devices,
        "burst": {
            "n_subcarriers": cfg.burst.n_subcarriers,
            "cp_len": cfg.burst.cp_len,
            "n_symbols": cfg.burst.n_symbols,
            "constellation": cfg.burst.constellation,
            "active_subcarriers": cfg.burst.active_subcarriers,
        },
        "snr_db": cfg.snr_db,
        "pole_jitter_ppm": cfg.pole_jitter_ppm,
        "cutoff": cfg.cutoff,
        "sections": cfg.sections,
        "geometry": {
            "max_delay_samples": cfg.max_delay_samples,
            "attn_db_range": list(cfg.attn_db_range),
            "position_jitter": cfg.position_jitter,
            "max_reflectors": cfg.max_reflectors,
        },
        "channel_tags": {"train": list(cfg.train_tags), "test": list(cfg.test_tags)},
        "bursts_per_device": {
            "train": cfg.train_bursts_per_device,
            "test": cfg.test_bursts_per_device,
        },
        "burst_len": burst_len,
        "record_count": len(layout),
        "records_file": "records.bin",
        "labels_file": "labels.csv",
    }
    _atomic_write(out_dir / "records.bin", records.tobytes())
    _atomic_write(out_dir / "labels.csv", labels.getvalue().encode())
    _atomic_write(out_dir / "meta.json", (json.dumps(meta, indent=2) + "\n").encode())
    return meta


def config_from_meta(meta: dict) -> DatasetConfig:
    """Rebuild the generation config recorded in a meta document."""
    return DatasetConfig(
        n_devices=meta["n_devices"],
        train_bursts_per_device=meta["bursts_per_device"]["train"],
        test_bursts_per_device=meta["bursts_per_device"]["test"],
        train_tags=tuple(meta["channel_tags"]["train"]),
        test_tags=tuple(meta["channel_tags"]["test"]),
        snr_db=meta["snr_db"],
        burst=BurstSpec(**meta["burst"]),
        pole_jitter_ppm=meta["pole_jitter_ppm"],
        cutoff=meta["cutoff"],
        sections=meta["sections"],
        max_delay_samples=meta["geometry"]["max_delay_samples"],
        attn_db_range=tuple(meta["geometry"]["attn_db_range"]),
        position_jitter=meta["geometry"]["position_jitter"],
        max_reflectors=meta["geometry"]["max_reflectors"],
    )


def regenerate_record(meta: dict, index: int) -> np.ndarray:
    """Recompute one record's float32 I/Q row from the meta document."""
    cfg = config_from_meta(meta)
    layout = _record_layout(cfg)
    if not (0 <= index < len(layout)):
        raise SizeError(f"record index {index} out of range")
    seed = meta["seed"]
    split, tag, device = layout[index]
    fp = make_population(cfg.n_devices, cfg.pole_jitter_ppm, seed, cfg.cutoff, cfg.sections)[device]
    plan = _geometry_plans(cfg, seed)[(split, tag)]
    return _generate_record(cfg, seed, index, fp, plan)


def load_dataset(data_dir):
    """Load a dataset directory into memory.

    Returns (bursts complex128 [N, L], device_ids, tags, splits, meta).
    """
    data_dir = Path(data_dir)
    meta = json.loads((data_dir / "meta.json").read_text())
    raw = np.fromfile(data_dir / meta["records_file"], dtype="<f4")
    n, burst_len = meta["record_count"], meta["burst_len"]
    if raw.size != n * 2 * burst_len:
        raise SizeError("records.bin size does not match meta.json accounting")
    iq = raw.reshape(n, 2 * burst_len).astype(np.float64)
    bursts = iq[:, 0::2] + 1j * iq[:, 1::2]
    device_ids = np.empty(n, dtype=np.int64)
    tags = np.empty(n, dtype=object)
    splits = np.empty(n, dtype=object)
    with open(data_dir / meta["labels_file"], newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["record_index"])
            device_ids[i] = int(row["device_id"])
            tags[i] = row["channel_tag"]
            splits[i] = row["split"]
    return bursts, device_ids, tags, splits, meta
