"""Multipath channel sampling and signal impairments.

Reflector-geometry channels model discrete echoes on the sample grid:
each reflector has a nominal delay fixed per geometry, a small per-
realization position jitter, an attenuation drawn in dB, and a uniform
phase. Rayleigh/Ricean fading channels draw tap vectors from an
exponential power-delay profile normalized to unit expected power.
AWGN and carrier-frequency-offset impairments operate on signals.

All samplers take an explicit numpy Generator; identical generator state
yields bit-identical draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dsp import ComplexSignal
from .errors import SizeError

__all__ = [
    "GeometrySpec",
    "ReflectorGeometry",
    "ImpulseResponse",
    "FadingSpec",
    "AwgnSpec",
    "CfoSpec",
    "plan_geometry",
    "realize_geometry_channel",
    "sample_geometry_channel",
    "sample_fading_channel",
    "add_awgn",
    "apply_cfo",
]


@dataclass(frozen=True)
class GeometrySpec:
    """Reflector layout parameters for a multipath geometry."""

    n_reflectors: int
    line_of_sight: bool
    max_delay_samples: int = 16
    attn_db_range: tuple = (-15.0, -5.0)
    position_jitter: float = 0.25  # fraction of a sample

    def __post_init__(self):
        low, high = self.attn_db_range
        if not (low <= high <= 0):
            raise ValueError("attenuation range must satisfy low <= high <= 0 dB")
        if self.max_delay_samples < 1:
            raise ValueError("max_delay_samples must be >= 1")
        if self.n_reflectors < 0:
            raise ValueError("n_reflectors must be nonnegative")
        if not self.line_of_sight and self.n_reflectors == 0:
            raise ValueError("geometry has no propagation path (no LOS, no reflectors)")


@dataclass(frozen=True)
class ImpulseResponse:
    """Finite complex tap vector of one channel realization."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.complex128)
        if taps.ndim != 1 or taps.size == 0:
            raise SizeError("impulse response must have at least one tap")
        if not np.any(np.abs(taps) > 0):
            raise ValueError("impulse response must have a nonzero tap")
        object.__setattr__(self, "taps", taps)

    def __len__(self) -> int:
        return self.taps.size


@dataclass(frozen=True)
class ReflectorGeometry:
    """A geometry with its nominal reflector delays pinned down."""

    spec: GeometrySpec
    nominal_delays: np.ndarray  # float delays in samples, one per reflector


@dataclass(frozen=True)
class FadingSpec:
    """Statistical fading model parameters."""

    model: str = "rayleigh"  # "rayleigh" | "ricean"
    n_taps: int = 8
    decay: float = 0.5  # exponential power-delay-profile rate per tap
    k_factor_db: Optional[float] = None  # Ricean only; None draws U[3, 10] per call

    def __post_init__(self):
        if self.model not in ("rayleigh", "ricean"):
            raise ValueError(f"unknown fading model {self.model!r}")
        if self.n_taps < 1:
            raise ValueError("n_taps must be >= 1")
        if not (self.decay > 0):
            raise ValueError("decay must be positive")


@dataclass(frozen=True)
class AwgnSpec:
    """Noise level relative to measured signal power; inf disables noise."""

    snr_db: float


@dataclass(frozen=True)
class CfoSpec:
    """Maximum |frequency offset| as a fraction of the sample rate."""

    max_offset_fraction: float = 1e-4

    def __post_init__(self):
        if not (0 <= self.max_offset_fraction < 0.5):
            raise ValueError("max_offset_fraction must lie in [0, 0.5)")


def plan_geometry(spec: GeometrySpec, rng: np.random.Generator) -> ReflectorGeometry:
    """Draw the nominal reflector delays once for a geometry."""
    delays = rng.uniform(1.0, spec.max_delay_samples, size=spec.n_reflectors)
    return ReflectorGeometry(spec, delays)


def realize_geometry_channel(
    geometry: ReflectorGeometry, rng: np.random.Generator
) -> ImpulseResponse:
    """One channel realization from a planned geometry.

    Reflector delays jitter around their nominal positions and round to the
    sample grid; attenuations are uniform in dB; phases uniform. Taps that
    land on the same delay add coherently.
    """
    spec = geometry.spec
    taps = np.zeros(spec.max_delay_samples + 1, dtype=np.complex128)
    if spec.line_of_sight:
        taps[0] = 1.0
    n = spec.n_reflectors
    if n:
        jitter = rng.uniform(-spec.position_jitter, spec.position_jitter, size=n)
        delays = np.rint(geometry.nominal_delays + jitter).astype(int)
        delays = np.clip(delays, 1, spec.max_delay_samples)
        low, high = spec.attn_db_range
        amps = 10.0 ** (rng.uniform(low, high, size=n) / 20.0)
        phases = rng.uniform(-np.pi, np.pi, size=n)
        np.add.at(taps, delays, amps * np.exp(1j * phases))
    last = np.max(np.nonzero(np.abs(taps) > 0)[0])
    return ImpulseResponse(taps[: last + 1])


def sample_geometry_channel(spec: GeometrySpec, rng: np.random.Generator) -> ImpulseResponse:
    """Plan a geometry and realize one channel from it in a single draw."""
    return realize_geometry_channel(plan_geometry(spec, rng), rng)


def sample_fading_channel(spec: FadingSpec, rng: np.random.Generator) -> ImpulseResponse:
    """Draw a Rayleigh or Ricean tap vector with unit expected total power."""
    k = np.arange(spec.n_taps)
    profile = np.exp(-spec.decay * k)
    profile = profile / profile.sum()
    scale = np.sqrt(profile / 2.0)
    taps = scale * (rng.standard_normal(spec.n_taps) + 1j * rng.standard_normal(spec.n_taps))
    if spec.model == "ricean":
        k_db = spec.k_factor_db
        if k_db is None:
            k_db = rng.uniform(3.0, 10.0)
        k_lin = 10.0 ** (k_db / 10.0)
        taps = taps / np.sqrt(1.0 + k_lin)
        taps[0] = taps[0] + np.sqrt(k_lin / (1.0 + k_lin))
    return ImpulseResponse(taps)


def add_awgn(x: ComplexSignal, spec: AwgnSpec, rng: np.random.Generator) -> ComplexSignal:
    """Add circularly symmetric noise scaled to the measured signal power."""
    if np.isinf(spec.snr_db):
        return x
    power = float(np.mean(np.abs(x.samples) ** 2))
    var = power * 10.0 ** (-spec.snr_db / 10.0)
    n = x.samples.size
    noise = np.sqrt(var / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return ComplexSignal(x.samples + noise, x.sample_rate_hz)


def apply_cfo(x: ComplexSignal, delta_f_fraction: float) -> ComplexSignal:
    """Rotate sample n by exp(i 2 pi delta_f n); |delta_f| must be < 0.5."""
    if not (abs(delta_f_fraction) < 0.5):
        raise ValueError("CFO fraction must satisfy |delta_f| < 0.5")
    if delta_f_fraction == 0.0:
        return x
    n = np.arange(x.samples.size)
    rot = np.exp(2j * np.pi * delta_f_fraction * n)
    return ComplexSignal(x.samples * rot, x.sample_rate_hz)
