"""Complex-baseband DSP primitives.

Radix-2 transforms, Kaiser windows, a hop-based short-time transform, FIR
channel convolution, and the per-window "ideal" channel action that the
group layers are equivariant/invariant to.

Conventions: forward transform uses the negative exponent and is
unnormalized; the inverse carries the 1/N factor. Transform sizes are
restricted to powers of two.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import SizeError

__all__ = [
    "ComplexSignal",
    "Spectrum",
    "Spectrogram",
    "KaiserSpec",
    "dft",
    "idft",
    "fft_array",
    "ifft_array",
    "kaiser_window",
    "stft",
    "stft_array",
    "frame_count",
    "convolve",
    "apply_ideal_channel",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ComplexSignal:
    """A finite sequence of complex baseband samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1 or samples.size == 0:
            raise SizeError("signal must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples.view(np.float64))):
            raise ValueError("signal contains non-finite samples")
        if not (self.sample_rate_hz > 0):
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class Spectrum:
    """Frequency-domain coefficients of one transform."""

    bins: np.ndarray

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 1 or bins.size == 0:
            raise SizeError("spectrum must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(bins.view(np.float64))):
            raise ValueError("spectrum contains non-finite bins")
        object.__setattr__(self, "bins", bins)

    def __len__(self) -> int:
        return self.bins.size


@dataclass(frozen=True)
class KaiserSpec:
    """Window length and shape parameter for a Kaiser taper."""

    length: int
    beta: float = 0.0

    def __post_init__(self):
        if self.length < 1:
            raise SizeError("window length must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass(frozen=True)
class Spectrogram:
    """Windows x bins grid of short-time spectra."""

    windows: np.ndarray  # [W, N] complex
    window_len: int
    hop: int
    kaiser_beta: float

    def __post_init__(self):
        windows = np.asarray(self.windows, dtype=np.complex128)
        if windows.ndim != 2:
            raise SizeError("spectrogram grid must be 2-D (windows x bins)")
        if windows.shape[1] != self.window_len:
            raise SizeError("bin count must equal window_len")
        if not _is_power_of_two(self.window_len):
            raise SizeError("window_len must be a power of two")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        object.__setattr__(self, "windows", windows)

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]


@lru_cache(maxsize=32)
def _bit_reversal(n: int) -> np.ndarray:
    rev = np.zeros(n, dtype=np.intp)
    for i in range(1, n):
        rev[i] = (rev[i >> 1] >> 1) | ((i & 1) * (n >> 1))
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=32)
def _twiddles(span: int) -> np.ndarray:
    k = np.arange(span // 2)
    tw = np.exp(-2j * np.pi * k / span)
    tw.setflags(write=False)
    return tw


def fft_array(a: np.ndarray) -> np.ndarray:
    """Unnormalized radix-2 forward transform along the last axis."""
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[-1]
    if not _is_power_of_two(n):
        raise SizeError(f"transform size {n} is not a power of two")
    x = np.ascontiguousarray(a[..., _bit_reversal(n)])
    span = 2
    while span <= n:
        half = span // 2
        tw = _twiddles(span)
        v = x.reshape(x.shape[:-1] + (n // span, span))
        t = v[..., half:] * tw
        u = v[..., :half].copy()
        v[..., :half] = u + t
        v[..., half:] = u - t
        span *= 2
    return x


def ifft_array(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft_array`; carries the 1/N normalization."""
    a = np.asarray(a, dtype=np.complex128)
    return np.conj(fft_array(np.conj(a))) / a.shape[-1]


def dft(signal: ComplexSignal) -> Spectrum:
    """Forward transform of a power-of-two-length signal."""
    return Spectrum(fft_array(signal.samples))


def idft(spectrum: Spectrum) -> ComplexSignal:
    """Inverse transform; the result carries a unit sample rate."""
    return ComplexSignal(ifft_array(spectrum.bins))


def _i0(x: np.ndarray) -> np.ndarray:
    # Zeroth-order modified Bessel, power series; terms stop once below
    # 1e-16 relative to the running sum.
    q = np.asarray(x, dtype=np.float64) ** 2 / 4.0
    term = np.ones_like(q)
    total = np.ones_like(q)
    k = 1
    while True:
        term = term * q / (k * k)
        total = total + term
        if np.all(term <= 1e-16 * total):
            return total
        k += 1


def kaiser_window(spec: KaiserSpec) -> np.ndarray:
    """Symmetric Kaiser taper; beta = 0 degenerates to all-ones."""
    n = spec.length
    if n == 1:
        return np.ones(1)
    i = np.arange(n)
    xi = 2.0 * i / (n - 1) - 1.0
    w = _i0(spec.beta * np.sqrt(1.0 - xi * xi)) / _i0(np.float64(spec.beta))
    # enforce exact mirror symmetry against accumulation-order effects
    return 0.5 * (w + w[::-1])


def frame_count(signal_len: int, window_len: int, hop: int) -> int:
    """Number of full windows; trailing partial windows are dropped."""
    if signal_len < window_len:
        raise SizeError("signal shorter than window_len")
    return (signal_len - window_len) // hop + 1


def stft_array(x: np.ndarray, window_len: int, hop: int, beta: float) -> np.ndarray:
    """Short-time transform of `[..., L]` samples into `[..., W, N]` spectra."""
    x = np.asarray(x, dtype=np.complex128)
    if not _is_power_of_two(window_len):
        raise SizeError("window_len must be a power of two")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    n_win = frame_count(x.shape[-1], window_len, hop)
    idx = np.arange(n_win)[:, None] * hop + np.arange(window_len)[None, :]
    frames = x[..., idx] * kaiser_window(KaiserSpec(window_len, beta))
    return fft_array(frames)


def stft(signal: ComplexSignal, window_len: int, hop: int, beta: float) -> Spectrogram:
    """Kaiser-windowed short-time transform of a signal."""
    grids = stft_array(signal.samples, window_len, hop, beta)
    return Spectrogram(grids, window_len=window_len, hop=hop, kaiser_beta=beta)


def convolve(signal: ComplexSignal, ir) -> ComplexSignal:
    """Linear convolution with a channel, truncated to the input length.

    Output sample n is sum_k taps[k] * x[n-k]; this is the physical channel
    action, as opposed to the per-window ideal action below.
    """
    taps = np.asarray(getattr(ir, "taps", ir), dtype=np.complex128)
    if taps.ndim != 1 or taps.size == 0:
        raise SizeError("impulse response must have at least one tap")
    full = np.convolve(signal.samples, taps, mode="full")
    return ComplexSignal(full[: len(signal)], signal.sample_rate_hz)


def apply_ideal_channel(spec: Spectrogram, freq_response) -> Spectrogram:
    """Multiply every window elementwise by a frequency response.

    This is the exact group action per frequency bin: the idealization in
    which each window experienced the channel independently via circular
    convolution.
    """
    h = np.asarray(getattr(freq_response, "bins", freq_response), dtype=np.complex128)
    if h.ndim != 1 or h.size != spec.window_len:
        raise SizeError("frequency response length must equal window_len")
    return Spectrogram(
        spec.windows * h[None, :],
        window_len=spec.window_len,
        hop=spec.hop,
        kaiser_beta=spec.kaiser_beta,
    )
