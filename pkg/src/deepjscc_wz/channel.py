"""Transmit-side power normalization, complex AWGN channel, and SNR
conversions.

Conventions:

* ``snr_db = 10 * log10(p_avg / sigma2)`` with both powers linear.
* Noise is circularly-symmetric complex Gaussian with per-complex-component
  variance ``sigma2`` (real and imaginary parts each carry ``sigma2 / 2``).
* A real latent of shape ``(2c, w, h)`` maps to ``c*w*h`` complex symbols:
  the first half of the channels are real parts, the second half imaginary
  parts, each flattened in C order. ``unpack_complex`` is the exact inverse.

The training loop works on the real view of the latent; the arithmetic is
identical to the complex path (same norm, same noise stream layout), which
the test suite checks bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, div, sqrt, square, tsum
from .errors import DegenerateInputError, InvalidArgumentError

POWER_TOLERANCE = 1e-5


def snr_to_sigma2(snr_db, p_avg):
    """Noise power for a given channel SNR and power budget."""
    if np.any(np.asarray(p_avg) <= 0):
        raise InvalidArgumentError(f"p_avg must be positive, got {p_avg}")
    sigma2 = p_avg / np.power(10.0, np.asarray(snr_db, dtype=np.float64) / 10.0)
    if not np.all(np.isfinite(sigma2)) or np.any(sigma2 <= 0):
        raise InvalidArgumentError(
            f"snr_db={snr_db} gives non-finite or non-positive noise power"
        )
    return sigma2 if np.ndim(sigma2) else float(sigma2)


def sigma2_to_snr(sigma2, p_avg):
    """Inverse of :func:`snr_to_sigma2`."""
    if np.any(np.asarray(sigma2) <= 0) or np.any(np.asarray(p_avg) <= 0):
        raise InvalidArgumentError(
            f"sigma2 and p_avg must be positive, got {sigma2}, {p_avg}"
        )
    snr = 10.0 * np.log10(p_avg / np.asarray(sigma2, dtype=np.float64))
    return snr if np.ndim(snr) else float(snr)


@dataclass
class ChannelSymbols:
    """Length-k complex vector satisfying the average power constraint."""

    values: np.ndarray
    k: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.k,):
            raise InvalidArgumentError(
                f"expected {self.k} channel symbols, got shape {self.values.shape}"
            )

    def average_power(self) -> float:
        return float(np.mean(np.abs(self.values) ** 2))


@dataclass
class ChannelState:
    """AWGN channel parameters plus an owned RNG stream.

    A state instance must not be shared across concurrent callers; each
    caller owns its own stream.
    """

    sigma2: float
    p_avg: float = 1.0
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.sigma2 <= 0 or self.p_avg <= 0:
            raise InvalidArgumentError(
                f"sigma2 and p_avg must be positive, got {self.sigma2}, {self.p_avg}"
            )
        self.rng = np.random.default_rng(self.seed)


def power_normalize(z_tilde: np.ndarray, p_avg: float = 1.0) -> ChannelSymbols:
    """Scales a complex latent onto the power-constraint sphere:
    ``z = sqrt(k * p_avg) * z_tilde / ||z_tilde||``."""
    z_tilde = np.asarray(z_tilde, dtype=np.complex128)
    if z_tilde.ndim != 1:
        raise InvalidArgumentError(f"expected a vector, got shape {z_tilde.shape}")
    if p_avg <= 0:
        raise InvalidArgumentError(f"p_avg must be positive, got {p_avg}")
    k = z_tilde.shape[0]
    norm_sq = float(np.real(np.vdot(z_tilde, z_tilde)))
    if norm_sq == 0.0:
        raise DegenerateInputError(
            "all-zero latent cannot be power normalized (division by zero)"
        )
    z = np.sqrt(k * p_avg / norm_sq) * z_tilde
    return ChannelSymbols(values=z, k=k)


def awgn_transmit(z: ChannelSymbols, state: ChannelState) -> np.ndarray:
    """Adds CN(0, sigma2 I) noise; deterministic given the state's seed."""
    k = z.k
    u = state.rng.standard_normal(2 * k)
    noise = (u[:k] + 1j * u[k:]) * np.sqrt(state.sigma2 / 2.0)
    return z.values + noise


def pack_complex(real_tensor: np.ndarray) -> np.ndarray:
    """Maps a real ``(2c, w, h)`` tensor to ``c*w*h`` complex symbols.

    The first half of the channels become real parts and the second half
    imaginary parts, each half flattened in row-major (channel, then the two
    spatial axes) order.
    """
    t = np.asarray(real_tensor, dtype=np.float64)
    if t.ndim != 3 or t.shape[0] % 2 != 0:
        raise InvalidArgumentError(
            f"expected (2c, w, h) with even channel count, got shape {t.shape}"
        )
    c = t.shape[0] // 2
    return t[:c].ravel() + 1j * t[c:].ravel()


def unpack_complex(values: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Exact inverse of :func:`pack_complex` onto the given real shape."""
    values = np.asarray(values, dtype=np.complex128)
    ch, w, h = shape
    if ch % 2 != 0:
        raise InvalidArgumentError(f"channel count must be even, got {ch}")
    if values.shape != (ch // 2 * w * h,):
        raise InvalidArgumentError(
            f"cannot unpack {values.shape} complex values into real shape {shape}"
        )
    out = np.empty(shape, dtype=np.float64)
    half = ch // 2
    out[:half] = values.real.reshape(half, w, h)
    out[half:] = values.imag.reshape(half, w, h)
    return out


# ---------------------------------------------------------------------------
# real-view helpers used inside the differentiable training graph
# ---------------------------------------------------------------------------

def normalize_power_graph(z_tilde: Tensor, p_avg: float) -> Tensor:
    """Per-sample power normalization of a real latent ``(n, 2c, gh, gw)``.

    Each sample's 2c*gh*gw real values represent k = c*gh*gw complex symbols,
    so the target squared norm is ``k * p_avg``. Differentiable; raises on an
    all-zero sample, which must fail loudly rather than emit NaN.
    """
    n = z_tilde.shape[0]
    k = z_tilde.size // n // 2
    sum_sq = tsum(square(z_tilde), axis=(1, 2, 3), keepdims=True)
    if np.any(sum_sq.data == 0.0):
        raise DegenerateInputError(
            "all-zero latent cannot be power normalized (division by zero)"
        )
    return z_tilde * sqrt(div(float(k * p_avg), sum_sq))


def gaussian_noise_real(rng: np.random.Generator, shape: tuple,
                        sigma2_per_sample: np.ndarray) -> np.ndarray:
    """Real-view AWGN draw matching the complex convention.

    ``shape`` is ``(n, 2c, gh, gw)``; each real component gets variance
    ``sigma2 / 2``. The draw order (all 2k normals per sample, first half
    real parts) matches :func:`awgn_transmit` exactly.
    """
    n = shape[0]
    u = rng.standard_normal((n, int(np.prod(shape[1:])))).reshape(shape)
    scale = np.sqrt(np.asarray(sigma2_per_sample, dtype=np.float64) / 2.0)
    return u * scale.reshape(n, 1, 1, 1)
