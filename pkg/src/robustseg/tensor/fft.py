"""Iterative radix-2 FFT and the polar (amplitude, phase) feature transform.

Transforms run in complex128 and results are stored at the tensor dtype.
Only power-of-two extents are supported.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import DimensionError, DomainError
from .core import Tensor, as_tensor, result


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=32)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(m: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 1j * np.pi * np.arange(m) / m)


def fft_axis(a: np.ndarray, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """Unnormalized DFT along one axis (sign +i when ``inverse``)."""
    a = np.moveaxis(np.asarray(a, dtype=np.complex128), axis, -1)
    n = a.shape[-1]
    if not _is_pow2(n):
        raise DimensionError(f"FFT extent {n} is not a power of two")
    lead = a.shape[:-1]
    out = a[..., _bit_reverse(n)]
    m = 1
    while m < n:
        blocks = out.reshape(lead + (n // (2 * m), 2, m))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * _twiddles(m, inverse)
        out = np.stack([even + odd, even - odd], axis=-2).reshape(lead + (n,))
        m *= 2
    return np.moveaxis(out, -1, axis)


def fft2(x: np.ndarray) -> np.ndarray:
    return fft_axis(fft_axis(x, -1), -2)


def ifft2(z: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT including the 1/(H*W) factor."""
    h, w = z.shape[-2:]
    return fft_axis(fft_axis(z, -1, inverse=True), -2, inverse=True) / (h * w)


def to_frequency(x) -> tuple[Tensor, Tensor]:
    """Per-channel 2-D DFT of ``x`` in polar form.

    Returns ``(amplitude, phase)`` with amplitude >= 0 and phase in (-pi, pi].
    Both outputs are differentiable.
    """
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise DimensionError(f"to_frequency needs power-of-two extents, got {h}x{w}")
    spec = fft2(x.data)
    amp = np.abs(spec)
    phase = np.angle(spec)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    unit = np.exp(1j * phase)
    safe = amp > 1e-30
    inv_amp = np.where(safe, 1.0 / np.where(safe, amp, 1.0), 0.0)
    n = h * w

    # d/dx of a real signal through its spectrum: grad_x = Re(N * ifft2(grad_X)).
    dt = x.dtype

    def bw_amp(g):
        return (np.real(n * ifft2(unit * g)).astype(dt),)

    def bw_phase(g):
        return (np.real(n * ifft2(unit * (1j * g * inv_amp))).astype(dt),)

    amplitude = result(amp, (x,), bw_amp, "fft_amplitude")
    phase_t = result(phase, (x,), bw_phase, "fft_phase")
    return amplitude, phase_t


def from_frequency(amplitude, phase) -> Tensor:
    """Real part of the inverse 2-D DFT of ``amplitude * exp(i * phase)``."""
    amplitude, phase = as_tensor(amplitude), as_tensor(phase)
    if amplitude.shape != phase.shape:
        raise DimensionError(f"amplitude {amplitude.shape} and phase {phase.shape} differ")
    if np.any(amplitude.data < 0):
        raise DomainError("from_frequency received negative amplitude entries")
    ad = amplitude.data.astype(np.float64)
    unit = np.exp(1j * phase.data.astype(np.float64))
    out = np.real(ifft2(ad * unit))

    def bw(g):
        v = ifft2(g) * unit
        ga = np.real(v).astype(amplitude.dtype) if amplitude.requires_grad else None
        gp = (-ad * np.imag(v)).astype(phase.dtype) if phase.requires_grad else None
        return ga, gp

    return result(out, (amplitude, phase), bw, "ifft_polar")
