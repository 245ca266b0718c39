"""One-sided DFT amplitude/phase codec for masked-patch reconstruction targets.

A real patch of N samples is encoded as per-bin amplitude and phase of its
one-sided spectrum (N//2 + 1 bins, exploiting conjugate symmetry).  The 1/N
normalization is applied at encode time and inverted at decode time, so
``spectral_decode(spectral_encode(x))`` reproduces ``x`` up to floating-point
round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class SpectralTarget:
    """Amplitude/phase representation of one real-valued patch.

    Attributes:
        amplitude: [N//2 + 1] nonnegative per-bin magnitudes, scaled by 1/N.
        phase: [N//2 + 1] per-bin phases in (-pi, pi].
        patch_samples: N, the length of the encoded time-domain patch.
    """

    amplitude: np.ndarray
    phase: np.ndarray
    patch_samples: int

    def __post_init__(self):
        if self.patch_samples <= 0:
            raise ValueError("patch_samples must be positive")
        n_bins = self.patch_samples // 2 + 1
        if self.amplitude.shape != (n_bins,) or self.phase.shape != (n_bins,):
            raise ValueError(
                f"expected {n_bins} one-sided bins for N={self.patch_samples}, "
                f"got amplitude {self.amplitude.shape}, phase {self.phase.shape}"
            )
        if np.any(self.amplitude < 0):
            raise ValueError("amplitude must be nonnegative")
        if np.any(self.phase <= -np.pi) or np.any(self.phase > np.pi):
            raise ValueError("phase must lie in (-pi, pi]")


def _wrap_phase(phase: np.ndarray) -> np.ndarray:
    # np.angle returns [-pi, pi]; fold the closed lower endpoint onto +pi.
    phase = np.asarray(phase, dtype=np.float64).copy()
    phase[phase == -np.pi] = np.pi
    return phase


def spectral_encode(patch: np.ndarray) -> SpectralTarget:
    """Encode a real patch into one-sided amplitude and phase.

    Args:
        patch: [N] real samples, N >= 1.

    Returns:
        SpectralTarget with amplitude = |X_m| / N and phase = atan2(Im, Re).
    """
    x = np.asarray(patch, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("patch must be a nonempty 1-D array")
    n = x.size
    spectrum = np.fft.rfft(x)
    amplitude = np.abs(spectrum) / n
    phase = _wrap_phase(np.angle(spectrum))
    return SpectralTarget(amplitude=amplitude, phase=phase, patch_samples=n)


def spectral_decode(target: SpectralTarget) -> np.ndarray:
    """Invert :func:`spectral_encode`, returning [N] real samples."""
    n = target.patch_samples
    spectrum = n * target.amplitude * np.exp(1j * target.phase)
    return np.fft.irfft(spectrum, n=n)


def phase_from_pair(sin_part: np.ndarray, cos_part: np.ndarray) -> np.ndarray:
    """Map a (sin, cos) phase parameterization to angles in (-pi, pi].

    The pair is renormalized to unit length before the atan2, so arbitrary
    (e.g. network-predicted) pairs always yield a valid phase.
    """
    sin_part = np.asarray(sin_part, dtype=np.float64)
    cos_part = np.asarray(cos_part, dtype=np.float64)
    norm = np.sqrt(sin_part**2 + cos_part**2)
    norm = np.where(norm < 1e-12, 1.0, norm)
    return _wrap_phase(np.arctan2(sin_part / norm, cos_part / norm))


def decode_spectrum_torch(
    amplitude: torch.Tensor,
    phase_sin: torch.Tensor,
    phase_cos: torch.Tensor,
    patch_samples: int,
) -> torch.Tensor:
    """Differentiable decode used inside the pretraining loss.

    The phase is carried as a (sin, cos) pair that is renormalized to unit
    length; the complex spectrum is assembled directly from the pair so no
    atan2 enters the graph.

    Args:
        amplitude: [..., N//2 + 1] nonnegative magnitudes (1/N-scaled).
        phase_sin, phase_cos: [..., N//2 + 1] phase pair, any scale.
        patch_samples: N, the time-domain patch length.

    Returns:
        [..., N] real samples.
    """
    norm = torch.sqrt(phase_sin**2 + phase_cos**2).clamp_min(1e-12)
    real = patch_samples * amplitude * phase_cos / norm
    imag = patch_samples * amplitude * phase_sin / norm
    return torch.fft.irfft(torch.complex(real, imag), n=patch_samples, dim=-1)
