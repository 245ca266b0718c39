"""Recording preprocessing: anti-alias low-pass, power-line notches,
downsampling to 512 Hz, and per-channel z-scoring, applied in that order.

All filters are linear-phase FIR (windowed sinc, Hamming window) applied with
group-delay compensation, so planted oscillations keep their alignment.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sp_signal

from .synth import Recording

TARGET_RATE = 512.0
LOWPASS_HZ = 200.0
NOTCH_HZ = (50.0, 100.0)
# Transition bandwidths: the 200 Hz low-pass keeps its transition under 20 Hz
# at a 1024 Hz input rate; notches trade width for depth at the line frequency.
LOWPASS_TRANSITION_HZ = 20.0
NOTCH_HALF_WIDTH_HZ = 10.0


def _odd(n: int) -> int:
    return n if n % 2 == 1 else n + 1


def design_lowpass(fs: float, cutoff: float = LOWPASS_HZ) -> np.ndarray:
    """Windowed-sinc low-pass taps with transition < LOWPASS_TRANSITION_HZ."""
    numtaps = _odd(int(np.ceil(3.3 * fs / LOWPASS_TRANSITION_HZ)))
    return sp_signal.firwin(numtaps, cutoff, fs=fs, window="hamming")


def design_bandstop(fs: float, center: float, half_width: float = NOTCH_HALF_WIDTH_HZ) -> np.ndarray:
    """Windowed-sinc band-stop taps centered on a line frequency."""
    numtaps = _odd(int(np.ceil(3.3 * fs / (half_width / 2.0))))
    return sp_signal.firwin(
        numtaps,
        [center - half_width, center + half_width],
        fs=fs,
        window="hamming",
        pass_zero="bandstop",
    )


def filter_warmup_length(fs: float) -> int:
    """Longest tap count in the filter chain at input rate ``fs``."""
    taps = [design_lowpass(fs)] + [design_bandstop(fs, f0) for f0 in NOTCH_HZ]
    return max(t.size for t in taps)


def _apply_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # Zero-phase for symmetric taps: reflect-pad, then valid convolution
    # aligned to the kernel center.  Reflection keeps constants constant and
    # avoids zero-padding fade at the edges.
    half = taps.size // 2
    padded = np.pad(x, ((half, half), (0, 0)), mode="reflect")
    return sp_signal.fftconvolve(padded, taps[:, np.newaxis], mode="valid", axes=0)


def zscore(x: np.ndarray, std_guard: float = 1e-12) -> np.ndarray:
    """Per-channel standardization; zero-variance channels map to all zeros."""
    mean = x.mean(axis=0, keepdims=True)
    std = x.std(axis=0, keepdims=True)
    std = np.where(std < std_guard, 1.0, std)
    return (x - mean) / std


def preprocess(raw: Recording) -> Recording:
    """Run the full preprocessing pipeline on one recording.

    Raises:
        ValueError: if the signal is shorter than the filter warm-up length,
            if the sample rate is below the 512 Hz target, or if the rate is
            not an integer multiple of the target.
    """
    fs = raw.sample_rate
    if fs < TARGET_RATE:
        raise ValueError(f"sample rate {fs} Hz is below the {TARGET_RATE} Hz target")
    warmup = filter_warmup_length(fs)
    if raw.num_samples < warmup:
        raise ValueError(
            f"signal length {raw.num_samples} is shorter than the filter "
            f"warm-up length {warmup}"
        )
    factor = fs / TARGET_RATE
    if abs(factor - round(factor)) > 1e-9:
        raise ValueError(
            f"sample rate {fs} Hz is not an integer multiple of {TARGET_RATE} Hz"
        )
    factor = int(round(factor))

    x = raw.samples
    x = _apply_fir(x, design_lowpass(fs))
    for f0 in NOTCH_HZ:
        x = _apply_fir(x, design_bandstop(fs, f0))
    if factor > 1:
        x = x[::factor]
    x = zscore(x)

    return Recording(
        subject_id=raw.subject_id,
        samples=x,
        sample_rate=TARGET_RATE,
        region_map=raw.region_map,
        labels=dict(raw.labels),
    )
