"""Core DSP used by every stage of the pipeline.

Waveforms and spectrograms are immutable values; every operation here is a
pure function of its inputs. Conventions:

- FIR filters are odd-length, linear phase, and applied centered (zero phase)
  with reflected edges, so constant input gives exactly zero highpass output.
- STFT frames are not centered: frame i covers samples [i*hop, i*hop + window).
  The FFT length is the next power of two >= the window.
- shift(w, d) advances the signal by d samples: out[n] = w[n + d].
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import librosa
import numpy as np
from scipy import signal as sps

from app.errors import SignalError
from app.schemas.signal import FilterKind, FilterSpec, FrameSpec

logger = logging.getLogger(__name__)

# Stopband attenuation targeted by the resampling anti-alias filter
RESAMPLE_ATTENUATION_DB = 60.0

# Wiener filter analysis frame (32 ms at 8 kHz), 50% overlap
WIENER_NPERSEG = 256

# Hamming-window FIR transition width is about this many fs/numtaps
HAMMING_TRANSITION = 3.3
MIN_NUMTAPS = 255


# ============================================================================
# Types
# ============================================================================


@dataclass(frozen=True, eq=False)
class Waveform:
    """A sampled mono signal."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise SignalError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise SignalError("Waveform samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Magnitudes [bin x frame] with explicit bin and frame axes."""

    magnitudes: np.ndarray
    bin_frequencies: np.ndarray
    frame_times: np.ndarray
    scale: Literal["linear", "log"]
    nfft: Optional[int] = field(default=None)

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        freqs = np.asarray(self.bin_frequencies, dtype=np.float64)
        if mags.ndim != 2 or mags.shape[0] != freqs.shape[0]:
            raise SignalError(f"magnitudes {mags.shape} do not match {freqs.shape[0]} bins")
        if np.any(mags < 0):
            raise SignalError("Spectrogram magnitudes must be non-negative")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise SignalError("bin_frequencies must be strictly increasing")
        for name, arr in (("magnitudes", mags), ("bin_frequencies", freqs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[1]

    def frame_energy(self) -> np.ndarray:
        """Per-frame energy of the windowed frame, via one-sided Parseval."""
        if self.scale != "linear" or self.nfft is None:
            raise SignalError("frame_energy is only defined for STFT spectrograms")
        weights = np.full(self.n_bins, 2.0)
        weights[0] = 1.0
        if self.nfft % 2 == 0:
            weights[-1] = 1.0
        return (weights[:, None] * self.magnitudes**2).sum(axis=0) / self.nfft


# ============================================================================
# Elementary helpers
# ============================================================================


def normalize(w: Waveform) -> Waveform:
    """Scale to unit peak amplitude. All-zero signals are returned unchanged."""
    peak = np.max(np.abs(w.samples)) if len(w) else 0.0
    if peak == 0:
        return w
    return w.with_samples(w.samples / peak)


def shift(w: Waveform, d: int) -> Waveform:
    """Advance by d samples (out[n] = w[n + d]), zero filled, same length."""
    d = int(d)
    out = np.zeros(len(w))
    if d >= 0:
        out[: max(len(w) - d, 0)] = w.samples[d:]
    else:
        out[-d:] = w.samples[: len(w) + d]
    return w.with_samples(out)


def rms(w: Waveform) -> float:
    return float(np.sqrt(np.mean(w.samples**2))) if len(w) else 0.0


def snr_db(clean: Waveform, mixture: Waveform) -> float:
    """SNR of a mixture measured against its known clean component."""
    if len(clean) != len(mixture):
        raise SignalError(f"Length mismatch: {len(clean)} vs {len(mixture)}")
    noise = mixture.samples - clean.samples
    noise_energy = float(np.sum(noise**2))
    if noise_energy == 0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(clean.samples**2)) / noise_energy)


def band_energy_ratio(w: Waveform, low: float, high: float) -> float:
    """Fraction of signal energy between low and high Hz (rFFT bins)."""
    spectrum = np.abs(np.fft.rfft(w.samples)) ** 2
    total = spectrum.sum()
    if total == 0:
        return 0.0
    freqs = np.fft.rfftfreq(len(w), d=1.0 / w.sample_rate)
    in_band = (freqs >= low) & (freqs <= high)
    return float(spectrum[in_band].sum() / total)


def estimate_noise_profile(w: Waveform, frame_ms: float = 32.0, fraction: float = 0.1) -> Waveform:
    """Collect the quietest frames of a recording as a noise estimate.

    Frames whose energy is at or below the `fraction` quantile are
    concatenated. This is how the adaptive Wiener stage learns noise from
    unvoiced segments.
    """
    frame = max(int(frame_ms * w.sample_rate / 1000.0), 1)
    n_frames = len(w) // frame
    if n_frames == 0:
        return w
    frames = w.samples[: n_frames * frame].reshape(n_frames, frame)
    energy = np.sum(frames**2, axis=1)
    cutoff = np.quantile(energy, fraction)
    quiet = frames[energy <= cutoff]
    return w.with_samples(quiet.reshape(-1))


# ============================================================================
# Resampling
# ============================================================================


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Downsample with a Kaiser anti-alias filter (>= 60 dB above target Nyquist).

    Raises:
        SignalError: on empty input, non-positive target, or upsampling
    """
    if len(w) == 0:
        raise SignalError("Cannot resample an empty waveform")
    if target_rate <= 0:
        raise SignalError(f"target_rate must be positive, got {target_rate}")
    if target_rate > w.sample_rate:
        raise SignalError(f"Upsampling {w.sample_rate} -> {target_rate} Hz is not supported")
    if target_rate == w.sample_rate:
        return w

    g = math.gcd(int(target_rate), w.sample_rate)
    up, down = int(target_rate) // g, w.sample_rate // g
    fs_up = w.sample_rate * up
    nyquist_out = target_rate / 2.0
    # Transition band sits in the top 20% below the new Nyquist
    width = 0.2 * nyquist_out / (fs_up / 2.0)
    numtaps, beta = sps.kaiserord(RESAMPLE_ATTENUATION_DB, width)
    numtaps |= 1
    taps = sps.firwin(numtaps, 0.9 * nyquist_out, window=("kaiser", beta), fs=fs_up)
    out = sps.resample_poly(w.samples, up, down, window=taps)
    logger.debug(f"Resampled {w.sample_rate} -> {target_rate} Hz ({numtaps} taps)")
    return Waveform(out, int(target_rate))


# ============================================================================
# Filtering
# ============================================================================


def default_numtaps(sample_rate: int, lowest_cutoff: float) -> int:
    """About four periods of the lowest cutoff (at least MIN_NUMTAPS), forced odd."""
    return max(int(math.ceil(4.0 * sample_rate / lowest_cutoff)), MIN_NUMTAPS) | 1


def design_fir(spec: FilterSpec, sample_rate: int) -> np.ndarray:
    """Linear-phase FIR taps for a highpass/lowpass/bandpass spec.

    Highpass and bandpass are built from unity-DC lowpass prototypes, which
    gives them exactly zero gain at DC. Prototype cutoffs sit half a transition
    band outside the passband, so every requested edge is within 3 dB of unity.

    Raises:
        SignalError: if a cutoff is at or above Nyquist
    """
    nyquist = sample_rate / 2.0
    for cutoff in spec.cutoffs:
        if cutoff >= nyquist:
            raise SignalError(f"Cutoff {cutoff} Hz is not below Nyquist ({nyquist} Hz)")
    numtaps = (spec.order or default_numtaps(sample_rate, min(spec.cutoffs))) | 1

    half_transition = 0.5 * HAMMING_TRANSITION * sample_rate / numtaps

    def lowpass(cutoff: float) -> np.ndarray:
        return sps.firwin(numtaps, cutoff, window="hamming", fs=sample_rate)

    def above(edge: float) -> float:
        return min(edge + half_transition, 0.5 * (edge + nyquist))

    def below(edge: float) -> float:
        return max(edge - half_transition, 0.5 * edge)

    if spec.kind == FilterKind.LOWPASS:
        return lowpass(above(spec.cutoffs[0]))
    if spec.kind == FilterKind.HIGHPASS:
        taps = -lowpass(below(spec.cutoffs[0]))
        taps[numtaps // 2] += 1.0
        return taps
    if spec.kind == FilterKind.BANDPASS:
        low, high = spec.cutoffs
        return lowpass(above(high)) - lowpass(below(low))
    raise SignalError(f"{spec.kind.value} is not an FIR filter")


def fir_filter(samples: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-phase application of odd-length taps with reflected edges."""
    pad = taps.shape[0] // 2
    if samples.shape[0] < 2:
        padded = np.pad(samples, pad, mode="edge")
    else:
        padded = np.pad(samples, pad, mode="reflect")
    return sps.oaconvolve(padded, taps, mode="valid")


def apply_filter(w: Waveform, f: FilterSpec, noise_profile: Optional[Waveform] = None) -> Waveform:
    """Apply a FilterSpec. Output has the input's length and rate.

    For kind=wiener the noise profile is estimated from the quietest frames
    unless one is given.
    """
    if f.kind == FilterKind.WIENER:
        profile = noise_profile if noise_profile is not None else estimate_noise_profile(w)
        return wiener_denoise(w, profile)
    taps = design_fir(f, w.sample_rate)
    return w.with_samples(fir_filter(w.samples, taps))


def wiener_denoise(w: Waveform, noise_profile: Waveform) -> Waveform:
    """Short-time Wiener gain using a stationary noise power estimate.

    Per bin, G = max(1 - Pn / |Y|^2, 0) where Pn is the mean noise power of
    the profile. A zero profile gives G = 1 and perfect reconstruction.

    Raises:
        SignalError: on empty profile or mismatched sample rates
    """
    if len(noise_profile) == 0:
        raise SignalError("noise_profile must be nonempty")
    if noise_profile.sample_rate != w.sample_rate:
        raise SignalError(
            f"Sample rate mismatch: signal {w.sample_rate} Hz, noise {noise_profile.sample_rate} Hz"
        )
    if len(w) == 0:
        return w

    nperseg = WIENER_NPERSEG
    noverlap = nperseg // 2
    noise = noise_profile.samples
    if noise.shape[0] < nperseg:
        noise = np.pad(noise, (0, nperseg - noise.shape[0]))
    _, _, noise_stft = sps.stft(noise, window="hann", nperseg=nperseg, noverlap=noverlap)
    noise_power = np.mean(np.abs(noise_stft) ** 2, axis=1, keepdims=True)

    x = w.samples
    if x.shape[0] < nperseg:
        x = np.pad(x, (0, nperseg - x.shape[0]))
    _, _, spec = sps.stft(x, window="hann", nperseg=nperseg, noverlap=noverlap)
    power = np.abs(spec) ** 2
    ratio = np.divide(noise_power, power, out=np.ones_like(power), where=power > 0)
    gain = np.maximum(1.0 - ratio, 0.0)
    _, out = sps.istft(spec * gain, window="hann", nperseg=nperseg, noverlap=noverlap)

    n = len(w)
    out = out[:n] if out.shape[0] >= n else np.pad(out, (0, n - out.shape[0]))
    return w.with_samples(out)


# ============================================================================
# Time-frequency analysis
# ============================================================================


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def stft(w: Waveform, spec: FrameSpec) -> Spectrogram:
    """Magnitude STFT on non-centered frames.

    Raises:
        SignalError: if the waveform is shorter than one window
    """
    window, hop = spec.samples(w.sample_rate)
    if len(w) < window:
        raise SignalError(f"Signal of {len(w)} samples is shorter than one window ({window})")
    nfft = next_pow2(window)
    taper = sps.get_window(spec.window_function.value, window, fftbins=True)
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, window)[::hop]
    mags = np.abs(np.fft.rfft(frames * taper, n=nfft, axis=1)).T
    times = (np.arange(frames.shape[0]) * hop + window / 2.0) / w.sample_rate
    return Spectrogram(
        magnitudes=mags,
        bin_frequencies=np.fft.rfftfreq(nfft, d=1.0 / w.sample_rate),
        frame_times=times,
        scale="linear",
        nfft=nfft,
    )


def cqt_bin_count(bins_per_octave: int, f_min: float, f_max: float) -> int:
    """floor(B * log2(f_max / f_min)), so every bin center stays below f_max."""
    return int(math.floor(bins_per_octave * math.log2(f_max / f_min) + 1e-9))


def cqt(
    w: Waveform,
    bins_per_octave: int = 48,
    f_min: float = 32.7,
    f_max: float = 2000.0,
    hop_length: int = 64,
) -> Spectrogram:
    """Constant-Q magnitude spectrogram (librosa), log-spaced bins from f_min.

    hop_length must be divisible by 2**(n_octaves - 1) because the transform
    halves the rate once per octave.

    Raises:
        SignalError: for f_max above Nyquist, f_min >= f_max, or a bad hop
    """
    if bins_per_octave < 1:
        raise SignalError(f"bins_per_octave must be >= 1, got {bins_per_octave}")
    if not 0 < f_min < f_max:
        raise SignalError(f"Need 0 < f_min < f_max, got {f_min}, {f_max}")
    if f_max > w.sample_rate / 2.0:
        raise SignalError(f"f_max {f_max} Hz exceeds Nyquist ({w.sample_rate / 2.0} Hz)")
    n_bins = cqt_bin_count(bins_per_octave, f_min, f_max)
    if n_bins < 1:
        raise SignalError(f"No CQT bins between {f_min} and {f_max} Hz")
    n_octaves = int(math.ceil(n_bins / bins_per_octave))
    if hop_length % (2 ** (n_octaves - 1)) != 0:
        raise SignalError(
            f"hop_length {hop_length} must be a multiple of {2 ** (n_octaves - 1)} for {n_octaves} octaves"
        )

    try:
        coeffs = librosa.cqt(
            w.samples,
            sr=w.sample_rate,
            hop_length=hop_length,
            fmin=f_min,
            n_bins=n_bins,
            bins_per_octave=bins_per_octave,
        )
    except librosa.util.exceptions.ParameterError as e:
        raise SignalError(f"CQT failed: {e}") from e

    mags = np.abs(coeffs)
    return Spectrogram(
        magnitudes=mags,
        bin_frequencies=librosa.cqt_frequencies(n_bins, fmin=f_min, bins_per_octave=bins_per_octave),
        frame_times=librosa.frames_to_time(
            np.arange(mags.shape[1]), sr=w.sample_rate, hop_length=hop_length
        ),
        scale="log",
    )


# ============================================================================
# Correlation
# ============================================================================


def pearson(x, y) -> float:
    """Pearson correlation; 0.0 when either sequence has zero variance.

    Raises:
        SignalError: on length mismatch or fewer than two samples
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise SignalError(f"Length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise SignalError("pearson needs at least two samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(xc, yc) / denom, -1.0, 1.0))


def pearson_matrix(a_rows: np.ndarray, b_rows: np.ndarray) -> np.ndarray:
    """Pearson correlation of every row of a_rows against every row of b_rows."""
    a = np.asarray(a_rows, dtype=np.float64)
    b = np.asarray(b_rows, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise SignalError(f"Row length mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] < 2:
        raise SignalError("pearson needs at least two samples")

    def standardize(rows: np.ndarray) -> np.ndarray:
        centered = rows - rows.mean(axis=1, keepdims=True)
        norms = np.sqrt(np.sum(centered**2, axis=1, keepdims=True))
        flat = (np.ptp(rows, axis=1, keepdims=True) == 0) | (norms == 0)
        return np.where(flat, 0.0, centered / np.where(flat, 1.0, norms))

    return np.clip(standardize(a) @ standardize(b).T, -1.0, 1.0)
