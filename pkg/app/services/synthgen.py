"""Synthetic air/bone corpus generator.

Physics used here:
- AC  = clear + background speakers + white noise at a target SNR.
- BC  = g(clear) + body-motion noise at a target SNR, where
        g = per-band attenuation . lowpass(cutoff) . (x + c*x^2).
- Delay: bc[n] = bc0[n + delay], so a positive delay means BC leads AC.

Attack scenes substitute the AC and/or BC source (see render_pair). Every
random draw comes from a numpy Generator seeded from (seed, component), so
output is a pure function of the inputs.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps

from app.errors import CorpusIOError, SignalError
from app.schemas.signal import FilterSpec
from app.schemas.synth import (
    AttackClass,
    BcChannel,
    Condition,
    CorpusEntry,
    SceneMix,
    SceneSpec,
    VocalModel,
)
from app.services import audio_io
from app.services.signal_core import Waveform, design_fir, fir_filter, normalize, shift

logger = logging.getLogger(__name__)

PIPELINE_RATE = 8000

# Documented parameter ranges for sampled speakers
PITCH_RANGE_HZ = (90.0, 260.0)
FORMANT_RANGES_HZ = ((300.0, 800.0), (900.0, 2300.0), (2400.0, 3300.0))
FORMANT_BANDWIDTH_HZ = (60.0, 150.0)
BC_CUTOFF_RANGE_HZ = (1200.0, 2000.0)
BC_BAND_GAIN_RANGE = (0.2, 1.0)
BC_BANDS = 4
BC_NONLINEARITY_RANGE = (0.05, 0.4)

BC_LOW_EDGE_HZ = 20.0
MOTION_BAND_HZ = (20.0, 150.0)
ASPIRATION_LEVEL = 0.01
SILENT_BC_RMS = 0.03
OUTPUT_PEAK = 0.9

# Accelerometer rendering (m/s^2)
GRAVITY = 9.81
ACCEL_SPEECH_SCALE = 0.5
ACCEL_SWAY = 0.05
ACCEL_SENSOR_NOISE = 0.002


@dataclass(frozen=True)
class MachineProfile:
    """Loudspeaker-to-device vibration model: (center Hz, Q, gain) resonances."""
    resonances: tuple[tuple[float, float, float], ...]
    quadratic: float
    cubic: float
    direct_gain: float = 0.15
    noise_db: float = -40.0


MACHINE_PROFILES: dict[str, MachineProfile] = {
    "laptop": MachineProfile(
        resonances=((1150.0, 12.0, 1.0), (1620.0, 15.0, 0.8), (640.0, 8.0, 0.3),
                    (2450.0, 10.0, 0.4), (3200.0, 10.0, 0.3)),
        quadratic=0.3, cubic=0.15,
    ),
    "phone": MachineProfile(
        resonances=((1380.0, 14.0, 1.0), (1880.0, 16.0, 0.9), (870.0, 8.0, 0.3),
                    (2750.0, 12.0, 0.4), (3400.0, 12.0, 0.25)),
        quadratic=0.4, cubic=0.25,
    ),
    "conference": MachineProfile(
        resonances=((1050.0, 10.0, 1.0), (1480.0, 12.0, 0.9), (1760.0, 14.0, 0.7),
                    (560.0, 6.0, 0.35), (2900.0, 10.0, 0.3)),
        quadratic=0.2, cubic=0.1,
    ),
}


@dataclass(eq=False)
class AirBonePair:
    """A coupled AC/BC utterance pair with provenance."""

    ac: Waveform
    bc: Waveform
    speaker_id: Optional[str] = None
    scene: Optional[SceneSpec] = None
    ground_truth: Optional[str] = None
    pair_id: Optional[str] = None
    ac_clean: Optional[Waveform] = None
    bc_clean: Optional[Waveform] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.ac) == 0 or len(self.bc) == 0:
            raise SignalError("AirBonePair needs nonempty AC and BC")
        if self.scene is not None and self.ground_truth != self.scene.ground_truth:
            raise SignalError(
                f"ground_truth {self.ground_truth} contradicts scene attack {self.scene.attack.value}"
            )


def _rng(seed: int, *component: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *component]))


# ============================================================================
# Speakers
# ============================================================================


def sample_vocal_model(
    speaker_id: str, rng: np.random.Generator, pitch_f0: Optional[float] = None
) -> VocalModel:
    """Draw a speaker from the documented parameter ranges."""
    if pitch_f0 is None:
        pitch_f0 = rng.uniform(*PITCH_RANGE_HZ)
    formants = tuple(
        (float(rng.uniform(*center)), float(rng.uniform(*FORMANT_BANDWIDTH_HZ)))
        for center in FORMANT_RANGES_HZ
    )
    channel = BcChannel(
        lowpass_cutoff=float(rng.uniform(*BC_CUTOFF_RANGE_HZ)),
        attenuation_profile=tuple(float(g) for g in rng.uniform(*BC_BAND_GAIN_RANGE, size=BC_BANDS)),
        nonlinearity_coeff=float(rng.uniform(*BC_NONLINEARITY_RANGE)),
    )
    return VocalModel(
        speaker_id=speaker_id, pitch_f0=float(pitch_f0), formants=formants, bc_channel=channel
    )


def sample_speakers(n: int, seed: int, prefix: str = "spk") -> list[VocalModel]:
    """n speakers with stratified pitches and pairwise-distinct BC channels."""
    if n < 1:
        raise SignalError(f"Need at least one speaker, got {n}")
    rng = _rng(seed, 0)
    low, high = PITCH_RANGE_HZ
    strata = (np.arange(n) + rng.uniform(0.2, 0.8, size=n)) / n
    pitches = low + (high - low) * rng.permutation(strata)
    speakers: list[VocalModel] = []
    seen: set[tuple] = set()
    for i in range(n):
        model = sample_vocal_model(f"{prefix}{i:02d}", rng, pitch_f0=pitches[i])
        while model.bc_channel.signature() in seen:
            model = sample_vocal_model(model.speaker_id, rng, pitch_f0=pitches[i])
        seen.add(model.bc_channel.signature())
        speakers.append(model)
    return speakers


# ============================================================================
# Clear speech
# ============================================================================


def _resonator(center: float, bandwidth: float, fs: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-pole resonator with unity gain at its center frequency."""
    r = math.exp(-math.pi * bandwidth / fs)
    theta = 2.0 * math.pi * center / fs
    a = np.array([1.0, -2.0 * r * math.cos(theta), r * r])
    gain = (1.0 - r) * math.sqrt(1.0 - 2.0 * r * math.cos(2.0 * theta) + r * r)
    return np.array([gain]), a


def _voiced_segment(model: VocalModel, length: int, rng: np.random.Generator, fs: int) -> np.ndarray:
    t = np.arange(length) / fs
    f0 = model.pitch_f0 * rng.uniform(0.95, 1.05)
    vibrato = 0.02 * np.sin(2.0 * math.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * math.pi))
    declination = -0.04 * t / max(t[-1], 1e-9)
    contour = f0 * (1.0 + vibrato + declination)
    phase = np.cumsum(contour) / fs
    pulses = (np.diff(np.floor(phase), prepend=0.0) > 0).astype(np.float64)
    source = sps.lfilter([1.0], [1.0, -0.95], pulses)

    out = source
    for center, bandwidth in model.formants:
        scaled = min(center * rng.uniform(0.85, 1.15), 0.48 * fs)
        b, a = _resonator(scaled, bandwidth, fs)
        out = sps.lfilter(b, a, out)

    peak = np.max(np.abs(out))
    if peak > 0:
        out = out / peak
    envelope = np.sin(np.pi * np.arange(length) / max(length - 1, 1))
    return rng.uniform(0.5, 1.0) * envelope * out


def synth_utterance(
    model: VocalModel, duration_s: float, seed: int, sample_rate: int = PIPELINE_RATE
) -> Waveform:
    """Render the clear signal: pulse-train syllables through the formant filters.

    Syllables (150-400 ms) alternate with unvoiced gaps of 30-60% of the
    preceding syllable, after 50-150 ms of leading silence, so at least 10%
    of the utterance is unvoiced.

    Raises:
        SignalError: if duration_s is outside [1, 30]
    """
    if duration_s <= 0:
        raise SignalError(f"duration_s must be positive, got {duration_s}")
    if not 1.0 <= duration_s <= 30.0:
        raise SignalError(f"duration_s must be within [1, 30] s, got {duration_s}")
    rng = _rng(seed, 1)
    n = int(round(duration_s * sample_rate))
    out = rng.normal(0.0, ASPIRATION_LEVEL, n)

    pos = int(rng.uniform(0.05, 0.15) * sample_rate)
    tail = int(0.1 * sample_rate)
    placed = 0
    while True:
        syllable = int(rng.uniform(0.15, 0.40) * sample_rate)
        if pos + syllable > n - tail:
            break
        out[pos:pos + syllable] += _voiced_segment(model, syllable, rng, sample_rate)
        pos += syllable + int(rng.uniform(0.3, 0.6) * syllable)
        placed += 1
    if placed == 0:
        syllable = max(n - pos - tail, int(0.05 * sample_rate))
        out[pos:pos + syllable] += _voiced_segment(model, syllable, rng, sample_rate)[: n - pos]
    return normalize(Waveform(out, sample_rate))


# ============================================================================
# Channels and noise
# ============================================================================


def apply_bc_channel(clear: Waveform, channel: BcChannel) -> Waveform:
    """g(clear): quadratic distortion, band limiting, then per-band attenuation."""
    fs = clear.sample_rate
    x = clear.samples
    y = x + channel.nonlinearity_coeff * x**2
    band = FilterSpec.bandpass(BC_LOW_EDGE_HZ, 0.92 * channel.lowpass_cutoff, order=801)
    y = fir_filter(y, design_fir(band, fs))

    gains = channel.attenuation_profile
    width = channel.lowpass_cutoff / len(gains)
    centers = [(k + 0.5) * width for k in range(len(gains))]
    freqs = [0.0, *centers, channel.lowpass_cutoff, fs / 2.0]
    curve = [gains[0], *gains, gains[-1], gains[-1]]
    shaping = sps.firwin2(257, freqs, curve, fs=fs)
    return clear.with_samples(fir_filter(y, shaping))


def scale_to_snr(reference: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    ref_power = float(np.mean(reference**2))
    noise_power = float(np.mean(noise**2))
    if noise_power == 0 or ref_power == 0:
        return np.zeros_like(noise)
    return noise * math.sqrt(ref_power / (noise_power * 10.0 ** (snr_db / 10.0)))


def motion_noise(n: int, fs: int, condition: Condition, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS body-motion noise for a wearer condition.

    A leaky random walk band-limited to 20-150 Hz, shaped per condition, plus
    decaying low-frequency bursts (footsteps, jaw and head clicks).
    """
    t = np.arange(n) / fs
    walk = sps.lfilter([1.0], [1.0, -0.99], rng.normal(size=n))
    band = design_fir(FilterSpec.bandpass(*MOTION_BAND_HZ, order=801), fs)
    base = fir_filter(walk, band)
    base /= max(float(np.sqrt(np.mean(base**2))), 1e-12)
    floor = rng.normal(size=n)

    if condition == Condition.STILL:
        noise = 0.3 * base + floor
        burst_rate = 0.0
    elif condition == Condition.TURNING:
        sweep = 1.0 + 0.3 * np.sin(2.0 * math.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 2 * math.pi))
        noise = sweep * base + 0.3 * floor
        burst_rate = 0.5
    elif condition == Condition.NODDING:
        nod = 1.0 + 0.3 * np.abs(np.sin(2.0 * math.pi * rng.uniform(1.5, 3.0) * t))
        noise = nod * base + 0.3 * floor
        burst_rate = 0.5
    else:
        noise = base + 0.3 * floor
        burst_rate = 2.0

    n_bursts = rng.poisson(burst_rate * n / fs)
    for start in rng.integers(0, max(n - 1, 1), size=n_bursts):
        length = min(int(rng.uniform(0.05, 0.12) * fs), n - start)
        tb = np.arange(length) / fs
        decay = np.exp(-tb / rng.uniform(0.01, 0.04))
        burst = np.sin(2.0 * math.pi * rng.uniform(30.0, 120.0) * tb) * decay
        noise[start:start + length] += rng.uniform(1.0, 3.0) * burst

    return noise / max(float(np.sqrt(np.mean(noise**2))), 1e-12)


def room_response(rng: np.random.Generator, fs: int) -> np.ndarray:
    """Loudspeaker band (150 Hz-3.6 kHz) followed by an exponentially decaying room tail."""
    rt60 = rng.uniform(0.2, 0.5)
    n = int(rt60 * fs)
    t = np.arange(n) / fs
    tail = 0.3 * rng.normal(size=n) * np.exp(-6.9 * t / rt60)
    tail[0] = 1.0
    device = design_fir(FilterSpec.bandpass(150.0, min(3600.0, 0.45 * fs), order=255), fs)
    return np.convolve(tail, device)


def replay_through_room(source: Waveform, seed: int) -> Waveform:
    h = room_response(_rng(seed, 7), source.sample_rate)
    out = sps.oaconvolve(source.samples, h)[: len(source)]
    return normalize(source.with_samples(out))


def synth_machine_bc(source_ac: Waveform, device_profile: str, seed: int) -> Waveform:
    """Vibration a loudspeaker induces in the device, before band capture.

    Device nonlinearity adds harmonics, then a resonance comb in 500 Hz-3.5 kHz
    (strongest between 1 and 2 kHz) colors the result.

    Raises:
        SignalError: for an empty source or unknown device profile
    """
    if len(source_ac) == 0:
        raise SignalError("source_ac must be nonempty")
    profile = MACHINE_PROFILES.get(device_profile)
    if profile is None:
        raise SignalError(
            f"Unknown device profile '{device_profile}', expected one of {sorted(MACHINE_PROFILES)}"
        )
    fs = source_ac.sample_rate
    x = normalize(source_ac).samples
    driven = x + profile.quadratic * x**2 + profile.cubic * x**3
    driven = driven - driven.mean()

    out = profile.direct_gain * driven
    for center, q, gain in profile.resonances:
        if center >= 0.5 * fs:
            continue
        b, a = sps.iirpeak(center, q, fs=fs)
        out = out + gain * sps.lfilter(b, a, driven)

    rng = _rng(seed, 11)
    noise = scale_to_snr(out, rng.normal(size=out.shape[0]), -profile.noise_db)
    return normalize(source_ac.with_samples(out + noise))


# ============================================================================
# Pairs
# ============================================================================


def _background_mix(
    clear: Waveform, scene: SceneSpec, seed: int, models: Sequence[VocalModel]
) -> np.ndarray:
    mix = np.zeros(len(clear))
    if scene.background_speakers == 0:
        return mix
    rng = _rng(seed, 3)
    pool = list(models)
    while len(pool) < scene.background_speakers:
        pool.append(sample_vocal_model(f"bg{len(pool)}", rng))
    duration = len(clear) / clear.sample_rate
    for k in range(scene.background_speakers):
        other = synth_utterance(pool[k], max(duration, 1.0), seed * 31 + k + 1, clear.sample_rate)
        talk = other.samples[: len(clear)]
        mix[: talk.shape[0]] += scale_to_snr(clear.samples, talk, -scene.background_level_db)
    return mix


def render_pair(
    clear: Waveform,
    model: VocalModel,
    scene: SceneSpec,
    seed: int,
    *,
    background_models: Sequence[VocalModel] = (),
    attacker_model: Optional[VocalModel] = None,
    attacker_clear: Optional[Waveform] = None,
    source: Optional[Waveform] = None,
    pair_id: Optional[str] = None,
) -> AirBonePair:
    """Couple a clear signal into AC and BC observations for a scene.

    Attack substitutions:
    - false_trigger: BC is motion noise only.
    - acoustic_impersonation: AC is attacker_clear; BC is silent (motion noise).
    - acoustic_replay: AC is `source` through a room/loudspeaker; BC is silent.
    - crossdomain_impersonation: attacker's own AC and g_attacker(BC).
    - crossdomain_machine: legitimate AC; BC from synth_machine_bc.

    Raises:
        SignalError: if the scene needs inputs that were not given, or the
            delay is not below half the utterance length
    """
    fs = clear.sample_rate
    n = len(clear)
    if abs(scene.delay_samples) >= n / 2:
        raise SignalError(f"|delay| {abs(scene.delay_samples)} must be below half the utterance ({n // 2})")

    attack = scene.attack
    if attack in (AttackClass.ACOUSTIC_IMPERSONATION, AttackClass.CROSSDOMAIN_IMPERSONATION):
        if attacker_clear is None:
            raise SignalError(f"{attack.value} needs attacker_clear")
        if attack == AttackClass.CROSSDOMAIN_IMPERSONATION and attacker_model is None:
            raise SignalError(f"{attack.value} needs attacker_model")
    if attack == AttackClass.ACOUSTIC_REPLAY and source is None:
        raise SignalError("acoustic_replay needs a source utterance")
    if attack == AttackClass.CROSSDOMAIN_MACHINE and scene.device_profile is None:
        raise SignalError("crossdomain_machine needs scene.device_profile")

    def fit(w: Waveform) -> Waveform:
        x = w.samples[:n]
        return Waveform(np.pad(x, (0, n - x.shape[0])), fs)

    # AC clean component
    if attack in (AttackClass.ACOUSTIC_IMPERSONATION, AttackClass.CROSSDOMAIN_IMPERSONATION):
        ac_clean = fit(attacker_clear)
    elif attack == AttackClass.ACOUSTIC_REPLAY:
        ac_clean = fit(replay_through_room(source, seed))
    else:
        ac_clean = clear

    # BC clean component (None means the wearer is silent)
    if attack == AttackClass.NONE:
        bc_clean = apply_bc_channel(clear, model.bc_channel)
    elif attack == AttackClass.CROSSDOMAIN_IMPERSONATION:
        bc_clean = apply_bc_channel(ac_clean, attacker_model.bc_channel)
    elif attack == AttackClass.CROSSDOMAIN_MACHINE:
        bc_clean = synth_machine_bc(ac_clean, scene.device_profile, seed)
    else:
        bc_clean = None

    ac = ac_clean.samples + _background_mix(ac_clean, scene, seed, background_models)
    if scene.ac_snr_db is not None:
        ac = ac + scale_to_snr(ac_clean.samples, _rng(seed, 4).normal(size=n), scene.ac_snr_db)

    motion = motion_noise(n, fs, scene.condition, _rng(seed, 5))
    if bc_clean is None:
        bc = SILENT_BC_RMS * motion
    else:
        bc_clean = shift(bc_clean, scene.delay_samples)
        bc = bc_clean.samples.copy()
        if scene.bc_snr_db is not None:
            bc = bc + scale_to_snr(bc_clean.samples, motion, scene.bc_snr_db)

    # Common gain per domain keeps the clean references consistent with the mixtures
    ac_gain = OUTPUT_PEAK / max(float(np.max(np.abs(ac))), 1e-12)
    bc_gain = OUTPUT_PEAK / max(float(np.max(np.abs(bc))), 1e-12)
    return AirBonePair(
        ac=Waveform(ac * ac_gain, fs),
        bc=Waveform(bc * bc_gain, fs),
        speaker_id=model.speaker_id,
        scene=scene,
        ground_truth=scene.ground_truth,
        pair_id=pair_id,
        ac_clean=ac_clean.with_samples(ac_clean.samples * ac_gain),
        bc_clean=None if bc_clean is None else bc_clean.with_samples(bc_clean.samples * bc_gain),
    )


def render_accel(bc: Waveform, seed: int) -> audio_io.AccelRecord:
    """Raw 3-axis capture: speech on x, gravity on z, sway and sensor noise everywhere."""
    rng = _rng(seed, 9)
    n = len(bc)
    t = np.arange(n) / bc.sample_rate

    def sway() -> np.ndarray:
        return ACCEL_SWAY * np.sin(2.0 * math.pi * rng.uniform(0.2, 1.0) * t + rng.uniform(0, 2 * math.pi))

    x = ACCEL_SPEECH_SCALE * bc.samples + sway() + ACCEL_SENSOR_NOISE * rng.normal(size=n)
    y = sway() + ACCEL_SENSOR_NOISE * rng.normal(size=n)
    z = GRAVITY + sway() + ACCEL_SENSOR_NOISE * rng.normal(size=n)
    return audio_io.AccelRecord(np.vstack([x, y, z]), bc.sample_rate)


# ============================================================================
# Corpus
# ============================================================================


@dataclass
class Corpus:
    """A manifest loaded from disk."""

    root: Path
    entries: list[CorpusEntry]
    speakers: dict[str, VocalModel]

    def load_pair(self, entry: CorpusEntry) -> tuple[Waveform, audio_io.AccelRecord]:
        ac = audio_io.read_wav(self.root / entry.ac_path)
        bc = audio_io.read_accel(self.root / entry.bc_path)
        return ac, bc

    def by_ground_truth(self, *labels: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.ground_truth in labels]


def _weighted_choice(rng: np.random.Generator, weights: dict):
    keys = list(weights)
    p = np.array([weights[k] for k in keys], dtype=np.float64)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def draw_scene(rng: np.random.Generator, mix: SceneMix) -> SceneSpec:
    attack = _weighted_choice(rng, mix.attacks)
    delay = 0
    if mix.max_delay_samples:
        delay = int(rng.integers(-mix.max_delay_samples, mix.max_delay_samples + 1))
    return SceneSpec(
        ac_snr_db=mix.ac_snr_db[int(rng.integers(len(mix.ac_snr_db)))],
        bc_snr_db=mix.bc_snr_db[int(rng.integers(len(mix.bc_snr_db)))],
        background_speakers=mix.background_speakers[int(rng.integers(len(mix.background_speakers)))],
        background_level_db=mix.background_level_db,
        delay_samples=delay,
        attack=attack,
        condition=_weighted_choice(rng, mix.conditions),
        device_profile=(
            mix.device_profiles[int(rng.integers(len(mix.device_profiles)))]
            if attack == AttackClass.CROSSDOMAIN_MACHINE else None
        ),
    )


@dataclass(frozen=True)
class _EntryJob:
    index: int
    utterance: int
    speaker: VocalModel
    others: tuple[VocalModel, ...]
    mix: SceneMix
    seed: int
    out_dir: Path
    bc_format: str


def _render_entry(job: _EntryJob) -> CorpusEntry:
    rng = _rng(job.seed, 100, job.index)
    entry_seed = int(rng.integers(0, 2**31 - 1))
    duration = job.mix.durations_s[job.utterance % len(job.mix.durations_s)]
    scene = draw_scene(rng, job.mix)
    pair_id = f"{job.speaker.speaker_id}-{job.utterance:03d}"

    attacker = None
    kwargs: dict = {"background_models": job.others}
    if scene.attack in (AttackClass.ACOUSTIC_IMPERSONATION, AttackClass.CROSSDOMAIN_IMPERSONATION):
        if not job.others:
            raise SignalError(f"{scene.attack.value} needs at least two speakers")
        attacker = job.others[int(rng.integers(len(job.others)))]
        kwargs["attacker_model"] = attacker
        kwargs["attacker_clear"] = synth_utterance(attacker, duration, entry_seed + 1)
    elif scene.attack == AttackClass.ACOUSTIC_REPLAY:
        kwargs["source"] = synth_utterance(job.speaker, duration, entry_seed + 2)

    clear = synth_utterance(job.speaker, duration, entry_seed)
    pair = render_pair(clear, job.speaker, scene, entry_seed, pair_id=pair_id, **kwargs)

    ac_rel = Path("ac") / f"{pair_id}.wav"
    audio_io.write_wav(job.out_dir / ac_rel, pair.ac)
    bc_written = audio_io.write_accel(
        job.out_dir / "bc" / pair_id, render_accel(pair.bc, entry_seed), fmt=job.bc_format
    )
    return CorpusEntry(
        pair_id=pair_id,
        speaker_id=job.speaker.speaker_id,
        ac_path=ac_rel.as_posix(),
        bc_path=bc_written.relative_to(job.out_dir).as_posix(),
        scene=scene,
        ground_truth=scene.ground_truth,
        delay_samples=scene.delay_samples,
        condition=scene.condition,
        duration_s=duration,
        bc_channel=job.speaker.bc_channel,
        attacker_id=attacker.speaker_id if attacker else None,
        seed=entry_seed,
    )


def build_corpus(
    n_speakers: int,
    utterances_per_speaker: int,
    scene_mix: SceneMix,
    seed: int,
    out_dir,
    *,
    bc_format: str = "bin",
    workers: int = 1,
    speaker_prefix: str = "spk",
) -> list[CorpusEntry]:
    """Generate a corpus on disk and write manifest.json and speakers.json.

    Output is identical for any worker count.

    Raises:
        SignalError: for fewer than two speakers or no utterances
        CorpusIOError: on any file write failure, with the path
    """
    if n_speakers < 2:
        raise SignalError(f"A corpus needs at least 2 speakers, got {n_speakers}")
    if utterances_per_speaker < 1:
        raise SignalError(f"utterances_per_speaker must be >= 1, got {utterances_per_speaker}")
    out_dir = Path(out_dir)
    speakers = sample_speakers(n_speakers, seed, prefix=speaker_prefix)
    jobs = [
        _EntryJob(
            index=i * utterances_per_speaker + j,
            utterance=j,
            speaker=speaker,
            others=tuple(s for s in speakers if s.speaker_id != speaker.speaker_id),
            mix=scene_mix,
            seed=seed,
            out_dir=out_dir,
            bc_format=bc_format,
        )
        for i, speaker in enumerate(speakers)
        for j in range(utterances_per_speaker)
    ]
    logger.info(
        f"Building corpus: {n_speakers} speakers x {utterances_per_speaker} utterances -> {out_dir}"
    )

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_render_entry, jobs, chunksize=4))
    else:
        entries = [_render_entry(job) for job in jobs]

    write_manifest(out_dir, entries, speakers)
    return entries


def write_manifest(out_dir, entries: Sequence[CorpusEntry], speakers: Sequence[VocalModel]) -> Path:
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text(json.dumps([e.model_dump(mode="json") for e in entries], indent=2))
        (out_dir / "speakers.json").write_text(
            json.dumps([s.model_dump(mode="json") for s in speakers], indent=2)
        )
    except OSError as e:
        raise CorpusIOError(manifest_path, f"cannot write manifest: {e}") from e
    logger.info(f"Wrote {len(entries)} manifest entries to {manifest_path}")
    return manifest_path


def load_corpus(path) -> Corpus:
    """Load a corpus from its directory or its manifest.json path."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    manifest_path = root / "manifest.json" if path.is_dir() else path
    try:
        entries = [CorpusEntry.model_validate(row) for row in json.loads(manifest_path.read_text())]
        speakers_path = root / "speakers.json"
        speakers = {}
        if speakers_path.exists():
            models = [VocalModel.model_validate(r) for r in json.loads(speakers_path.read_text())]
            speakers = {m.speaker_id: m for m in models}
    except (OSError, ValueError) as e:
        raise CorpusIOError(manifest_path, f"cannot load manifest: {e}") from e
    return Corpus(root=root, entries=entries, speakers=speakers)
