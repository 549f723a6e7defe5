"""Dual-comb heterodyne measurement and closed-loop programming of channel phases.

A probe EO comb at the channel spacing goes through the shaper and is beaten
against a reference comb with a slightly higher repetition rate. Line ``n``
of the pair beats at the signed frequency ``n (f_probe - f_ref)``; that
signed value (in units of the rep-rate offset) is the *beat label* used
throughout, so the high-frequency-side lines carry negative labels.

Channel vectors are ordered as follows. Shared layout: channel ``j`` is the
ring seen by probe line ``-(j+2)`` (beat ``100 + 50 j`` MHz), which carries
idler bin ``j+1``, i.e. the vector equals ``config.idler_phases``. Distinct
layout: ``[phi_1^(s) .. phi_d^(s), phi_1^(i) .. phi_d^(i)]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .comb import Mode, ShaperConfig, apply_phases, wrap_phase, wrap_to_pi

DEFAULT_CW = 193.2e12
F_PROBE = 3.0e9
F_REF = 3.05e9
DEFAULT_SAMPLE_RATE = 2e9
DEFAULT_DURATION = 400e-9


@dataclass(frozen=True)
class EOComb:
    center_frequency: float
    rep_rate: float
    line_indices: np.ndarray
    line_amplitudes: np.ndarray
    line_phases: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.line_indices, dtype=int)
        amp = np.broadcast_to(np.asarray(self.line_amplitudes, dtype=float), idx.shape).copy()
        ph = np.broadcast_to(np.asarray(self.line_phases, dtype=float), idx.shape).copy()
        if np.any(amp < 0):
            raise ValueError("line amplitudes must be nonnegative")
        if len(set(idx.tolist())) != idx.size:
            raise ValueError("duplicate line indices")
        object.__setattr__(self, "line_indices", idx)
        object.__setattr__(self, "line_amplitudes", amp)
        object.__setattr__(self, "line_phases", ph)

    @classmethod
    def flat(cls, rep_rate, n_lines=10, center=DEFAULT_CW, phases=0.0):
        idx = np.arange(-n_lines, n_lines + 1)
        return cls(center, rep_rate, idx, 1.0, phases)

    @property
    def frequencies(self) -> np.ndarray:
        return self.center_frequency + self.line_indices * self.rep_rate

    def field(self) -> dict[int, complex]:
        return {
            int(n): a * np.exp(1j * p)
            for n, a, p in zip(self.line_indices, self.line_amplitudes, self.line_phases)
        }


def default_combs(common_phases=0.0, n_lines=10):
    """Probe at 3 GHz and reference at 3.05 GHz sharing one spectral phase profile."""
    probe = EOComb.flat(F_PROBE, n_lines, phases=common_phases)
    ref = EOComb.flat(F_REF, n_lines, phases=common_phases)
    return probe, ref


@dataclass(frozen=True)
class PDTrace:
    samples: np.ndarray
    sample_rate: float

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class BeatSpectrum:
    beat_indices: np.ndarray
    frequencies: np.ndarray
    complex_amplitudes: np.ndarray
    record_length: float
    sample_rate: float

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.complex_amplitudes)

    def amplitude_at(self, label: int) -> complex:
        hits = np.flatnonzero(self.beat_indices == label)
        if hits.size == 0:
            raise KeyError(label)
        return complex(self.complex_amplitudes[hits[0]])


@dataclass(frozen=True)
class PhaseActuator:
    """Heater stand-in: phase = offset + gain * drive**2 (wrapped)."""

    gain: float = 1.0
    offset: float = 0.0
    drive: float = 0.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("actuator gain must be positive")

    @property
    def phase(self) -> float:
        return float(wrap_phase(self.offset + self.gain * self.drive**2))


@dataclass(frozen=True)
class CalibrationRecord:
    layout: Mode
    raw_phases: np.ndarray
    reference_channel_ids: tuple[int, int]
    corrected_phases: np.ndarray
    iterations: int
    residual: float
    converged: bool = True
    target: np.ndarray | None = None
    history: tuple[float, ...] = ()
    actuators: tuple[PhaseActuator, ...] = ()

    @property
    def errors(self) -> np.ndarray:
        return wrap_to_pi(self.target - self.corrected_phases)


class ConvergenceError(RuntimeError):
    def __init__(self, record: CalibrationRecord):
        super().__init__(
            f"phase loop did not converge in {record.iterations} iterations "
            f"(residual {record.residual:.3g} rad)"
        )
        self.record = record


# -- layout bookkeeping ----------------------------------------------------


def probe_lines(layout: Mode, d: int, subcomb_bins: int | None = None) -> np.ndarray:
    """Probe comb line index passing through each channel, in channel order."""
    layout = Mode(layout)
    k = np.arange(1, d + 1)
    if layout is Mode.SHARED:
        return -(k + 1)
    if subcomb_bins is None:
        raise ValueError("distinct layout needs the subcomb separation in bins")
    signal = k + 1
    idler = d + 2 - subcomb_bins - k
    lines = np.concatenate([signal, idler])
    if np.any(idler >= 0) or len(set(np.abs(lines).tolist())) != lines.size:
        raise ValueError(
            f"subcomb separation of {subcomb_bins} bins gives ambiguous beat notes for d={d}"
        )
    return lines


def beat_labels(layout: Mode, d: int, subcomb_bins: int | None = None) -> np.ndarray:
    """Signed beat frequencies in units of the rep-rate offset, channel order."""
    return -probe_lines(layout, d, subcomb_bins)


def layout_of(config: ShaperConfig):
    return config.mode, config.dimension, config.grid.subcomb_bins


def channel_phases(config: ShaperConfig) -> np.ndarray:
    if config.mode is Mode.SHARED:
        return np.array(config.idler_phases)
    return np.concatenate([config.signal_phases, config.idler_phases])


def with_channel_phases(config: ShaperConfig, phases) -> ShaperConfig:
    v = np.asarray(phases, dtype=float)
    d = config.dimension
    if config.mode is Mode.SHARED:
        if v.shape != (d,):
            raise ValueError(f"shared layout has {d} channels")
        return apply_phases(config, v[::-1])
    if v.shape != (2 * d,):
        raise ValueError(f"distinct layout has {2 * d} channels")
    return apply_phases(config, v[:d], v[d:])


def default_reference_ids(layout: Mode, d: int) -> tuple[int, int]:
    if Mode(layout) is Mode.SHARED:
        return (0, d - 1)
    return (0, d)


# -- measurement chain -----------------------------------------------------


def synthesize_pd_signal(
    probe: EOComb,
    reference: EOComb,
    shaper: ShaperConfig | None,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    duration: float = DEFAULT_DURATION,
    *,
    noise_rms: float = 0.0,
    rng: np.random.Generator | None = None,
) -> PDTrace:
    """Photocurrent of probe + reference after the PD low-pass.

    Only same-index line pairs beat inside the detection band, so the trace
    is ``sum|p_n|^2 + sum|r_n|^2 + 2 Re sum_n p_n r_n* exp(2 pi i n (f_p - f_r) t)``.
    With a shaper, only probe lines sitting on a channel are transmitted, each
    with that channel's phase and unit on-resonance amplitude. ``noise_rms``
    is white Gaussian noise relative to the mean photocurrent.
    """
    if not np.isclose(probe.center_frequency, reference.center_frequency, rtol=1e-12):
        raise ValueError("probe and reference must share the CW carrier")
    dfrep = reference.rep_rate - probe.rep_rate
    if dfrep == 0:
        raise ValueError("combs need different repetition rates")
    periods = duration * abs(dfrep)
    n_samples = duration * sample_rate
    if abs(periods - round(periods)) > 1e-6 or round(periods) < 1:
        raise ValueError("record length must be an integer number of beat periods")
    if abs(n_samples - round(n_samples)) > 1e-6:
        raise ValueError("record length must hold an integer number of samples")

    p_field = probe.field()
    if shaper is not None:
        layout, d, sep = layout_of(shaper)
        lines = probe_lines(layout, d, sep)
        phases = channel_phases(shaper)
        p_field = {
            int(n): p_field[int(n)] * np.exp(1j * ph)
            for n, ph in zip(lines, phases)
            if int(n) in p_field
        }
    r_field = reference.field()
    common = sorted(set(p_field) & set(r_field))
    if not common:
        raise ValueError("no probe line overlaps a reference line")
    max_beat = max(abs(n * dfrep) for n in common)
    if sample_rate <= 4 * max_beat:
        raise ValueError(
            f"sample rate {sample_rate:g} Hz aliases the {max_beat:g} Hz beat (need > 4x)"
        )

    t = np.arange(int(round(n_samples))) / sample_rate
    dc = sum(abs(v) ** 2 for v in p_field.values()) + sum(abs(v) ** 2 for v in r_field.values())
    x = np.full(t.shape, float(dc))
    for n in common:
        z = p_field[n] * np.conj(r_field[n])
        x += 2.0 * np.real(z * np.exp(2j * np.pi * (-n * dfrep) * t))
    if noise_rms > 0:
        rng = rng or np.random.default_rng()
        x = x + rng.normal(0.0, noise_rms * dc, size=x.shape)
    return PDTrace(x, sample_rate)


def extract_beat_phases(trace: PDTrace, delta_f_rep: float, beat_indices, *, snr: float = 10.0) -> BeatSpectrum:
    """Complex beat amplitudes from the FFT of a commensurate record.

    Negative labels are read at ``|m| df`` and conjugated, so each entry
    carries ``phi_probe - phi_ref`` for its line pair.
    """
    x = np.asarray(trace.samples, dtype=float)
    n = x.size
    per = trace.duration * delta_f_rep
    if abs(per - round(per)) > 1e-6 or round(per) < 1:
        raise ValueError("record length is not a multiple of 1/delta_f_rep")
    per = int(round(per))
    spectrum = np.fft.rfft(x) / n
    labels = np.asarray(beat_indices, dtype=int)
    bins = np.abs(labels) * per
    if np.any(labels == 0):
        raise ValueError("beat index 0 is DC, not a beat note")
    if np.any(bins >= spectrum.size - 1):
        raise ValueError("requested beat above the Nyquist frequency")
    mask = np.ones(spectrum.size, dtype=bool)
    mask[0] = False
    mask[bins] = False
    floor = float(np.median(np.abs(spectrum[mask]))) if mask.any() else 0.0
    amps = spectrum[bins]
    weak = np.abs(amps) <= snr * floor
    if np.any(weak):
        raise ValueError(f"beats {labels[weak].tolist()} are below {snr:g}x the noise floor")
    amps = np.where(labels < 0, np.conj(amps), amps)
    return BeatSpectrum(
        labels, np.abs(labels) * abs(delta_f_rep), amps, trace.duration, trace.sample_rate
    )


def map_beats_to_channels(
    spectrum: BeatSpectrum, layout: Mode, d: int, subcomb_bins: int | None = 9
) -> np.ndarray:
    """Raw channel phases (channel order) from the beat spectrum."""
    labels = beat_labels(layout, d, subcomb_bins if Mode(layout) is Mode.DISTINCT else None)
    out = np.empty(labels.size)
    for i, m in enumerate(labels):
        try:
            out[i] = np.angle(spectrum.amplitude_at(int(m)))
        except KeyError:
            raise ValueError(f"beat {m} missing from the spectrum") from None
    return out


def subtract_linear_reference(
    raw, layout: Mode, reference_ids=None, *, subcomb_bins: int | None = 9
) -> np.ndarray:
    """Remove the phase ramp (in probe-line index) through two reference channels.

    The reference channels come out at exactly zero; everything is wrapped
    to (-pi, pi]. The slope uses the wrapped phase difference of the pair.
    """
    raw = np.asarray(raw, dtype=float)
    layout = Mode(layout)
    d = raw.size if layout is Mode.SHARED else raw.size // 2
    if layout is Mode.DISTINCT and raw.size != 2 * d:
        raise ValueError("distinct layout needs an even number of channels")
    if raw.size == 1:
        return np.zeros(1)
    a, b = reference_ids if reference_ids is not None else default_reference_ids(layout, d)
    if a == b:
        raise ValueError("reference channels must differ")
    if not (0 <= a < raw.size and 0 <= b < raw.size):
        raise ValueError("reference channel out of range")
    x = probe_lines(layout, d, subcomb_bins if layout is Mode.DISTINCT else None).astype(float)
    if x[a] == x[b]:
        raise ValueError("degenerate reference pair")
    slope = wrap_to_pi(raw[a] - raw[b]) / (x[a] - x[b])
    line = raw[b] + slope * (x - x[b])
    out = wrap_to_pi(raw - line)
    out[[a, b]] = 0.0
    return out


def measure_channel_phases(
    config: ShaperConfig,
    probe: EOComb | None = None,
    reference: EOComb | None = None,
    *,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    duration: float = DEFAULT_DURATION,
    noise_rms: float = 0.0,
    rng=None,
) -> np.ndarray:
    """One pass of synthesize -> FFT -> map; returns raw channel phases."""
    if probe is None or reference is None:
        probe, reference = default_combs()
    layout, d, sep = layout_of(config)
    trace = synthesize_pd_signal(
        probe, reference, config, sample_rate, duration, noise_rms=noise_rms, rng=rng
    )
    dfrep = reference.rep_rate - probe.rep_rate
    spectrum = extract_beat_phases(trace, dfrep, beat_labels(layout, d, sep))
    return map_beats_to_channels(spectrum, layout, d, sep)


def mean_photocurrent(probe: EOComb, reference: EOComb, shaper: ShaperConfig | None) -> float:
    """DC level of the PD trace: reference power plus the transmitted probe power."""
    p = probe.field()
    if shaper is not None:
        layout, d, sep = layout_of(shaper)
        p = {int(n): p[int(n)] for n in probe_lines(layout, d, sep) if int(n) in p}
    return float(sum(abs(v) ** 2 for v in p.values()) + np.sum(reference.line_amplitudes**2))


def phase_noise_to_intensity_noise(noise_rad, n_samples, dc, beat_amplitude=2.0):
    """Relative PD noise giving ``noise_rad`` RMS phase error on a beat of the given amplitude."""
    return noise_rad * beat_amplitude * math.sqrt(n_samples / 2.0) / dc


def program_phases(
    target,
    actuators,
    config: ShaperConfig,
    *,
    noise_rms: float = 0.0,
    tolerance: float = 1e-3,
    max_iter: int = 10,
    damping: float = 0.7,
    gain_estimate: float | None = None,
    reference_ids=None,
    seed: int | None = None,
    probe: EOComb | None = None,
    reference: EOComb | None = None,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    duration: float = DEFAULT_DURATION,
    raise_on_failure: bool = False,
) -> CalibrationRecord:
    """Drive the actuators until the measured, reference-subtracted phases hit ``target``.

    Each iteration measures, compares against the reference-subtracted
    target, and takes a damped Newton step in heater power (drive**2) for
    every non-reference channel. The gain estimate per channel starts at
    ``gain_estimate`` (default: the mean actuator gain) and is refined by a
    secant update; channels with a refined gain take undamped steps. ``noise_rms`` is the RMS phase noise of a single beat
    reading in radians.
    """
    layout, d, sep = layout_of(config)
    n_ch = d if layout is Mode.SHARED else 2 * d
    target = np.asarray(target, dtype=float)
    if target.shape != (n_ch,):
        raise ValueError(f"target must have {n_ch} entries for this layout")
    acts = list(actuators)
    if len(acts) != n_ch:
        raise ValueError(f"need {n_ch} actuators, got {len(acts)}")
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    refs = tuple(reference_ids) if reference_ids is not None else default_reference_ids(layout, d)
    if n_ch == 1:
        refs = (0, 0)
    if probe is None or reference is None:
        probe, reference = default_combs()
    rng = np.random.default_rng(seed)

    n_samples = int(round(duration * sample_rate))
    dc = mean_photocurrent(probe, reference, config)
    rel_noise = phase_noise_to_intensity_noise(noise_rms, n_samples, dc) if noise_rms > 0 else 0.0

    def measure(acts):
        cfg = with_channel_phases(config, [a.phase for a in acts])
        raw = measure_channel_phases(
            cfg, probe, reference, sample_rate=sample_rate, duration=duration,
            noise_rms=rel_noise, rng=rng,
        )
        corr = subtract_linear_reference(raw, layout, None if n_ch == 1 else refs, subcomb_bins=sep)
        return raw, corr

    goal = subtract_linear_reference(target, layout, None if n_ch == 1 else refs, subcomb_bins=sep)
    free = [j for j in range(n_ch) if j not in refs] if n_ch > 1 else [0]
    g_hat = np.full(n_ch, gain_estimate or float(np.mean([a.gain for a in acts])))
    refined = np.zeros(n_ch, dtype=bool)
    power = np.array([a.drive**2 for a in acts])
    history = []
    prev = None
    converged = False
    raw = corr = None
    for it in range(1, max_iter + 1):
        raw, corr = measure(acts)
        if n_ch == 1:
            # single channel: only the absolute phase is meaningful
            corr = wrap_to_pi(raw)
            goal = wrap_to_pi(target)
        err = wrap_to_pi(goal - corr)
        residual = float(np.max(np.abs(err[free]))) if free else 0.0
        history.append(residual)
        if prev is not None:
            p_old, c_old = prev
            for j in free:
                dp = power[j] - p_old[j]
                dphi = float(wrap_to_pi(corr[j] - c_old[j]))
                # a step whose predicted change nears pi may have wrapped
                unambiguous = abs(g_hat[j] * dp) < 2.5
                if unambiguous and abs(dphi) > max(0.05, 5 * noise_rms):
                    g_new = dphi / dp
                    if 0.2 * g_hat[j] < g_new < 5 * g_hat[j]:
                        g_hat[j] = g_new
                        refined[j] = True
        if residual < tolerance:
            converged = True
            break
        if it == max_iter:
            break
        prev = (power.copy(), corr.copy())
        for j in free:
            p = power[j] + (1.0 if refined[j] else damping) * err[j] / g_hat[j]
            if p < 0:
                p += 2 * np.pi / g_hat[j]
            power[j] = p
            acts[j] = replace(acts[j], drive=math.sqrt(p))

    record = CalibrationRecord(
        layout, raw, refs, corr, len(history), history[-1], converged, goal,
        tuple(history), tuple(acts),
    )
    if raise_on_failure and not converged:
        raise ConvergenceError(record)
    return record


def random_actuators(n, rng, gain=1.0, gain_spread=0.2):
    """Actuators with random offsets in [0, 2pi) and gains within +-spread."""
    gains = gain * (1 + gain_spread * rng.uniform(-1, 1, n))
    offsets = rng.uniform(0, 2 * np.pi, n)
    return [PhaseActuator(g, o, 0.0) for g, o in zip(gains, offsets)]


# -- reports ---------------------------------------------------------------


def write_calibration_report(record: CalibrationRecord, path, targets=None) -> None:
    """CSV of channel id, target, measured, corrected and residual phases (rad)."""
    path = Path(path)
    tgt = record.target if targets is None else np.asarray(targets, dtype=float)
    err = wrap_to_pi(record.target - record.corrected_phases)
    lines = ["channel,target_rad,measured_rad,corrected_rad,residual_rad"]
    for j in range(record.corrected_phases.size):
        lines.append(
            f"{j},{float(tgt[j])!r},{float(record.raw_phases[j])!r},"
            f"{float(record.corrected_phases[j])!r},{float(err[j])!r}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_loop_log(record: CalibrationRecord, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "residual_rad"])
        for i, r in enumerate(record.history, start=1):
            w.writerow([i, repr(float(r))])
