"""Frequency-bin grid and microring filter-bank transfer functions.

All frequencies are angular (rad/s). Channel centres are kept as detunings
from half the pump frequency, which is where all the numerics happen; the
absolute centres are derived from them on demand.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi

#: pump of the downconversion source, f_p ~ 386.8 THz
DEFAULT_PUMP = TWO_PI * 386.8e12
#: single-ring FWHM returned by fitting the d=1 correlation, gamma/2pi = 1.3 GHz
DEFAULT_GAMMA = TWO_PI * 1.3e9
DEFAULT_FSR = TWO_PI * 115e9
DEFAULT_SPACING = TWO_PI * 3e9

#: ratio between the two-ring channel FWHM and the single-ring FWHM
CHANNEL_FWHM_RATIO = math.sqrt(math.sqrt(2.0) - 1.0)

PHASE_TOL = 1e-12


class Mode(str, enum.Enum):
    SHARED = "shared"
    DISTINCT = "distinct"


class Side(str, enum.Enum):
    SIGNAL = "signal"
    IDLER = "idler"


def wrap_phase(phi):
    """Wrap to [0, 2pi)."""
    out = np.mod(np.asarray(phi, dtype=float), TWO_PI)
    return np.where(out >= TWO_PI, 0.0, out)


def wrap_to_pi(phi):
    """Wrap to (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(phi, dtype=float), TWO_PI)
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BiphotonSource:
    """CW-pumped pair source with a flat joint spectral amplitude."""

    pump_frequency: float = DEFAULT_PUMP

    def __post_init__(self):
        if not self.pump_frequency > 0:
            raise ValueError("pump_frequency must be positive")

    def spectral_amplitude(self, detuning):
        return np.ones_like(np.asarray(detuning, dtype=float), dtype=complex)


@dataclass(frozen=True)
class ChannelGrid:
    """Signal/idler bin centres ``w_p/2 +- (k+B) dw`` for ``k = 1..d``."""

    dimension: int
    bin_spacing: float
    offset: float
    mode: Mode
    pump: BiphotonSource = field(default_factory=BiphotonSource)
    subcomb_separation: float | None = None

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension must be an integer >= 1, got {self.dimension}")
        if not self.bin_spacing > 0:
            raise ValueError("bin_spacing must be positive")
        if not self.offset > 0:
            raise ValueError("offset B must be positive")
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.DISTINCT:
            if self.subcomb_separation is None:
                raise ValueError("distinct mode needs a subcomb separation")
            _check_multiple(self.subcomb_separation, self.bin_spacing)

    @property
    def signal_detunings(self) -> np.ndarray:
        k = np.arange(1, self.dimension + 1)
        return (k + self.offset) * self.bin_spacing

    @property
    def idler_detunings(self) -> np.ndarray:
        return -self.signal_detunings

    @property
    def signal_centers(self) -> np.ndarray:
        return 0.5 * self.pump.pump_frequency + self.signal_detunings

    @property
    def idler_centers(self) -> np.ndarray:
        # exact energy matching: p - s is exact (Sterbenz) and s + (p - s) rounds to p
        return self.pump.pump_frequency - self.signal_centers

    def detunings(self, side: Side) -> np.ndarray:
        return self.signal_detunings if Side(side) is Side.SIGNAL else self.idler_detunings

    @property
    def subcomb_bins(self) -> int | None:
        """Subcomb centre-to-centre separation in units of the bin spacing."""
        if self.subcomb_separation is None:
            return None
        return int(round(self.subcomb_separation / self.bin_spacing))


def _check_multiple(separation, spacing):
    if not separation > 0:
        raise ValueError("subcomb separation must be positive")
    ratio = separation / spacing
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"subcomb separation ({separation / TWO_PI:g} Hz) is not an integer "
            f"multiple of the bin spacing ({spacing / TWO_PI:g} Hz)"
        )


@dataclass(frozen=True)
class ShaperConfig:
    """Filter bank state: grid, linewidth and per-channel phases.

    Phases are stored wrapped to [0, 2pi). ``throughput`` lumps insertion and
    facet losses; it cancels under every normalisation and is kept only as
    metadata.
    """

    grid: ChannelGrid
    gamma: float = DEFAULT_GAMMA
    signal_phases: np.ndarray = None
    idler_phases: np.ndarray = None
    fsr: float = DEFAULT_FSR
    overlap_guard: float = 2.0
    throughput: float = 10 ** (-(6.0 + 2 * 3.5) / 10)

    def __post_init__(self):
        d = self.grid.dimension
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.fsr > d * self.grid.bin_spacing:
            raise ValueError("fsr must exceed d * bin_spacing")
        if self.grid.bin_spacing < self.overlap_guard * self.gamma:
            raise ValueError(
                f"bins overlap: spacing/gamma = {self.grid.bin_spacing / self.gamma:.3g} "
                f"< guard {self.overlap_guard:g}"
            )
        sig = np.zeros(d) if self.signal_phases is None else self.signal_phases
        idl = np.zeros(d) if self.idler_phases is None else self.idler_phases
        sig, idl = np.asarray(sig, dtype=float), np.asarray(idl, dtype=float)
        if sig.shape != (d,) or idl.shape != (d,):
            raise ValueError(f"phase vectors must have length d={d}")
        sig, idl = wrap_phase(sig), wrap_phase(idl)
        if self.grid.mode is Mode.SHARED:
            _check_shared(sig, idl)
        object.__setattr__(self, "signal_phases", _frozen(sig))
        object.__setattr__(self, "idler_phases", _frozen(idl))

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    @property
    def mode(self) -> Mode:
        return self.grid.mode

    @property
    def channel_fwhm(self) -> float:
        """FWHM of one download+upload channel, ``gamma * sqrt(sqrt(2) - 1)``."""
        return self.gamma * CHANNEL_FWHM_RATIO

    @property
    def biphoton_phases(self) -> np.ndarray:
        """theta_k = phi_k^(s) + phi_k^(i), the only phases the correlation sees."""
        return self.signal_phases + self.idler_phases

    def phases(self, side: Side) -> np.ndarray:
        return self.signal_phases if Side(side) is Side.SIGNAL else self.idler_phases

    @property
    def band_halfwidth(self) -> float:
        return (self.dimension + self.grid.offset) * self.grid.bin_spacing + self.fsr


def _check_shared(sig, idl):
    mismatch = wrap_to_pi(idl - sig[::-1])
    if np.any(np.abs(mismatch) > PHASE_TOL):
        raise ValueError(
            "shared filters require phi_k^(i) = phi_(d-k+1)^(s); "
            f"expected idler phases {sig[::-1].tolist()}, got {idl.tolist()}"
        )


def make_shared_grid(
    d: int,
    bin_spacing: float = DEFAULT_SPACING,
    pump: BiphotonSource | None = None,
    fsr: float = DEFAULT_FSR,
    *,
    gamma: float = DEFAULT_GAMMA,
    offset: float | None = None,
    overlap_guard: float = 2.0,
) -> ShaperConfig:
    """Shared signal-idler filters.

    The spectrum centre sits at the midpoint of the bins of one FSR; signal
    (idler) bins are the copies one FSR above (below). Idler bin ``k`` then
    goes through the same ring as signal bin ``d - k + 1``.

    Parameters
    ----------
    d : int
        Number of channels, at most ``floor(fsr / bin_spacing)``.
    bin_spacing, fsr, gamma : float
        Angular frequencies (rad/s).
    offset : float, optional
        The grid offset ``B``. Defaults to ``fsr/spacing - (d+1)/2`` which
        centres the bins one FSR away from ``w_p/2``. Only a global phase
        depends on it.
    """
    if not bin_spacing > 0:
        raise ValueError("bin_spacing must be positive")
    capacity = math.floor(fsr / bin_spacing * (1 + 1e-12))
    if not 1 <= d <= capacity:
        raise ValueError(f"d={d} outside 1..{capacity} (channels per FSR)")
    if offset is None:
        offset = fsr / bin_spacing - (d + 1) / 2
    grid = ChannelGrid(d, bin_spacing, offset, Mode.SHARED, pump or BiphotonSource())
    return ShaperConfig(grid, gamma=gamma, fsr=fsr, overlap_guard=overlap_guard)


def make_distinct_grid(
    d: int,
    bin_spacing: float = DEFAULT_SPACING,
    subcomb_separation: float = TWO_PI * 27e9,
    pump: BiphotonSource | None = None,
    fsr: float = DEFAULT_FSR,
    *,
    gamma: float = DEFAULT_GAMMA,
    offset: float | None = None,
    overlap_guard: float = 2.0,
) -> ShaperConfig:
    """Distinct signal-idler filters on two subcombs.

    The pump is centred between the two subcombs. Signal bins use the upper
    subcomb one FSR above ``w_p/2``, idler bins the lower subcomb one FSR
    below, so every bin has its own ring and its own phase.
    """
    if not bin_spacing > 0:
        raise ValueError("bin_spacing must be positive")
    _check_multiple(subcomb_separation, bin_spacing)
    sep_bins = round(subcomb_separation / bin_spacing)
    if sep_bins < d:
        raise ValueError(
            f"subcombs of {d} bins overlap at a separation of {sep_bins} bins"
        )
    if (sep_bins + d) * bin_spacing > fsr:
        raise ValueError("two subcombs do not fit in one FSR")
    if offset is None:
        offset = fsr / bin_spacing + sep_bins / 2 - (d + 1) / 2
    grid = ChannelGrid(
        d, bin_spacing, offset, Mode.DISTINCT, pump or BiphotonSource(), subcomb_separation
    )
    return ShaperConfig(grid, gamma=gamma, fsr=fsr, overlap_guard=overlap_guard)


def apply_phases(config: ShaperConfig, signal_phases, idler_phases=None) -> ShaperConfig:
    """Return a copy of ``config`` with new channel phases.

    In shared mode the idler vector may be omitted and is then derived from
    the signal vector; if given it has to satisfy the shared constraint.
    """
    d = config.dimension
    sig = np.asarray(signal_phases, dtype=float)
    if sig.shape != (d,):
        raise ValueError(f"signal phases must have length {d}, got {sig.shape}")
    if idler_phases is None:
        if config.mode is Mode.DISTINCT:
            raise ValueError("distinct mode needs explicit idler phases")
        idl = sig[::-1]
    else:
        idl = np.asarray(idler_phases, dtype=float)
        if idl.shape != (d,):
            raise ValueError(f"idler phases must have length {d}, got {idl.shape}")
    return replace(config, signal_phases=sig, idler_phases=idl)


def transfer_detuned(config: ShaperConfig, side: Side, detuning, *, normalized=False):
    """Filter-bank transfer function evaluated at ``w = w_p/2 + detuning``.

    ``sum_k exp(i phi_k) / (gamma/2 + i (w - w_k))**2``
    """
    side = Side(side)
    x = np.asarray(detuning, dtype=float)
    centers = config.grid.detunings(side)
    phasors = np.exp(1j * config.phases(side))
    half = 0.5 * config.gamma
    h = np.zeros(x.shape, dtype=complex)
    for c, p in zip(centers, phasors):
        h += p / (half + 1j * (x - c)) ** 2
    if normalized:
        h *= half * half
    return h


def transfer_function(config: ShaperConfig, side: Side, omega, *, normalized=False):
    """Transfer function at absolute angular frequency ``omega``.

    With ``normalized=True`` a single isolated channel peaks at exactly 1;
    otherwise the peak is ``4/gamma**2``.
    """
    omega = np.asarray(omega, dtype=float)
    detuning = omega - 0.5 * config.grid.pump.pump_frequency
    if np.any(np.abs(detuning) > config.band_halfwidth):
        raise ValueError("omega outside the modelled band")
    return transfer_detuned(config, side, detuning, normalized=normalized)
