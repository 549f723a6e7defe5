"""Simulation of biphoton frequency combs shaped by a microring line-by-line shaper.

Covers the filter model, the biphoton wavepacket, detection (detector
response, binning, counting noise), dual-comb phase calibration and the
analysis of coincidence histograms.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .comb import (
    BiphotonSource,
    ChannelGrid,
    Mode,
    ShaperConfig,
    Side,
    apply_phases,
    make_distinct_grid,
    make_shared_grid,
    transfer_function,
    wrap_phase,
    wrap_to_pi,
)
from .detection import (
    Histogram,
    ImpulseResponse,
    bin_and_sample,
    convolve_response,
    normalize_family,
    read_histogram_csv,
    rect_filter_reference,
    write_histogram_csv,
)
from .wavepacket import (
    Method,
    TauGrid,
    Wavepacket,
    closed_form_psi,
    envelope,
    fringe_factor,
    wavepacket,
    wavepacket_closed_form,
    wavepacket_quadrature,
)
from .analysis import FitResult, FringeMetrics, compare_to_model, fit_gamma, fringe_metrics
from .calibration import (
    BeatSpectrum,
    CalibrationRecord,
    EOComb,
    PhaseActuator,
    extract_beat_phases,
    map_beats_to_channels,
    program_phases,
    subtract_linear_reference,
    synthesize_pd_signal,
)
