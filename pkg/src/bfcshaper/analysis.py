"""Parameter extraction and figure-level metrics from coincidence histograms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .comb import DEFAULT_GAMMA, TWO_PI, ShaperConfig
from .detection import (
    Histogram,
    ImpulseResponse,
    _bin_integrals,
    convolve_response,
    curve_fwhm,
    normalize_family,
)
from .wavepacket import Method, Wavepacket, closed_form_psi, envelope, quadrature_psi


@dataclass(frozen=True)
class FitResult:
    gamma: float
    scale: float
    offset: float
    residual_rms: float
    converged: bool
    loss: float = float("nan")


@dataclass(frozen=True)
class FringeMetrics:
    period: float
    shift: float
    contrast: float
    peak_positions: np.ndarray
    raw_period: float = float("nan")


@dataclass(frozen=True)
class ResidualReport:
    residuals: np.ndarray
    rms: float
    max_abs: float
    data: np.ndarray
    model: np.ndarray


def _curve(obj):
    if isinstance(obj, Histogram):
        return np.asarray(obj.bin_centers, float), np.asarray(obj.counts, float), obj.bin_width
    return np.asarray(obj.tau, float), np.asarray(obj.g2, float), obj.step


def _parabola(y, i):
    """Sub-sample vertex offset of the parabola through y[i-1], y[i], y[i+1]."""
    if i <= 0 or i >= len(y) - 1:
        return 0.0
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    return 0.0 if den == 0 else 0.5 * (a - c) / den


def _model_grid(hist: Histogram, h: ImpulseResponse, step: float | None = None):
    step = step or hist.bin_width / 20
    lo = hist.bin_centers[0] - 0.5 * hist.bin_width - 5 * h.sigma
    hi = hist.bin_centers[-1] + 0.5 * hist.bin_width + 5 * h.sigma
    n0, n1 = math.floor(lo / step), math.ceil(hi / step)
    return step * np.arange(n0, n1 + 1)


def _edges(hist: Histogram):
    return np.concatenate(
        [hist.bin_centers - 0.5 * hist.bin_width, [hist.bin_centers[-1] + 0.5 * hist.bin_width]]
    )


def binned_model(g2, tau, hist: Histogram, h: ImpulseResponse | None) -> np.ndarray:
    """Convolve a G2 curve sampled on ``tau`` and integrate over the histogram bins."""
    wp = Wavepacket(tau, g2)
    if h is not None:
        wp = convolve_response(wp, h)
    return _bin_integrals(tau, wp.g2, _edges(hist))


def fit_gamma(
    hist: Histogram,
    h: ImpulseResponse,
    *,
    bracket=(TWO_PI * 0.2e9, TWO_PI * 5e9),
    starts: int = 5,
    xtol: float = 1e-7,
) -> FitResult:
    """Fit ``scale * [I(tau - t0)^2 (*) h]`` to a d = 1 histogram.

    Integer counts use the Poisson negative log-likelihood, anything else
    plain least squares. The amplitude is profiled out analytically, leaving
    a Nelder-Mead search over (log gamma, t0) from log-spaced starts.
    """
    y = np.asarray(hist.counts, dtype=float)
    if np.count_nonzero(y) < 30:
        raise ValueError("need at least 30 nonzero bins to fit gamma")
    if np.ptp(y) == 0:
        raise ValueError("flat histogram; nothing to fit")
    poisson = np.issubdtype(np.asarray(hist.counts).dtype, np.integer)
    tau = _model_grid(hist, h)
    edges = _edges(hist)
    kernel = h.kernel(tau[1] - tau[0])
    t_ref = float(np.sum(hist.bin_centers * y) / np.sum(y))
    t_ref = float(np.clip(t_ref, hist.bin_centers[0], hist.bin_centers[-1]))

    def shape(g, t0):
        g2 = envelope(tau - t0, g) ** 2
        conv = np.convolve(g2, kernel, mode="same")
        return _bin_integrals(tau, conv, edges)

    def loss(p):
        g, t0 = math.exp(p[0]), p[1] * 1e-12
        m = shape(g, t0)
        if poisson:
            s = y.sum() / m.sum()
            mu = np.clip(s * m, 1e-300, None)
            return float(np.sum(mu - y * np.log(mu))), s
        s = float(m @ y / (m @ m))
        return float(np.sum((y - s * m) ** 2)), s

    best = None
    for g0 in np.geomspace(bracket[0], bracket[1], starts):
        x0 = [math.log(g0), t_ref * 1e12]
        fatol = 1e-13 * max(1.0, abs(loss(x0)[0]))
        res = optimize.minimize(
            lambda p: loss(p)[0],
            x0=x0,
            method="Nelder-Mead",
            options={"xatol": xtol, "fatol": fatol, "maxiter": 2000},
        )
        g = math.exp(res.x[0])
        cand = (res.fun, g, res)
        if best is None or cand[0] < best[0] - 1e-12 * abs(best[0]) or (
            math.isclose(cand[0], best[0], rel_tol=1e-12) and g < best[1]
        ):
            best = cand
    fun, g, res = best
    _, s = loss(res.x)
    t0 = res.x[1] * 1e-12
    resid = y - s * shape(g, t0)
    converged = bool(res.success) and bracket[0] / 10 < g < bracket[1] * 10
    return FitResult(g, s, t0, float(np.sqrt(np.mean(resid**2))), converged, float(fun))


def find_fringe_peaks(x, y, threshold: float = 0.1, prominence: float = 0.2):
    """Local maxima above ``threshold`` of the global max, parabola-refined."""
    top = y.max()
    idx, _ = signal.find_peaks(y, height=threshold * top, prominence=prominence * top)
    step = x[1] - x[0]
    return np.array([x[i] + _parabola(y, i) * step for i in idx])


def fringe_metrics(
    hist,
    reference=None,
    *,
    gamma: float = DEFAULT_GAMMA,
    threshold: float = 0.1,
    prominence: float = 0.2,
) -> FringeMetrics:
    """Fringe period, shift against a reference, and central contrast.

    Accepts a Histogram or a Wavepacket. The period is the median spacing
    of refined local maxima; the shift is the refined argmax of the
    cross-correlation, positive when ``hist`` is delayed relative to
    ``reference``. Contrast is (max-min)/(max+min) over |tau| <= 1/gamma.
    """
    x, y, step = _curve(hist)
    peaks = find_fringe_peaks(x, y, threshold, prominence)
    if peaks.size < 2:
        raise ValueError(f"found {peaks.size} fringe peak(s); need at least two")
    spacing = np.diff(peaks)
    period = float(np.median(spacing))
    raw_idx, _ = signal.find_peaks(y, height=threshold * y.max(), prominence=prominence * y.max())
    raw_period = float(np.median(np.diff(x[raw_idx])))

    shift = float("nan")
    if reference is not None:
        xr, yr, step_r = _curve(reference)
        if yr.shape != y.shape or not np.allclose(xr, x, rtol=0, atol=1e-6 * step):
            raise ValueError("reference is on a different grid")
        shift = correlation_shift(y, yr) * step

    window = np.abs(x) <= 1.0 / gamma
    if not np.any(window):
        raise ValueError("contrast window contains no samples")
    ymax, ymin = y[window].max(), y[window].min()
    contrast = float((ymax - ymin) / (ymax + ymin)) if ymax + ymin > 0 else 0.0
    return FringeMetrics(period, shift, contrast, peaks, raw_period)


def correlation_shift(a, b) -> float:
    """Lag (in samples, sub-sample refined) maximising ``sum_n a[n+L] b[n]``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    c = np.correlate(a, b, mode="full")
    i = int(np.argmax(c))
    return (i - (b.size - 1)) + _parabola(c, i)


def model_histogram(
    config: ShaperConfig,
    hist: Histogram,
    h: ImpulseResponse | None,
    method: str = "closed",
    step: float | None = None,
) -> np.ndarray:
    """Expected counts shape (arbitrary scale) on ``hist``'s bins."""
    tau = _model_grid(hist, h or ImpulseResponse.gaussian(), step)
    if Method(method) is Method.QUADRATURE:
        psi = quadrature_psi(config, tau)
    else:
        psi = closed_form_psi(config, tau)
    return binned_model(np.abs(psi) ** 2, tau, hist, h)


def compare_to_model(
    hist: Histogram, config: ShaperConfig, h: ImpulseResponse | None, method: str = "closed"
) -> ResidualReport:
    """Normalise data and model as one family and report the residuals."""
    model = model_histogram(config, hist, h, method)
    if model.shape != np.shape(hist.counts):
        raise ValueError("model and data grids are incompatible")
    mh = Histogram(hist.bin_width, hist.bin_centers, np.clip(model, 0, None))
    data_n, model_n = normalize_family([hist, mh], same_d=False)
    r = np.asarray(data_n.counts) - np.asarray(model_n.counts)
    return ResidualReport(
        r, float(np.sqrt(np.mean(r**2))), float(np.max(np.abs(r))), data_n.counts, model_n.counts
    )


measure_fwhm = curve_fwhm
