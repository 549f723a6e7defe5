"""Detection chain: timing-jitter convolution, histogramming, normalisation."""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .wavepacket import Method, TauGrid, Wavepacket

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
#: detector + time-tagger jitter, Gaussian FWHM
DEFAULT_RESPONSE_FWHM = 80e-12
DEFAULT_BIN_WIDTH = 20e-12
DEFAULT_TOTAL_COUNTS = 100_000


class Shape(str, enum.Enum):
    GAUSSIAN = "gaussian"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class ImpulseResponse:
    """System impulse response h(tau), unit area.

    Use :meth:`gaussian` or :meth:`tabulated`; tabulated weights are
    renormalised to unit (trapezoidal) area on construction.
    """

    shape: Shape = Shape.GAUSSIAN
    fwhm: float = DEFAULT_RESPONSE_FWHM
    samples: tuple[np.ndarray, np.ndarray] | None = None
    truncation: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        if self.shape is Shape.GAUSSIAN:
            if not self.fwhm > 0:
                raise ValueError("fwhm must be positive")
            return
        if self.samples is None:
            raise ValueError("tabulated response needs samples")
        t, w = (np.asarray(a, dtype=float) for a in self.samples)
        order = np.argsort(t)
        t, w = t[order], w[order]
        if np.any(w < 0):
            raise ValueError("impulse response must be nonnegative")
        area = np.trapezoid(w, t)
        if not area > 0:
            raise ValueError("impulse response has zero area")
        w = w / area
        object.__setattr__(self, "samples", (t, w))
        object.__setattr__(self, "fwhm", _fwhm(t, w))

    @classmethod
    def gaussian(cls, fwhm: float = DEFAULT_RESPONSE_FWHM) -> "ImpulseResponse":
        return cls(Shape.GAUSSIAN, fwhm)

    @classmethod
    def tabulated(cls, tau, weight) -> "ImpulseResponse":
        return cls(Shape.TABULATED, 0.0, (tau, weight))

    @classmethod
    def from_csv(cls, path) -> "ImpulseResponse":
        """Read a measured response with columns ``tau_s, weight``."""
        data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1, ndmin=2)
        return cls.tabulated(data[:, 0], data[:, 1])

    @property
    def sigma(self) -> float:
        return self.fwhm * FWHM_TO_SIGMA

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.shape is Shape.GAUSSIAN:
            s = self.sigma
            return np.exp(-0.5 * (tau / s) ** 2) / (s * math.sqrt(2 * math.pi))
        t, w = self.samples
        return np.interp(tau, t, w, left=0.0, right=0.0)

    def kernel(self, step: float) -> np.ndarray:
        """Samples on ``step`` spacing, symmetric support, summing to one."""
        if self.shape is Shape.GAUSSIAN:
            half = self.truncation * self.sigma
        else:
            t, _ = self.samples
            half = max(abs(t[0]), abs(t[-1]))
        n = int(math.ceil(half / step))
        k = self(step * np.arange(-n, n + 1))
        return k / k.sum()


def _fwhm(x, y) -> float:
    """Full width at half maximum by linear interpolation of the crossings."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = i
    while left > 0 and y[left] > half:
        left -= 1
    right = i
    while right < y.size - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        raise ValueError("curve does not fall to half maximum inside the grid")
    xl = np.interp(half, [y[left], y[left + 1]], [x[left], x[left + 1]])
    xr = np.interp(half, [y[right], y[right - 1]], [x[right], x[right - 1]])
    return float(xr - xl)


@dataclass(frozen=True)
class Histogram:
    """Binned coincidences; ``meta`` carries labels such as the scenario id."""

    bin_width: float
    bin_centers: np.ndarray
    counts: np.ndarray
    noisy: bool = False
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        c = np.asarray(self.counts)
        if np.any(c < 0):
            raise ValueError("counts must be nonnegative")
        centers = np.asarray(self.bin_centers, dtype=float)
        if centers.shape != c.shape:
            raise ValueError("bin_centers and counts differ in length")
        if centers.size > 1 and not np.allclose(
            np.diff(centers), self.bin_width, rtol=1e-6, atol=0
        ):
            raise ValueError("bin centres must be spaced by bin_width")

    @property
    def area(self) -> float:
        return float(np.sum(self.counts) * self.bin_width)

    def same_grid(self, other: "Histogram") -> bool:
        return (
            math.isclose(self.bin_width, other.bin_width, rel_tol=1e-9)
            and self.bin_centers.shape == other.bin_centers.shape
            and np.allclose(self.bin_centers, other.bin_centers, rtol=0, atol=1e-6 * self.bin_width)
        )


def convolve_response(g2: Wavepacket, h: ImpulseResponse) -> Wavepacket:
    """Convolve G2 with the impulse response on the same uniform grid.

    Direct summation; the input is taken as zero outside the grid, so the
    grid should extend several sigma beyond the features of interest.
    """
    step = g2.step
    if not np.allclose(np.diff(g2.tau), step, rtol=1e-6, atol=0):
        raise ValueError("tau grid must be uniform")
    if step > h.fwhm / 8 * (1 + 1e-9):
        raise ValueError(
            f"grid step {step:.3g} s undersamples a response of FWHM {h.fwhm:.3g} s"
        )
    kernel = h.kernel(step)
    y = np.asarray(g2.g2, dtype=float)
    margin = kernel.size // 2
    if margin and y.size > 2 * margin:
        edge = max(y[:margin].max(), y[-margin:].max())
        if edge > 1e-3 * y.max():
            warnings.warn(
                "signal is not negligible within 5 sigma of the grid edge; "
                "zero padding will distort the convolution there",
                stacklevel=2,
            )
    out = np.convolve(y, kernel, mode="same")
    np.clip(out, 0.0, None, out=out)
    return replace(g2, g2=out, psi=None, convolved=True)


def _bin_integrals(tau, values, edges) -> np.ndarray:
    """Integrate the piecewise-constant (cell-centred) curve over each bin."""
    step = tau[1] - tau[0]
    cell_edges = np.concatenate([[tau[0] - 0.5 * step], tau + 0.5 * step])
    cum = np.concatenate([[0.0], np.cumsum(values) * step])
    at = np.interp(edges, cell_edges, cum)
    return np.diff(at)


def bin_edges_for(tau, bin_width: float) -> np.ndarray:
    """Edges of the bins centred on multiples of ``bin_width`` that fit in the grid."""
    step = tau[1] - tau[0]
    lo, hi = tau[0] - 0.5 * step, tau[-1] + 0.5 * step
    tol = 1e-9
    k0 = math.ceil(lo / bin_width + 0.5 - tol)
    k1 = math.floor(hi / bin_width - 0.5 + tol)
    if k1 < k0:
        raise ValueError("no complete histogram bin fits inside the tau grid")
    return (np.arange(k0, k1 + 2) - 0.5) * bin_width


def bin_and_sample(
    c: Wavepacket,
    bin_width: float = DEFAULT_BIN_WIDTH,
    total_counts: int = DEFAULT_TOTAL_COUNTS,
    seed: int | None = 0,
    *,
    noisy: bool = True,
    meta: dict | None = None,
) -> Histogram:
    """Integrate the rate over time-tagger bins and draw Poisson counts.

    The expected counts are scaled to sum to ``total_counts``. With
    ``noisy=False`` those expectations are returned directly.
    """
    tau = np.asarray(c.tau, dtype=float)
    if bin_width < c.step * (1 - 1e-9):
        raise ValueError("bin_width must not be smaller than the grid step")
    if not total_counts > 0:
        raise ValueError("total_counts must be positive")
    edges = bin_edges_for(tau, bin_width)
    mean = _bin_integrals(tau, np.asarray(c.g2, dtype=float), edges)
    mean = np.clip(mean, 0.0, None)
    total = mean.sum()
    if not total > 0:
        raise ValueError("rate integrates to zero over the requested bins")
    mean *= total_counts / total
    centers = 0.5 * (edges[:-1] + edges[1:])
    if noisy:
        rng = np.random.default_rng(seed)
        counts = rng.poisson(mean)
        return Histogram(bin_width, centers, counts, True, seed, dict(meta or {}))
    return Histogram(bin_width, centers, mean, False, None, dict(meta or {}))


def normalize_family(histograms, same_d: bool = True) -> list[Histogram]:
    """Equal-area scaling, then the family-wide maximum set to one."""
    hs = list(histograms)
    if not hs:
        return []
    for h in hs[1:]:
        if not h.same_grid(hs[0]):
            raise ValueError("histograms in a family must share the bin grid")
    if same_d:
        dims = {h.meta.get("d") for h in hs if "d" in h.meta}
        if len(dims) > 1:
            raise ValueError(f"family mixes dimensions {sorted(dims)}")
    scaled = []
    for h in hs:
        area = h.area
        if not area > 0:
            raise ValueError("cannot normalise a zero-area histogram")
        scaled.append(np.asarray(h.counts, dtype=float) / area)
    peak = max(s.max() for s in scaled)
    return [replace(h, counts=s / peak) for h, s in zip(hs, scaled)]


def rect_filter_reference(
    width: float, h: ImpulseResponse | None = None, grid: TauGrid | None = None
) -> Wavepacket:
    """Correlation for matched rectangular signal/idler passbands of ``width`` (rad/s).

    ``psi ~ W sinc(W tau / 2)``; the result is convolved with ``h`` unless it is None.
    """
    if not width > 0:
        raise ValueError("width must be positive")
    grid = grid or TauGrid.symmetric(500e-12, 0.1e-12)
    tau = grid.values
    psi = width * np.sinc(width * tau / (2 * np.pi))
    wp = Wavepacket.from_psi(tau, psi, Method.RECT_FILTER)
    return wp if h is None else convolve_response(wp, h)


def curve_fwhm(curve) -> float:
    """FWHM of a Wavepacket (g2) or Histogram (counts)."""
    if isinstance(curve, Histogram):
        return _fwhm(curve.bin_centers, curve.counts)
    return _fwhm(curve.tau, curve.g2)


# -- CSV -------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_histogram_csv(hist: Histogram, path, scenario: str = "") -> None:
    """Columns ``tau_s,counts`` after a ``# bin_width=...,seed=...,scenario=...`` line."""
    path = Path(path)
    scenario = scenario or hist.meta.get("scenario", "")
    seed = "" if hist.seed is None else str(hist.seed)
    lines = [
        f"# bin_width={_fmt(hist.bin_width)},seed={seed},scenario={scenario}",
        "tau_s,counts",
    ]
    for t, n in zip(hist.bin_centers, hist.counts):
        lines.append(f"{_fmt(t)},{_fmt(n)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_histogram_csv(path) -> Histogram:
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        header = f.readline().lstrip("#").strip()
        meta = dict(item.split("=", 1) for item in header.split(",") if "=" in item)
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: no histogram rows")
    tau = np.array([float(r["tau_s"]) for r in rows])
    raw = [r["counts"] for r in rows]
    if all(s.lstrip("-").isdigit() for s in raw):
        counts = np.array([int(s) for s in raw])
    else:
        counts = np.array([float(s) for s in raw])
    seed = int(meta["seed"]) if meta.get("seed") else None
    bw = float(meta["bin_width"])
    extra = {"scenario": meta.get("scenario", "")}
    return Histogram(bw, tau, counts, seed is not None, seed, extra)
