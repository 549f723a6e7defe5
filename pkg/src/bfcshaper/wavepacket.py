"""Biphoton wavepacket psi(tau) and correlation function G2(tau) = |psi|^2."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .comb import ShaperConfig, Side, transfer_detuned, wrap_to_pi


class Method(str, enum.Enum):
    QUADRATURE = "quadrature"
    CLOSED_FORM = "closed"
    RECT_FILTER = "rect"


@dataclass(frozen=True)
class TauGrid:
    start: float = -2.5e-9
    stop: float = 2.5e-9
    step: float = 1e-12

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.start < self.stop:
            raise ValueError("start must be below stop")
        if self.size < 2:
            raise ValueError("grid needs at least two points")

    @property
    def size(self) -> int:
        return int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1

    @property
    def values(self) -> np.ndarray:
        i0 = self.start / self.step
        if abs(i0 - round(i0)) < 1e-9:
            # integer multiples of the step keep symmetric grids exactly symmetric
            return self.step * np.arange(round(i0), round(i0) + self.size)
        return self.start + self.step * np.arange(self.size)

    @classmethod
    def symmetric(cls, half_width: float, step: float) -> "TauGrid":
        n = int(round(half_width / step))
        return cls(-n * step, n * step, step)


@dataclass(frozen=True)
class Wavepacket:
    """Sampled wavepacket.

    ``psi`` is None for curves that are no longer amplitudes (e.g. after
    convolution with the detector response); ``g2`` is then the rate.
    """

    tau: np.ndarray
    g2: np.ndarray
    psi: np.ndarray | None = None
    method: Method = Method.CLOSED_FORM
    convolved: bool = False

    @classmethod
    def from_psi(cls, tau, psi, method):
        psi = np.asarray(psi, dtype=complex)
        return cls(np.asarray(tau, dtype=float), np.abs(psi) ** 2, psi, Method(method))

    @property
    def step(self) -> float:
        return float(self.tau[1] - self.tau[0])


def envelope(tau, gamma: float):
    """Closed form of ``int dW exp(-i W tau) / (gamma^2/4 + W^2)^2``.

    Equals ``(4 pi / gamma^3) (1 + gamma|tau|/2) exp(-gamma|tau|/2)``.
    """
    a = 0.5 * gamma * np.abs(np.asarray(tau, dtype=float))
    return (4.0 * np.pi / gamma**3) * (1.0 + a) * np.exp(-a)


def fringe_sum(theta, delta_omega: float, tau) -> np.ndarray:
    """``sum_k exp(i (theta_k - theta_1 - k dw tau))``, k = 1..d, in fixed order.

    The common phasor ``exp(i theta_1)`` is dropped. Keeping the first term
    at exactly zero phase makes equal-theta curves exactly even in tau.
    """
    tau = np.asarray(tau, dtype=float)
    theta = np.asarray(theta, dtype=float)
    rel = wrap_to_pi(theta - theta[0])
    out = np.zeros(tau.shape, dtype=complex)
    for k, th in enumerate(rel, start=1):
        x = k * delta_omega * tau
        term = np.cos(x) - 1j * np.sin(x)
        out += term if th == 0 else np.exp(1j * th) * term
    return out


def fringe_factor(theta, delta_omega: float, tau):
    """Interference factor ``|sum_k exp(i(theta_k - k dw tau))|^2``."""
    return np.abs(fringe_sum(theta, delta_omega, tau)) ** 2


def fringe_shift_prediction(dphi_s: float, dphi_i: float, delta_omega: float) -> float:
    """Fringe delay ``(dphi_s + dphi_i) / dw`` caused by linear phase slopes."""
    if delta_omega == 0:
        raise ValueError("delta_omega must be nonzero")
    return (dphi_s + dphi_i) / delta_omega


def closed_form_psi(config: ShaperConfig, tau) -> np.ndarray:
    """Nonoverlapping-resonance wavepacket, unobservable global phasors dropped."""
    if config.grid.bin_spacing < config.overlap_guard * config.gamma:
        raise ValueError("overlap guard violated; closed form not valid")
    return envelope(tau, config.gamma) * fringe_sum(
        config.biphoton_phases, config.grid.bin_spacing, tau
    )


def wavepacket_closed_form(config: ShaperConfig, grid: TauGrid | None = None) -> Wavepacket:
    grid = grid or TauGrid()
    tau = grid.values
    return Wavepacket.from_psi(tau, closed_form_psi(config, tau), Method.CLOSED_FORM)


def _simpson_weights(n_intervals: int, h: float) -> np.ndarray:
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def quadrature_psi(
    config: ShaperConfig,
    tau,
    source=None,
    *,
    margin: float = 20.0,
    step: float | None = None,
    rtol: float = 1e-6,
    tail_tol: float = 1e-5,
    max_refine: int = 3,
    chunk: int = 512,
) -> np.ndarray:
    """Direct composite-Simpson evaluation of the wavepacket integral.

    The detuning W runs over ``[max(0, c_1 - margin*gamma), c_d + margin*gamma]``
    (the integral starts at W = 0). Converged when halving the step changes
    psi by less than ``rtol`` of its peak.
    """
    tau = np.asarray(tau, dtype=float)
    gamma = config.gamma
    centers = config.grid.signal_detunings
    lo = max(0.0, centers[0] - margin * gamma)
    hi = centers[-1] + margin * gamma
    h_max = gamma / 50.0 if step is None else step
    n = int(math.ceil((hi - lo) / h_max))
    n += n % 2

    source = source or config.grid.pump

    def integrand(w):
        return (
            source.spectral_amplitude(w)
            * transfer_detuned(config, Side.SIGNAL, w)
            * transfer_detuned(config, Side.IDLER, -w)
        )

    for _ in range(max_refine):
        fine = 2 * n
        omega = np.linspace(lo, hi, fine + 1)
        f = integrand(omega)
        peak = np.max(np.abs(f))
        if max(abs(f[0]), abs(f[-1])) > tail_tol * peak:
            raise ValueError(
                "quadrature window too small: integrand at the window edge is "
                f"{max(abs(f[0]), abs(f[-1])) / peak:.2e} of its peak"
            )
        h = (hi - lo) / fine
        w_fine = _simpson_weights(fine, h)
        w_coarse = np.zeros(fine + 1)
        w_coarse[::2] = _simpson_weights(n, 2 * h)
        rhs = np.stack([w_fine * f, w_coarse * f], axis=1)

        # factor out the window centre so the kernel phase stays small
        center = 0.5 * (lo + hi)
        u = omega - center
        out = np.empty((tau.size, 2), dtype=complex)
        for s in range(0, tau.size, chunk):
            t = tau[s : s + chunk]
            out[s : s + chunk] = np.exp(-1j * np.outer(t, u)) @ rhs
        out *= np.exp(-1j * center * tau)[:, None]
        psi_fine, psi_coarse = out[:, 0], out[:, 1]
        scale = np.max(np.abs(psi_fine))
        if np.max(np.abs(psi_fine - psi_coarse)) <= rtol * scale:
            return psi_fine
        n = fine
    raise RuntimeError("quadrature did not converge under step halving")


def wavepacket_quadrature(
    config: ShaperConfig, source=None, grid: TauGrid | None = None, **kwargs
) -> Wavepacket:
    """Wavepacket from the full filter responses (keeps coherent crosstalk)."""
    grid = grid or TauGrid()
    tau = grid.values
    psi = quadrature_psi(config, tau, source, **kwargs)
    return Wavepacket.from_psi(tau, psi, Method.QUADRATURE)


def wavepacket(config: ShaperConfig, grid: TauGrid | None = None, method="closed") -> Wavepacket:
    if Method(method) is Method.QUADRATURE:
        return wavepacket_quadrature(config, None, grid)
    return wavepacket_closed_form(config, grid)
