"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy import integrate

from bfcshaper.analysis import fit_gamma, fringe_metrics
from bfcshaper.calibration import (
    beat_labels,
    channel_phases,
    program_phases,
    random_actuators,
    subtract_linear_reference,
)
from bfcshaper.comb import (
    DEFAULT_FSR,
    TWO_PI,
    Mode,
    Side,
    apply_phases,
    make_distinct_grid,
    make_shared_grid,
    transfer_detuned,
    wrap_to_pi,
)
from bfcshaper.detection import (
    ImpulseResponse,
    bin_and_sample,
    convolve_response,
    curve_fwhm,
    rect_filter_reference,
)
from bfcshaper.scenario import PRESETS, preset, run_scenario
from bfcshaper.wavepacket import (
    closed_form_psi,
    envelope,
    fringe_factor,
    fringe_shift_prediction,
    quadrature_psi,
    wavepacket_closed_form,
)

RESULTS: dict[int, str] = {}
GAMMA = TWO_PI * 1.3e9
SPACING = TWO_PI * 3e9
H = ImpulseResponse.gaussian(80e-12)


def report(n: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {text}"
    RESULTS[n] = line
    print(line)


def binned(cfg, noisy=False, seed=0):
    wp = convolve_response(wavepacket_closed_form(cfg), H)
    return bin_and_sample(wp, 20e-12, 10**5, seed, noisy=noisy, meta={"d": cfg.dimension})


def _mod_err(a, b, period):
    d = (a - b) % period
    return min(d, period - d)


def test_criterion_01_envelope_closed_form():
    t0 = time.perf_counter()
    taus = np.linspace(0, 10 / GAMMA, 41)
    worst = 0.0
    for t in taus:
        # the oracle works in units of gamma so QAWF sees O(1) numbers
        g = 1.0
        x = t * GAMMA
        if x == 0:
            val, _ = integrate.quad(lambda w: 1 / (g * g / 4 + w * w) ** 2, 0, np.inf, epsabs=0, epsrel=1e-12)
        else:
            val, _ = integrate.quad(lambda w: 1 / (g * g / 4 + w * w) ** 2, 0, np.inf, weight="cos", wvar=x)
        numeric = 2 * val / GAMMA**3
        closed = float(envelope(t, GAMMA))
        worst = max(worst, abs(numeric - closed) / closed)
        worst = max(worst, abs(float(envelope(-t, GAMMA)) - closed) / closed)
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and dt < 1.0
    report(1, ok, f"envelope max rel err {worst:.1e} on |tau|<=10/gamma in {dt:.2f} s")
    assert ok


def test_criterion_02_linewidth_relation():
    cfg = make_shared_grid(1)
    c = cfg.grid.signal_detunings[0]
    f = lambda w: abs(transfer_detuned(cfg, Side.SIGNAL, w)) ** 2  # noqa: E731
    half = 0.5 * f(c)
    a, b = c, c + 2 * GAMMA
    for _ in range(200):
        m = 0.5 * (a + b)
        a, b = (m, b) if f(m) > half else (a, m)
    ratio = 2 * (0.5 * (a + b) - c) / GAMMA
    ok = abs(ratio - 0.6436) <= 1e-4
    report(2, ok, f"channel FWHM / gamma = {ratio:.6f} (target 0.6436 +- 1e-4)")
    assert ok


def test_criterion_03_fig2_family():
    t0 = time.perf_counter()
    curves = {d: binned(make_shared_grid(d)) for d in (1, 2, 3, 6)}
    env = curves[1].counts / curves[1].counts.max()
    periods, ratios, excess = {}, {}, 0.0
    for d in (2, 3, 6):
        m = fringe_metrics(curves[d], gamma=GAMMA)
        periods[d] = m.period
        ratios[d] = (1 - m.contrast) / (1 + m.contrast)  # central min / max
        y = curves[d].counts / curves[d].counts.max()
        excess = max(excess, float(np.max(y - env)))
    dt = time.perf_counter() - t0
    period_ok = all(abs(p - 320e-12) <= 20e-12 for p in periods.values())
    deepening = ratios[2] > ratios[3] > ratios[6]
    bounded = excess <= 0.01
    ok = period_ok and deepening and bounded and dt < 10
    ps = ", ".join(f"d={d}: {p * 1e12:.1f} ps" for d, p in periods.items())
    report(3, ok, f"periods {ps}; min/max {[round(r, 3) for r in ratios.values()]}; "
                  f"max excess over d=1 envelope {excess:.1e}; {dt:.1f} s")
    assert ok


FIG3 = [("c", 0, k * math.pi / 2) for k in range(4)] + [("d", k * math.pi / 4, k * math.pi / 4) for k in range(4)]


def test_criterion_04_fringe_shift_law():
    cfg = make_distinct_grid(3)
    period = TWO_PI / SPACING
    ref = binned(cfg)
    errs = []
    for _, ds, di in FIG3:
        c = apply_phases(cfg, [0, ds, 2 * ds], [0, di, 2 * di])
        m = fringe_metrics(binned(c), ref, gamma=GAMMA)
        errs.append(_mod_err(m.shift, fringe_shift_prediction(ds, di, SPACING), period))
    tau = np.arange(-2500, 2501) * 1e-12
    gap = 0.0
    for k in range(4):
        a = apply_phases(cfg, [0, 0, 0], [0, k * math.pi / 2, k * math.pi])
        b = apply_phases(cfg, [0, k * math.pi / 4, k * math.pi / 2], [0, k * math.pi / 4, k * math.pi / 2])
        ga, gb = np.abs(closed_form_psi(a, tau)) ** 2, np.abs(closed_form_psi(b, tau)) ** 2
        gap = max(gap, float(np.max(np.abs(ga - gb)) / ga.max()))
    ok = max(errs) <= 20e-12 and gap <= 1e-12
    report(4, ok, f"max shift error {max(errs) * 1e12:.2f} ps over 8 settings (tol 20 ps); "
                  f"equal-sum pairs differ by {gap:.1e}")
    assert ok


def test_criterion_05_nonlinear_phases():
    tau = np.arange(-2000, 2001) * 0.5e-12
    x = SPACING * tau
    f1 = fringe_factor([0, math.pi / 2, 0], SPACING, tau)
    e1 = np.max(np.abs(f1 - (4 * np.cos(x) ** 2 + 1)))
    # period of 4 cos^2 + 1 is pi / dw; min/max over a period
    per1 = math.pi / SPACING
    mm1 = f1.min() / f1.max()
    f2 = fringe_factor([0, math.pi, 0], SPACING, tau)
    e2 = np.max(np.abs(f2 - (2 * np.cos(x) - 1) ** 2))
    r2 = f2[tau.size // 2] / f2.max()
    cfg = make_distinct_grid(3)
    conj = apply_phases(cfg, [0, -math.pi / 2, 0], [0, math.pi / 2, 0])
    g0 = np.abs(closed_form_psi(cfg, tau)) ** 2
    gc = np.abs(closed_form_psi(conj, tau)) ** 2
    gap = float(np.max(np.abs(g0 - gc)) / g0.max())
    g_null = np.abs(closed_form_psi(apply_phases(cfg, [0, math.pi / 2, 0], [0, math.pi / 2, 0]), tau)) ** 2
    g_ratio = g_null[tau.size // 2] / (9 * envelope(0, GAMMA) ** 2)
    ok = (e1 < 1e-12 and abs(per1 - 166.67e-12) < 0.01e-12 and abs(mm1 - 0.2) < 1e-9
          and e2 < 1e-12 and abs(r2 - 1 / 9) < 1e-12 and abs(g_ratio - 1 / 9) < 1e-12 and gap <= 1e-12)
    report(5, ok, f"4cos^2+1 err {e1:.1e}, period {per1 * 1e12:.2f} ps, min/max {mm1:.4f}; "
                  f"(2cos-1)^2 err {e2:.1e}, G2(0) ratio {r2:.6f}; conjugate gap {gap:.1e}")
    assert ok


def test_criterion_06_shared_gauge():
    rng = np.random.default_rng(6)
    tau = np.arange(-2500, 2501) * 1e-12
    worst = 0.0
    for d in (2, 3, 6):
        base = make_shared_grid(d)
        for _ in range(10):
            v = rng.uniform(0, TWO_PI, d)
            v = v + v[::-1]  # shared-compatible starting vector
            a = apply_phases(base, v)
            b = apply_phases(base, v + rng.uniform(-10, 10) + rng.uniform(-3, 3) * np.arange(d))
            ga, gb = np.abs(closed_form_psi(a, tau)) ** 2, np.abs(closed_form_psi(b, tau)) ** 2
            worst = max(worst, float(np.max(np.abs(ga - gb)) / ga.max()))
    ok = worst <= 1e-12
    report(6, ok, f"linear ramps change shared-mode G2 by at most {worst:.1e} of peak")
    assert ok


def test_criterion_07_quadrature_vs_closed_form():
    t0 = time.perf_counter()
    tau = np.arange(-1500, 1501) * 1e-12
    gaps = {}
    for r in (4, 8, 16, 32):
        # widen the FSR where three channels would not fit; the gap does not depend on it
        cfg = make_shared_grid(3, bin_spacing=r * GAMMA, fsr=max(DEFAULT_FSR, 10 * r * GAMMA))
        q = np.abs(quadrature_psi(cfg, tau)) ** 2
        c = np.abs(closed_form_psi(cfg, tau)) ** 2
        gaps[r] = float(np.max(np.abs(q / q.max() - c / c.max())))
    dt = time.perf_counter() - t0
    monotone = gaps[4] > gaps[8] > gaps[16] > gaps[32]
    within = all(gaps[r] < 1e-3 for r in (8, 16, 32))
    ok = monotone and within and dt < 30
    txt = ", ".join(f"{r}: {g:.1e}" for r, g in gaps.items())
    report(7, ok, f"normalised G2 gap by spacing/gamma {{{txt}}}; monotone={monotone}; "
                  f"<1e-3 at >=8: {within}; {dt:.1f} s")
    assert ok


def test_criterion_08_rectangular_filters():
    raw = rect_filter_reference(TWO_PI * 50e9)
    conv = rect_filter_reference(TWO_PI * 50e9, H)
    w_raw, w_conv = curve_fwhm(raw), curve_fwhm(conv)
    ok = abs(w_raw - 17.7e-12) <= 0.5e-12 and abs(w_conv / 80e-12 - 1) <= 0.05
    report(8, ok, f"rectangular 50 GHz FWHM {w_raw * 1e12:.2f} ps, convolved {w_conv * 1e12:.2f} ps")
    assert ok


def test_criterion_09_calibration_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    worst_it, worst_res, failures = 0, 0.0, 0
    for cfg in (make_shared_grid(6), make_distinct_grid(3)):
        n = channel_phases(cfg).size
        for _ in range(100):
            target = rng.uniform(0, TWO_PI, n)
            rec = program_phases(target, random_actuators(n, rng), cfg)
            err = np.max(np.abs(wrap_to_pi(rec.corrected_phases - subtract_linear_reference(target, cfg.mode))))
            failures += not (rec.converged and rec.iterations <= 10 and err < 1e-3)
            worst_it = max(worst_it, rec.iterations)
            worst_res = max(worst_res, err)
    shared = (np.abs(beat_labels(Mode.SHARED, 6)) * 50).tolist()
    distinct = (beat_labels(Mode.DISTINCT, 3, 9) * 50).tolist()
    # table is listed as phi_3^s, phi_2^s, phi_1^s, phi_1^i, phi_2^i, phi_3^i
    table = [distinct[2], distinct[1], distinct[0], distinct[3], distinct[4], distinct[5]]
    mapping_ok = shared == [100, 150, 200, 250, 300, 350] and table == [-200, -150, -100, 250, 300, 350]
    dt = time.perf_counter() - t0
    ok = failures == 0 and mapping_ok and dt < 60
    report(9, ok, f"200 targets, {failures} failures, worst {worst_it} iterations, residual {worst_res:.1e} rad; "
                  f"beat tables match: {mapping_ok}; {dt:.1f} s")
    assert ok


def test_criterion_10_gamma_fit():
    cfg = make_shared_grid(1)
    wp = convolve_response(wavepacket_closed_form(cfg), H)
    clean = fit_gamma(bin_and_sample(wp, 20e-12, 10**5, noisy=False), H)
    e_clean = abs(clean.gamma / GAMMA - 1)
    errs = [abs(fit_gamma(bin_and_sample(wp, 20e-12, 10**5, seed=s), H).gamma / GAMMA - 1) for s in range(50)]
    med = float(np.median(errs))
    ok = e_clean < 5e-3 and med < 0.02
    report(10, ok, f"noiseless gamma error {e_clean:.1e}; median |error| over 50 Poisson seeds {med:.1e}")
    assert ok


def test_criterion_11_determinism(tmp_path):
    mismatched = []
    n_files = 0
    for name in PRESETS:
        sc = preset(name)
        a = run_scenario(sc, tmp_path / "a" / name)
        b = run_scenario(sc, tmp_path / "b" / name)
        for pa, pb in zip(a.artifacts, b.artifacts):
            if pa.suffix == ".csv":
                n_files += 1
                if pa.read_bytes() != pb.read_bytes():
                    mismatched.append(pa.name)
    ok = not mismatched
    report(11, ok, f"{n_files} CSVs from {len(PRESETS)} presets byte-identical across runs"
                   + (f"; mismatched {mismatched}" if mismatched else ""))
    assert ok
