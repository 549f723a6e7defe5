from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bfcshaper.comb import TWO_PI, apply_phases, make_distinct_grid, make_shared_grid
from bfcshaper.detection import (
    Histogram,
    ImpulseResponse,
    bin_and_sample,
    bin_edges_for,
    convolve_response,
    curve_fwhm,
    normalize_family,
    read_histogram_csv,
    rect_filter_reference,
    write_histogram_csv,
)
from bfcshaper.wavepacket import TauGrid, Wavepacket, wavepacket_closed_form

# sin(x)/x = 1/sqrt(2) at x = 1.3915573782515101503 (mpmath findroot);
# FWHM of |sinc|^2 for W = 2 pi 50 GHz is 4x/W
RECT_FWHM_ORACLE = 17.7178588275780936e-12


def _gauss(tau, sigma, t0=0.0):
    return np.exp(-0.5 * ((tau - t0) / sigma) ** 2)


def _wp(tau, g):
    return Wavepacket(np.asarray(tau), np.asarray(g, dtype=float))


def test_gaussian_kernel_unit_sum_and_width():
    h = ImpulseResponse.gaussian()
    k = h.kernel(1e-12)
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    assert k.size == 2 * math.ceil(5 * h.sigma / 1e-12) + 1
    assert h.sigma == pytest.approx(80e-12 / 2.3548200450309493, rel=1e-12)
    from scipy import integrate

    area, _ = integrate.quad(h, -1e-9, 1e-9, points=[0.0])
    assert area == pytest.approx(1.0, rel=1e-9)


def test_convolution_of_gaussians_matches_analytic_oracle():
    tau = TauGrid.symmetric(1.5e-9, 1e-12).values
    s_in = 60e-12
    h = ImpulseResponse.gaussian(80e-12)
    out = convolve_response(_wp(tau, _gauss(tau, s_in)), h)
    s_out = math.hypot(s_in, h.sigma)
    expected = _gauss(tau, s_out) * s_in / s_out
    np.testing.assert_allclose(out.g2, expected, atol=1e-6)
    assert out.convolved and out.psi is None


def test_convolution_preserves_area_and_symmetry_point():
    tau = TauGrid.symmetric(2e-9, 1e-12).values
    g = _gauss(tau, 100e-12, 37e-12) * (1 + 0.5 * np.cos(2 * np.pi * tau / 333e-12))
    out = convolve_response(_wp(tau, g), ImpulseResponse.gaussian())
    assert out.g2.sum() == pytest.approx(g.sum(), rel=1e-9)
    sym = _gauss(tau, 100e-12)
    out2 = convolve_response(_wp(tau, sym), ImpulseResponse.gaussian())
    assert abs(tau[np.argmax(out2.g2)]) <= 1e-12


def test_constant_in_constant_out():
    tau = TauGrid.symmetric(1e-9, 1e-12).values
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = convolve_response(_wp(tau, np.ones_like(tau)), ImpulseResponse.gaussian())
    mid = slice(400, -400)
    np.testing.assert_allclose(out.g2[mid], 1.0, rtol=1e-12)


def test_edge_warning_and_undersampling_error():
    tau = TauGrid.symmetric(1e-9, 1e-12).values
    with pytest.warns(UserWarning, match="grid edge"):
        convolve_response(_wp(tau, np.ones_like(tau)), ImpulseResponse.gaussian())
    coarse = TauGrid.symmetric(1e-9, 20e-12).values
    with pytest.raises(ValueError, match="undersamples"):
        convolve_response(_wp(coarse, np.ones_like(coarse)), ImpulseResponse.gaussian())


def test_delta_limit_is_identity():
    grid = TauGrid.symmetric(2.5e-9, 1e-12)
    wp = wavepacket_closed_form(make_shared_grid(1), grid)
    out = convolve_response(wp, ImpulseResponse.gaussian(8e-12))
    assert np.max(np.abs(out.g2 - wp.g2)) < 1e-3 * wp.g2.max()


def test_d6_contrast_after_jitter():
    wp = wavepacket_closed_form(make_shared_grid(6))
    c = convolve_response(wp, ImpulseResponse.gaussian())
    centre = np.abs(c.tau) <= 1 / (TWO_PI * 1.3e9)
    ymax, ymin = c.g2[centre].max(), c.g2[centre].min()
    assert ymin < 0.15 * ymax
    assert ymin > 0


def test_tabulated_response_roundtrip(tmp_path):
    tau = np.linspace(-200e-12, 200e-12, 401)
    w = 3.0 * _gauss(tau, 80e-12 / 2.3548200450309493)
    p = tmp_path / "h.csv"
    np.savetxt(p, np.column_stack([tau, w]), delimiter=",", header="tau_s,weight", comments="")
    h = ImpulseResponse.from_csv(p)
    assert h.fwhm == pytest.approx(80e-12, rel=1e-3)
    assert np.trapezoid(h.samples[1], h.samples[0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ImpulseResponse.tabulated(tau, -w)


def test_bin_edges_centered_on_multiples():
    tau = TauGrid().values
    edges = bin_edges_for(tau, 20e-12)
    centers = 0.5 * (edges[:-1] + edges[1:])
    np.testing.assert_allclose(centers / 20e-12, np.round(centers / 20e-12), atol=1e-9)
    assert edges[0] >= tau[0] - 0.5e-12 and edges[-1] <= tau[-1] + 0.5e-12


def test_expectation_mode_sums_to_total():
    wp = convolve_response(wavepacket_closed_form(make_shared_grid(3)), ImpulseResponse.gaussian())
    h = bin_and_sample(wp, 20e-12, 10**6, noisy=False)
    assert h.counts.sum() == pytest.approx(1e6, rel=1e-12)
    assert not h.noisy and h.seed is None
    # 20 ps bins on a 1 ps grid integrate 20 cells each
    assert np.allclose(np.diff(h.bin_centers), 20e-12)


def test_expectation_mode_linear_in_scale():
    wp = convolve_response(wavepacket_closed_form(make_shared_grid(2)), ImpulseResponse.gaussian())
    a = bin_and_sample(wp, 20e-12, 1000, noisy=False)
    b = bin_and_sample(Wavepacket(wp.tau, 7 * wp.g2), 20e-12, 7000, noisy=False)
    np.testing.assert_allclose(b.counts, 7 * a.counts, rtol=0, atol=1e-12 * b.counts.max())


def test_bin_integral_exact_for_piecewise_constant():
    tau = np.arange(0, 100) * 1e-12
    g = np.zeros(100)
    g[40:60] = 1.0  # cells [39.5, 59.5) ps
    h = bin_and_sample(_wp(tau, g), 20e-12, 20, noisy=False)
    np.testing.assert_allclose(h.bin_centers, [20e-12, 40e-12, 60e-12, 80e-12])
    np.testing.assert_allclose(h.counts, [0, 10.5, 9.5, 0], atol=1e-9)


def test_poisson_reproducible_and_dispersion():
    wp = convolve_response(wavepacket_closed_form(make_shared_grid(3)), ImpulseResponse.gaussian())
    a = bin_and_sample(wp, 20e-12, 10**5, seed=7)
    b = bin_and_sample(wp, 20e-12, 10**5, seed=7)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert np.issubdtype(a.counts.dtype, np.integer)
    mean = bin_and_sample(wp, 20e-12, 10**5, noisy=False).counts
    draws = np.array([bin_and_sample(wp, 20e-12, 10**5, seed=s).counts for s in range(120)])
    keep = mean > 20
    assert draws[:, keep].size >= 1e4
    ratio = draws[:, keep].var(axis=0, ddof=1).sum() / mean[keep].sum()
    assert 0.9 <= ratio <= 1.1
    # chi-square of all draws against the Poisson means
    from scipy import stats

    chi2 = ((draws[:, keep] - mean[keep]) ** 2 / mean[keep]).sum()
    dof = draws[:, keep].size
    assert stats.chi2.sf(chi2, dof) > 0.01 and stats.chi2.cdf(chi2, dof) > 0.01


def test_bin_and_sample_errors():
    tau = np.arange(10) * 1e-12
    with pytest.raises(ValueError, match="smaller"):
        bin_and_sample(_wp(tau, np.ones(10)), 0.5e-12)
    with pytest.raises(ValueError, match="total_counts"):
        bin_and_sample(_wp(tau, np.ones(10)), 2e-12, 0)
    with pytest.raises(ValueError, match="no complete"):
        bin_and_sample(_wp(tau, np.ones(10)), 50e-12)
    with pytest.raises(ValueError, match="zero"):
        bin_and_sample(_wp(tau, np.zeros(10)), 2e-12)


def test_histogram_validation():
    with pytest.raises(ValueError):
        Histogram(0.0, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        Histogram(1.0, np.arange(3.0), np.array([1, -1, 0]))
    with pytest.raises(ValueError):
        Histogram(1.0, np.array([0.0, 2.0]), np.array([1, 1]))


def _family():
    cfg = make_distinct_grid(3)
    out = []
    for k, dphi in enumerate([0, math.pi / 2, math.pi, 3 * math.pi / 2]):
        c = apply_phases(cfg, [0, 0, 0], [0, dphi, 2 * dphi])
        wp = convolve_response(wavepacket_closed_form(c), ImpulseResponse.gaussian())
        out.append(bin_and_sample(wp, 20e-12, 10**5 * (k + 1), noisy=False, meta={"d": 3}))
    return out


def test_normalize_family_fig3c():
    fam = normalize_family(_family())
    areas = [h.area for h in fam]
    np.testing.assert_allclose(areas, areas[0], rtol=1e-12)
    peaks = [h.counts.max() for h in fam]
    assert max(peaks) == 1.0
    assert int(np.argmax(peaks)) == 0
    assert abs(fam[0].bin_centers[np.argmax(fam[0].counts)]) <= 20e-12


def test_normalize_family_properties():
    fam = _family()
    once = normalize_family(fam)
    twice = normalize_family(once)
    for a, b in zip(once, twice):
        np.testing.assert_allclose(a.counts, b.counts, rtol=1e-14)
    single = normalize_family(fam[:1])[0]
    assert single.counts.max() == 1.0
    scaled = Histogram(fam[0].bin_width, fam[0].bin_centers, 5 * fam[0].counts, meta={"d": 3})
    a, b = normalize_family([fam[0], scaled])
    np.testing.assert_allclose(a.counts, b.counts, rtol=1e-14)


def test_normalize_family_errors():
    fam = _family()
    other = Histogram(fam[0].bin_width, fam[0].bin_centers, fam[0].counts, meta={"d": 6})
    with pytest.raises(ValueError, match="dimensions"):
        normalize_family([fam[0], other])
    normalize_family([fam[0], other], same_d=False)
    with pytest.raises(ValueError, match="zero-area"):
        normalize_family([Histogram(1.0, np.arange(3.0), np.zeros(3))])
    shifted = Histogram(fam[0].bin_width, fam[0].bin_centers + 1e-12, fam[0].counts)
    with pytest.raises(ValueError, match="grid"):
        normalize_family([fam[0], shifted])


def test_rect_filter_reference_widths():
    raw = rect_filter_reference(TWO_PI * 50e9)
    assert curve_fwhm(raw) == pytest.approx(RECT_FWHM_ORACLE, abs=0.02e-12)
    conv = rect_filter_reference(TWO_PI * 50e9, ImpulseResponse.gaussian())
    assert curve_fwhm(conv) == pytest.approx(80e-12, rel=0.05)
    wide = rect_filter_reference(TWO_PI * 500e9, ImpulseResponse.gaussian())
    assert curve_fwhm(wide) == pytest.approx(80e-12, rel=0.01)
    with pytest.raises(ValueError):
        rect_filter_reference(0.0)


def test_csv_roundtrip_exact(tmp_path):
    wp = convolve_response(wavepacket_closed_form(make_shared_grid(6)), ImpulseResponse.gaussian())
    for noisy in (True, False):
        h = bin_and_sample(wp, 20e-12, 10**5, seed=3, noisy=noisy)
        p = tmp_path / f"h{noisy}.csv"
        write_histogram_csv(h, p, "demo")
        back = read_histogram_csv(p)
        np.testing.assert_array_equal(back.counts, h.counts)
        np.testing.assert_array_equal(back.bin_centers, h.bin_centers)
        assert back.bin_width == h.bin_width
        assert back.meta["scenario"] == "demo"
        assert p.read_text().splitlines()[1] == "tau_s,counts"


@settings(max_examples=25, deadline=None)
@given(st.floats(30e-12, 200e-12), st.floats(-300e-12, 300e-12))
def test_convolution_positive_and_area_preserving(width, t0):
    tau = TauGrid.symmetric(1.5e-9, 1e-12).values
    g = _gauss(tau, width, t0)
    out = convolve_response(_wp(tau, g), ImpulseResponse.gaussian())
    assert np.all(out.g2 >= 0)
    assert out.g2.sum() == pytest.approx(g.sum(), rel=1e-9)
