"""Coincidence fringes of shared-ring combs for d = 1, 2, 3, 6.

Builds each comb, blurs it with an 80 ps detector response, bins at 20 ps
and prints period and central contrast. Saves a plot if matplotlib works.
"""
from __future__ import annotations

import sys

import numpy as np

from bfcshaper import (
    ImpulseResponse,
    bin_and_sample,
    convolve_response,
    fringe_metrics,
    make_shared_grid,
    wavepacket_closed_form,
)

h = ImpulseResponse.gaussian(80e-12)
curves = {}
for d in (1, 2, 3, 6):
    wp = convolve_response(wavepacket_closed_form(make_shared_grid(d)), h)
    curves[d] = bin_and_sample(wp, 20e-12, 10**5, noisy=False)

print(" d   period (ps)   contrast")
for d, hist in curves.items():
    if d == 1:
        print(f" {d}        -         -")
        continue
    m = fringe_metrics(hist)
    print(f" {d}     {m.period * 1e12:6.1f}      {m.contrast:.3f}")

if len(sys.argv) > 1:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for d, hist in curves.items():
        y = np.asarray(hist.counts, float)
        ax.plot(hist.bin_centers * 1e9, y / y.max(), label=f"d={d}")
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("normalised coincidences")
    ax.legend()
    fig.tight_layout()
    fig.savefig(sys.argv[1])
    print("wrote", sys.argv[1])
