#!/usr/bin/env python3
"""Generate golden reference files for the mel filterbank tests.

Independent reference implementation of the Slaney-variant mel filterbank
(the librosa.filters.mel construction: triangle filters with centers equally
spaced on the Slaney mel scale, area-normalized). Run once; outputs are
committed under tests/golden/ and configs/.
"""
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "tests" / "golden"
CONFIGS = ROOT / "configs"

F_SP = 200.0 / 3.0          # Hz per mel below the 1 kHz break
MIN_LOG_HZ = 1000.0
MIN_LOG_MEL = MIN_LOG_HZ / F_SP   # 15.0
LOGSTEP = np.log(6.4) / 27.0


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    mel = f / F_SP
    log_t = f >= MIN_LOG_HZ
    mel = np.where(log_t, MIN_LOG_MEL + np.log(np.maximum(f, 1.0) / MIN_LOG_HZ) / LOGSTEP, mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * F_SP
    log_t = m >= MIN_LOG_MEL
    f = np.where(log_t, MIN_LOG_HZ * np.exp(LOGSTEP * (m - MIN_LOG_MEL)), f)
    return f


def mel_filterbank(sr, n_fft, n_bands):
    n_bins = n_fft // 2 + 1
    fftfreqs = np.arange(n_bins, dtype=np.float64) * (sr / n_fft)
    max_mel = float(hz_to_mel(sr / 2.0))
    mels = np.linspace(0.0, max_mel, n_bands + 2)
    hz_pts = mel_to_hz(mels)

    weights = np.zeros((n_bands, n_bins), dtype=np.float64)
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fftfreqs[None, :]
    for b in range(n_bands):
        lower = -ramps[b] / fdiff[b]
        upper = ramps[b + 2] / fdiff[b + 1]
        weights[b] = np.maximum(0.0, np.minimum(lower, upper))
    # slaney area normalization
    enorm = 2.0 / (hz_pts[2 : n_bands + 2] - hz_pts[:n_bands])
    weights *= enorm[:, None]
    return weights, hz_pts, fftfreqs


def band_ranges(weights):
    out = []
    for row in weights:
        nz = np.nonzero(row > 0.0)[0]
        if nz.size == 0:
            raise RuntimeError("empty band")
        if not np.array_equal(nz, np.arange(nz[0], nz[-1] + 1)):
            raise RuntimeError("non-contiguous band support")
        out.append([int(nz[0]), int(nz[-1])])
    return out


def audit_margins(hz_pts, fftfreqs):
    """Distance from every triangle edge to the nearest bin frequency.

    A tiny margin would make the binarized mapping sensitive to ulp-level
    differences between this reference and the C++ implementation.
    Structural coincidences (0 Hz at bin 0, fmax at Nyquist) are expected.
    """
    worst = np.inf
    for p in hz_pts:
        d = np.abs(fftfreqs - p)
        d = d[d > 0.0]  # ignore exact-zero structural hits
        worst = min(worst, float(d.min()))
    return worst


def bandsplit_boundaries(sr, n_fft, n_bands):
    """Mel-spaced disjoint boundaries: config data for the baseline mode."""
    n_bins = n_fft // 2 + 1
    max_mel = float(hz_to_mel(sr / 2.0))
    edges_hz = mel_to_hz(np.linspace(0.0, max_mel, n_bands + 1))
    bounds = [int(round(h / (sr / n_fft))) for h in edges_hz]
    bounds[0], bounds[-1] = 0, n_bins
    for i in range(1, len(bounds)):
        if bounds[i] <= bounds[i - 1]:
            bounds[i] = bounds[i - 1] + 1
    if bounds[-1] != n_bins:
        raise RuntimeError("boundary overflow")
    return bounds


def main():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    CONFIGS.mkdir(parents=True, exist_ok=True)
    sr, n_fft = 44100, 2048

    for n_bands in (16, 60):
        w, hz_pts, fftfreqs = mel_filterbank(sr, n_fft, n_bands)
        ranges = band_ranges(w)
        margin = audit_margins(hz_pts, fftfreqs)
        nyq_in_last = w[-1, -1] > 0.0
        print(f"B={n_bands}: band0={ranges[0]} band1={ranges[1]} last={ranges[-1]} "
              f"edge-margin={margin:.3e} Hz nyquist_covered={nyq_in_last} "
              f"dc_covered={w[0,0] > 0.0}")
        top_rt = float(mel_to_hz(hz_to_mel(sr / 2.0)))
        print(f"  fmax round trip: {top_rt!r} (fmax=22050.0, delta={top_rt - 22050.0:.3e})")

        np.savetxt(GOLDEN / f"melfb_{sr}_{n_fft}_{n_bands}.csv", w,
                   fmt="%.12e", delimiter=",")
        with open(GOLDEN / f"melmap_{sr}_{n_fft}_{n_bands}.json", "w") as f:
            json.dump({"version": 1, "mode": "mel-overlapping", "sample_rate": sr,
                       "fft_size": n_fft, "n_bands": n_bands, "bands": ranges},
                      f, indent=1)
            f.write("\n")

    if n_bands == 60:
        assert ranges[0][0] >= 0

    w16, _, _ = mel_filterbank(sr, n_fft, 16)
    r16 = band_ranges(w16)
    assert r16[0] == [1, 21] and r16[1] == [11, 32], f"16-band sanity failed: {r16[:2]}"
    print("16-band sanity check passed: band0=[1,21] band1=[11,32]")

    for n_bands, name in ((62, "bandsplit62.json"), (16, "bandsplit16.json")):
        bounds = bandsplit_boundaries(sr, n_fft, n_bands)
        with open(CONFIGS / name, "w") as f:
            json.dump({"version": 1, "n_bands": n_bands, "boundaries": bounds}, f)
            f.write("\n")
        print(f"{name}: {n_bands} bands, boundaries[0..3]={bounds[:4]} last={bounds[-1]}")


if __name__ == "__main__":
    sys.exit(main())
