"""Matched-filter (MF) benchmarks for 1-D, 2-D and 3-D observations."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from ..geometry import ArrayKind, BandPlan
from ..waveform import Layout, Observation, delay_steering
from ._common import EstimationResult

DELAY_OVERSAMPLING = 8
ANGLE_STEP = np.deg2rad(0.5)


def delay_step(band_plan: BandPlan) -> float:
    """Default MF delay-grid step: 1/8 of the inverse frequency aperture."""
    return 1.0 / (DELAY_OVERSAMPLING * band_plan.aperture)


def _fft_profile(rows: np.ndarray, band_plan: BandPlan, n_fft: int) -> np.ndarray:
    """``sum_m |d(tau_k)^H y_m|^2`` on ``tau_k = k / (n_fft * df)``, k < n_fft."""
    s = band_plan.subcarriers_per_band
    taus = np.arange(n_fft) / (n_fft * band_plan.subcarrier_spacing)
    acc = np.zeros((rows.shape[0], n_fft), dtype=complex)
    for b, fb in enumerate(band_plan.carriers):
        block = rows[:, b * s:(b + 1) * s]
        inner = n_fft * np.fft.ifft(block, n=n_fft, axis=1)
        acc += np.exp(2j * np.pi * (fb - band_plan.carriers[0]) * taus)[None, :] * inner
    return taus, np.sum(np.abs(acc) ** 2, axis=0)


def delay_profile(rows: np.ndarray, band_plan: BandPlan, grid=None):
    """Non-coherent MF delay profile ``||Y d*(tau)||^2`` over a delay grid.

    ``rows`` holds one observation row per antenna, ``(M, S*B)``. Without an
    explicit grid, the unambiguous range ``[0, 1/df)`` is covered with the
    default step using FFTs.
    """
    rows = np.atleast_2d(rows)
    if grid is None:
        n_fft = math.ceil(DELAY_OVERSAMPLING * band_plan.aperture / band_plan.subcarrier_spacing)
        return _fft_profile(rows, band_plan, n_fft)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty delay grid")
    out = np.empty(grid.size)
    for lo in range(0, grid.size, 2048):
        d = delay_steering(grid[lo:lo + 2048], band_plan)
        out[lo:lo + 2048] = np.sum(np.abs(rows @ d.conj()) ** 2, axis=0)
    return grid, out


def _parabolic_offset(y_m, y_0, y_p) -> float:
    den = y_m - 2 * y_0 + y_p
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (y_m - y_p) / den, -0.5, 0.5))


PEAK_CANDIDATES = 4
PEAK_RELATIVE_LEVEL = 0.5


def _local_maxima(values: np.ndarray, periodic: bool) -> np.ndarray:
    if periodic:
        left, right = np.roll(values, 1), np.roll(values, -1)
    else:
        left = np.concatenate([[-np.inf], values[:-1]])
        right = np.concatenate([values[1:], [-np.inf]])
    return np.flatnonzero((values >= left) & (values > right))


def refine_peak(objective, grid: np.ndarray, values: np.ndarray, periodic: bool = False) -> float:
    """Polish the strongest grid peaks and return the best one.

    Multiband profiles have fringes close to the main lobe; an off-grid main
    peak can sample lower than a neighbouring fringe, so the few largest local
    maxima above half the grid maximum are each polished and compared.
    ``objective`` maps a scalar to the (to be maximized) score.
    """
    if grid.size < 3:
        return float(grid[int(np.argmax(values))])
    peaks = _local_maxima(values, periodic)
    peaks = peaks[values[peaks] >= PEAK_RELATIVE_LEVEL * values.max()]
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(values))])
    peaks = peaks[np.argsort(values[peaks])[::-1][:PEAK_CANDIDATES]]
    best, best_val = None, -np.inf
    for k in peaks:
        x = _refine_at(objective, grid, values, int(k), periodic)
        v = objective(x)
        if v > best_val:
            best, best_val = x, v
    return float(best)


def _refine_at(objective, grid, values, k: int, periodic: bool) -> float:
    """Quadratic interpolation around grid index ``k``, then a bounded Brent polish."""
    n = grid.size
    step = grid[1] - grid[0]
    if periodic:
        y_m, y_p = values[(k - 1) % n], values[(k + 1) % n]
    elif 0 < k < n - 1:
        y_m, y_p = values[k - 1], values[k + 1]
    else:
        return float(grid[k])
    x0 = grid[k] + _parabolic_offset(y_m, values[k], y_p) * step
    lo, hi = grid[k] - step, grid[k] + step
    if not periodic:
        lo, hi = max(lo, grid[0]), min(hi, grid[-1])
    res = minimize_scalar(lambda x: -objective(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": abs(step) * 1e-9})
    best = res.x if -res.fun >= objective(x0) else x0
    return float(best)


def _rows_of(obs: Observation) -> np.ndarray:
    if Layout(obs.layout) is Layout.VECTOR1D:
        return obs.data[None, :]
    return obs.as_matrix()


def estimate_delay(rows: np.ndarray, band_plan: BandPlan, grid=None) -> tuple[float, float]:
    grid, prof = delay_profile(rows, band_plan, grid)
    periodic = grid is not None and np.isclose(
        grid[-1] + (grid[1] - grid[0]), 1.0 / band_plan.subcarrier_spacing) if grid.size > 1 else False

    def score(tau):
        tau = np.mod(tau, 1.0 / band_plan.subcarrier_spacing) if periodic else max(tau, 0.0)
        d = delay_steering(tau, band_plan)
        return float(np.sum(np.abs(rows @ d.conj()) ** 2))

    tau = refine_peak(score, grid, prof, periodic=periodic)
    if periodic:
        tau = float(np.mod(tau, 1.0 / band_plan.subcarrier_spacing))
    confidence = float(prof.max() / max(prof.mean(), 1e-300))
    return max(tau, 0.0), confidence


def mf_1d(obs: Observation, delay_grid=None) -> EstimationResult:
    """LoS delay as the peak of ``|d(tau)^H y|^2``.

    ``confidence`` is the peak-to-mean ratio of the profile; values near 1
    indicate that no path stands out (pure noise).
    """
    tau, conf = estimate_delay(_rows_of(obs), obs.band_plan, delay_grid)
    flags = ["low_confidence"] if conf < 10.0 else []
    return EstimationResult("MF", [tau], 0, 1, confidence=conf, flags=flags)


def _omega_search(z: np.ndarray, obs: Observation) -> float:
    """Peak of ``|a_x(omega)^H z|^2`` over spatial frequency in [-1, 1]."""
    k = 2 * np.pi / obs.wavelength * obs.array.d_x * np.arange(obs.array.n_x)
    grid = np.sin(np.arange(-np.pi / 2, np.pi / 2 + ANGLE_STEP / 2, ANGLE_STEP))
    vals = np.abs(np.exp(-1j * np.outer(grid, k)) @ z) ** 2

    def score(w):
        return float(np.abs(np.exp(-1j * k * w) @ z) ** 2)

    j = int(np.argmax(vals))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    res = minimize_scalar(lambda w: -score(w), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-13})
    return float(res.x) if -res.fun >= vals[j] else float(grid[j])


def _angle_search(z: np.ndarray, obs: Observation) -> tuple[float, float]:
    """Peak of ``|a(t)^H z|^2`` over (az, el) for a URA, ``z`` ordered ``ix*n_z+iz``."""
    pos = obs.array.element_positions()
    kx = 2 * np.pi / obs.wavelength * pos[:, 0]
    kz = 2 * np.pi / obs.wavelength * pos[:, 2]
    az_g = np.arange(-np.pi / 2, np.pi / 2 + ANGLE_STEP / 2, ANGLE_STEP)
    el_g = np.arange(-np.pi / 2, np.pi / 2 + ANGLE_STEP / 2, ANGLE_STEP)
    az_m, el_m = np.meshgrid(az_g, el_g, indexing="ij")
    tx = (np.cos(el_m) * np.sin(az_m)).ravel()
    tz = np.sin(el_m).ravel()
    vals = np.abs(np.exp(-1j * (np.outer(tx, kx) + np.outer(tz, kz))) @ z) ** 2
    j = int(np.argmax(vals))

    def neg(x):
        az, el = x
        a = np.exp(1j * (kx * np.cos(el) * np.sin(az) + kz * np.sin(el)))
        return -float(np.abs(a.conj() @ z) ** 2)

    x0 = np.array([az_m.ravel()[j], el_m.ravel()[j]])
    res = minimize(neg, x0, method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-14 * vals[j], "maxiter": 2000})
    az, el = res.x if res.fun <= -vals[j] else x0
    el = float(np.clip(el, -np.pi / 2, np.pi / 2))
    return float(np.clip(az, -np.pi / 2, np.pi / 2)), el


def mf_3d(obs: Observation, delay_grid=None) -> EstimationResult:
    """Two-stage MF: non-coherent delay, then angles at the delay estimate.

    For URAs this returns azimuth and elevation. For linear arrays (``n_z = 1``)
    the angle stage searches the spatial frequency ``cos(el) sin(az)`` only.
    """
    kind = obs.array.kind
    if kind is ArrayKind.SINGLE:
        raise ValueError("mf_3d needs a multi-antenna observation; use mf_1d")
    rows = obs.as_matrix()
    tau, conf = estimate_delay(rows, obs.band_plan, delay_grid)
    z = rows @ delay_steering(tau, obs.band_plan).conj()
    flags = ["low_confidence"] if conf < 10.0 else []
    if kind is ArrayKind.ULA:
        omega = _omega_search(z, obs)
        return EstimationResult("MF", [tau], 0, 1, spatial_frequencies=[omega],
                                los_spatial_frequency=omega, confidence=conf, flags=flags)
    az, el = _angle_search(z, obs)
    return EstimationResult("MF", [tau], 0, 1, azimuths=[az], elevations=[el],
                            los_azimuth=az, los_elevation=el, confidence=conf, flags=flags)


def mf_omega_at(obs: Observation, tau: float) -> float:
    """MF spatial-frequency estimate at a given delay (linear arrays)."""
    rows = obs.as_matrix()
    z = rows @ delay_steering(tau, obs.band_plan).conj()
    return _omega_search(z, obs)
