"""ESPRIT-type estimators for 2-D (ULA) and 1-D (single antenna) observations."""

from __future__ import annotations

import numpy as np

from ..waveform import Layout, Observation, delay_steering
from ._common import (
    AugmentationConfig,
    EstimationResult,
    PreconditionError,
    check_subspace_rank,
    default_augmentation_2d,
    default_stacking,
    estimate_order,
    phase_to_delay,
    rank_feasible_1d,
    rank_feasible_2d,
    select_los,
    shift_eigenvalues,
)
from .mf import mf_omega_at

LOS_MIN_RELATIVE_POWER = 1e-4


def _path_powers(model: np.ndarray, data: np.ndarray) -> np.ndarray:
    """LS amplitudes of the columns of ``model`` fitted to ``data`` columns."""
    coef = np.linalg.lstsq(model, data, rcond=None)[0]
    return np.sum(np.abs(coef) ** 2, axis=-1) if coef.ndim > 1 else np.abs(coef) ** 2


def _check_ula(obs: Observation):
    if Layout(obs.layout) is not Layout.MATRIX2D:
        raise PreconditionError("2-D ESPRIT needs a Matrix2D observation")
    if obs.array.n_x < 2:
        raise PreconditionError("2-D ESPRIT needs at least two horizontal elements")


def _omega_from_phase(phase, obs: Observation) -> np.ndarray:
    w = obs.wavelength * np.asarray(phase) / (2 * np.pi * obs.array.d_x)
    return np.clip(w, -1.0, 1.0)


def esprit_2d(obs: Observation, order: int | None = None) -> EstimationResult:
    """Multiband ESPRIT on the subcarrier subspace of a ULA observation.

    Delays come from the eigenphases of the shift-invariance solution on the
    left singular vectors of ``Y^T``. Per-path spatial frequencies are paired
    through the same eigenvectors. The LoS spatial frequency is the MF
    correlation peak at the LoS delay.
    """
    _check_ula(obs)
    y = obs.data
    n_x = obs.array.n_x
    s, b = obs.band_plan.subcarriers_per_band, obs.band_plan.n_bands
    u, sv, vh = np.linalg.svd(y.T, full_matrices=False)
    if order is None:
        order = min(estimate_order(y, s, b), n_x - 1)
    if order > n_x or order > (s - 1) * b:
        raise PreconditionError(
            f"{order} paths exceed the rank of a {n_x}-element observation; "
            "use the spatially augmented variant")
    check_subspace_rank(sv, order, "Use the spatially augmented variant.")
    lam, t = shift_eigenvalues(u[:, :order], b, s)
    delays = phase_to_delay(np.angle(lam), obs.band_plan.subcarrier_spacing)
    # rows of T^-1 Sigma V^H are the scaled horizontal steering vectors
    ax = np.linalg.solve(t, sv[:order, None] * vh[:order]).T
    omega = _omega_from_phase(
        [np.angle(np.vdot(ax[:-1, l], ax[1:, l])) for l in range(order)], obs)
    powers = _path_powers(delay_steering(delays, obs.band_plan), y.T)
    idx, flags = select_los(delays, powers=powers, min_relative_power=LOS_MIN_RELATIVE_POWER)
    w_los = mf_omega_at(obs, float(delays[idx]))
    return EstimationResult("ESPRIT2D", delays, idx, order, spatial_frequencies=omega,
                            los_spatial_frequency=w_los, powers=powers, flags=flags)


def augment_2d(obs: Observation, n_x_aug: int) -> np.ndarray:
    """Augmented matrix with rows ``(ix, r)`` and columns ``(b, c)``.

    Entry ``Y[ix, b*S + r + c]``; shape ``(n_x*(n_x_aug+1), (S-n_x_aug)*B)``.
    """
    s, b = obs.band_plan.subcarriers_per_band, obs.band_plan.n_bands
    v = s - n_x_aug
    if v < 1:
        raise PreconditionError(f"augmentation {n_x_aug} leaves no samples (S = {s})")
    y = obs.data.reshape(obs.array.n_x, b, s)
    idx = np.arange(n_x_aug + 1)[:, None] + np.arange(v)[None, :]
    g = y[:, :, idx]  # (n_x, b, r, c)
    return np.transpose(g, (0, 2, 1, 3)).reshape(obs.array.n_x * (n_x_aug + 1), v * b)


def esprit_2d_sa(obs: Observation, aug: AugmentationConfig | None = None,
                 order: int | None = None) -> EstimationResult:
    """2-D ESPRIT on the spatially augmented matrix.

    Delays come from the subcarrier subspace and spatial frequencies from a
    separate shift-invariance problem on the (conjugated) right singular
    vectors, so the two lists are not paired. The LoS spatial frequency is the
    estimate closest to the MF spatial frequency at the LoS delay.
    """
    _check_ula(obs)
    n_x = obs.array.n_x
    s, b = obs.band_plan.subcarriers_per_band, obs.band_plan.n_bands
    if order is None:
        order = estimate_order(obs.data, s, b)
    if aug is None:
        aug = default_augmentation_2d(order, n_x, s, b)
    elif not rank_feasible_2d(order, n_x, s, b, aug.n_x_aug):
        raise PreconditionError(
            f"augmentation n_x={aug.n_x_aug} cannot support {order} paths with {n_x} elements")
    q = aug.n_x_aug + 1
    v = s - aug.n_x_aug
    x = augment_2d(obs, aug.n_x_aug)
    u, sv, vh = np.linalg.svd(x.T, full_matrices=False)
    check_subspace_rank(sv, order, "Increase the augmentation or reduce the model order.")
    lam, _ = shift_eigenvalues(u[:, :order], b, v)
    delays = phase_to_delay(np.angle(lam), obs.band_plan.subcarrier_spacing)
    # spatial subspace: columns of conj(V); shifting ix by one moves q rows
    vs = vh[:order].T
    i1 = np.arange((n_x - 1) * q)
    phi = np.linalg.eigvals(np.linalg.lstsq(vs[i1], vs[i1 + q], rcond=None)[0])
    omega = _omega_from_phase(np.angle(phi), obs)
    powers = _path_powers(delay_steering(delays, obs.band_plan), obs.data.T)
    idx, flags = select_los(delays, powers=powers, min_relative_power=LOS_MIN_RELATIVE_POWER)
    w_mf = mf_omega_at(obs, float(delays[idx]))
    w_los = float(omega[np.argmin(np.abs(omega - w_mf))])
    return EstimationResult("ESPRIT2D-SA", delays, idx, order, spatial_frequencies=omega,
                            los_spatial_frequency=w_los, paired=False, powers=powers,
                            flags=flags)


def stack_1d(y: np.ndarray, band_plan, p: int) -> np.ndarray:
    """Per-band Hankel stacking: rows ``(b, i)``, columns ``j``, entry ``y[b*S + i + j]``."""
    s, b = band_plan.subcarriers_per_band, band_plan.n_bands
    if not 1 <= p <= s:
        raise PreconditionError(f"stacking parameter {p} outside [1, {s}]")
    yb = y.reshape(b, s)
    idx = np.arange(p)[:, None] + np.arange(s + 1 - p)[None, :]
    return yb[:, idx].reshape(b * p, s + 1 - p)


def esprit_1d(obs: Observation, stacking_p: int | None = None,
              order: int | None = None) -> EstimationResult:
    """Single-antenna ESPRIT with per-band frequency smoothing."""
    if Layout(obs.layout) is not Layout.VECTOR1D:
        raise PreconditionError("1-D ESPRIT needs a Vector1D observation")
    s, b = obs.band_plan.subcarriers_per_band, obs.band_plan.n_bands
    y = obs.data
    if order is None:
        order = estimate_order(y, s, b)
    p = default_stacking(order, s, b) if stacking_p is None else stacking_p
    if not rank_feasible_1d(order, s, b, p):
        raise PreconditionError(
            f"stacking parameter P={p} cannot support {order} paths (need L <= S+1-P "
            "and L <= (P-1)B)")
    h = stack_1d(y, obs.band_plan, p)
    u, sv, _ = np.linalg.svd(h, full_matrices=False)
    check_subspace_rank(sv, order, "Paths with identical delays cannot be separated.")
    lam, _ = shift_eigenvalues(u[:, :order], b, p)
    delays = phase_to_delay(np.angle(lam), obs.band_plan.subcarrier_spacing)
    powers = _path_powers(delay_steering(delays, obs.band_plan), y)
    idx, flags = select_los(delays, powers=powers, min_relative_power=LOS_MIN_RELATIVE_POWER)
    return EstimationResult("ESPRIT1D", delays, idx, order, powers=powers, flags=flags)
