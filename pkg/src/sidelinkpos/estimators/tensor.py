"""CPD of 3-D observations, with and without spatial augmentation (SA)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar

from ..geometry import ArrayKind, BandPlan
from ..waveform import Layout, Observation
from ._common import (
    AlsDivergenceError,
    AugmentationConfig,
    EstimationResult,
    HeightPrior,
    PreconditionError,
    check_subspace_rank,
    default_augmentation_3d,
    estimate_order,
    kruskal_feasible_3d,
    multichannel_hankel,
    phase_to_delay,
    select_los,
    shift_eigenvalues,
)
from .mf import ANGLE_STEP, refine_peak

MAX_ITER = 500
FIT_TOL = 1e-8
N_RESTARTS = 3
# the structured start is already close; long ALS runs barely move it
SA_MAX_ITER = 50
SA_FIT_TOL = 1e-6
LOS_MIN_RELATIVE_POWER = 1e-4


@dataclass
class CpdFactors:
    """Rank-``L`` factors of an ``(n_z, n_x, K)`` tensor, one column per component.

    ``rel_error`` is ``||Y - Yhat||_F / ||Y||_F`` at the returned iterate.
    """

    a_z: np.ndarray
    a_x: np.ndarray
    d: np.ndarray
    rel_error: float
    n_iter: int

    @property
    def order(self) -> int:
        return self.d.shape[1]

    def reconstruct(self) -> np.ndarray:
        return np.einsum("il,jl,kl->ijk", self.a_z, self.a_x, self.d)

    def powers(self) -> np.ndarray:
        return (np.linalg.norm(self.a_z, axis=0) * np.linalg.norm(self.a_x, axis=0)
                * np.linalg.norm(self.d, axis=0)) ** 2


def _khatri_rao(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    return (f1[:, None, :] * f2[None, :, :]).reshape(-1, f1.shape[1])


def _ls_factor(unfold: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Solve ``unfold ~ F (f1 kr f2)^T`` for ``F``."""
    rhs = unfold @ _khatri_rao(f1, f2).conj()
    gram = (f1.T @ f1.conj()) * (f2.T @ f2.conj())
    return np.linalg.lstsq(gram.T, rhs.T, rcond=None)[0].T


def _normalize(a_z, a_x, d):
    nx = np.linalg.norm(a_x, axis=0)
    nd = np.linalg.norm(d, axis=0)
    nx[nx == 0] = 1.0
    nd[nd == 0] = 1.0
    return a_z * (nx * nd), a_x / nx, d / nd


def _als(x: np.ndarray, init, max_iter: int, tol: float) -> CpdFactors:
    a_z, a_x, d = (np.array(f, dtype=complex) for f in init)
    norm_x = np.linalg.norm(x)
    if norm_x == 0:
        raise PreconditionError("cannot decompose an all-zero tensor")
    n_z, n_x, k = x.shape
    x_z = x.reshape(n_z, n_x * k)                           # columns (j, k)
    x_x = np.transpose(x, (1, 0, 2)).reshape(n_x, n_z * k)  # columns (i, k)
    x_d = x.reshape(n_z * n_x, k).T                         # columns (i, j)
    def rel_err(fz, fx, fd):
        return np.linalg.norm(x_z - fz @ _khatri_rao(fx, fd).T) / norm_x

    err_prev = np.inf
    best = None
    increases = 0
    it = 0
    prev = None
    for it in range(1, max_iter + 1):
        d = _ls_factor(x_d, a_z, a_x)
        a_x = _ls_factor(x_x, a_z, d)
        a_z = _ls_factor(x_z, a_x, d)
        a_z, a_x, d = _normalize(a_z, a_x, d)
        err = rel_err(a_z, a_x, d)
        if prev is not None and it > 2:
            # extrapolation along the last update (Bro's line search) to leave swamps
            mu = it ** (1.0 / 3.0)
            cand = [f + mu * (f - g) for f, g in zip((a_z, a_x, d), prev)]
            cand_err = rel_err(*cand)
            if cand_err < err:
                a_z, a_x, d = _normalize(*cand)
                err = cand_err
        prev = (a_z, a_x, d)
        if not np.isfinite(err):
            raise AlsDivergenceError("ALS produced non-finite factors", best)
        if best is None or err < best.rel_error:
            best = CpdFactors(a_z, a_x, d, float(err), it)
        if err > err_prev * (1 + 1e-9) + 1e-15:
            increases += 1
            if increases >= 5:
                raise AlsDivergenceError("ALS fit increased repeatedly", best)
        else:
            increases = 0
        if err < 1e-13 or abs(err_prev - err) < tol * err_prev:
            break
        err_prev = err
    best.n_iter = it
    return best


def _random_init(shape, order, rng):
    def draw(n):
        return (rng.standard_normal((n, order)) + 1j * rng.standard_normal((n, order))) / np.sqrt(2)

    return draw(shape[0]), draw(shape[1]), draw(shape[2])


def cpd(tensor, order: int, seed=0, n_restarts: int = N_RESTARTS, init=None,
        max_iter: int = MAX_ITER, tol: float = FIT_TOL) -> CpdFactors:
    """Rank-``order`` CPD by complex alternating least squares.

    ``tensor`` is an ``(n_z, n_x, K)`` array or a ``Tensor3D`` observation.
    Random complex Gaussian starts drawn from ``seed`` are tried ``n_restarts``
    times and the best fit is kept. An explicit ``init`` (three factor matrices)
    is tried first. Iteration stops when the relative error changes by less
    than ``tol`` (relative) or after ``max_iter`` sweeps.
    """
    x = tensor.as_tensor() if isinstance(tensor, Observation) else np.asarray(tensor)
    if x.ndim != 3:
        raise ValueError("cpd expects a 3-D tensor")
    if order < 1:
        raise ValueError("order must be >= 1")
    rng = np.random.default_rng(seed)
    starts = [init] if init is not None else []
    starts += [_random_init(x.shape, order, rng) for _ in range(n_restarts)]
    best = None
    last_exc = None
    for start in starts:
        try:
            res = _als(x, start, max_iter, tol)
        except AlsDivergenceError as exc:
            last_exc = exc
            res = exc.best
        if res is not None and (best is None or res.rel_error < best.rel_error):
            best = res
        if best is not None and best.rel_error < 1e-12:
            break
    if best is None:
        raise last_exc
    return best


def _shift_ratio(v: np.ndarray, step: int = 1) -> complex:
    """LS estimate of ``r`` in ``v[step:] = r v[:-step]``."""
    lo, hi = v[:-step], v[step:]
    den = np.vdot(lo, lo)
    if den == 0:
        raise PreconditionError("zero factor vector")
    return np.vdot(lo, hi) / den


def _delay_from_factor(d: np.ndarray, band_plan: BandPlan, s: int) -> float:
    """Delay of a multiband factor whose bands hold ``s`` consecutive subcarriers."""
    blocks = d.reshape(band_plan.n_bands, s)
    lo, hi = blocks[:, :-1].ravel(), blocks[:, 1:].ravel()
    ratio = np.vdot(hi, lo)  # e^{+j 2 pi df tau} * |.|^2
    return float(phase_to_delay(np.angle(ratio), band_plan.subcarrier_spacing))


def cpd_extract(factors: CpdFactors, array, band_plan: BandPlan, wavelength: float):
    """Per-path ``(delays, azimuths, elevations)`` from unaugmented CPD factors."""
    if factors.a_z.shape[0] != array.n_z or factors.a_x.shape[0] != array.n_x:
        raise ValueError("factor lengths do not match the array")
    if factors.d.shape[0] != band_plan.n_samples:
        raise ValueError("delay factor length does not match the band plan")
    if array.n_x < 2 or array.n_z < 2:
        raise PreconditionError("angle extraction needs at least 2 elements per axis")
    n = factors.order
    delays, az, el = np.empty(n), np.empty(n), np.empty(n)
    for l in range(n):
        delays[l] = _delay_from_factor(factors.d[:, l], band_plan, band_plan.subcarriers_per_band)
        sz = wavelength * np.angle(_shift_ratio(factors.a_z[:, l])) / (2 * np.pi * array.d_z)
        el[l] = np.arcsin(np.clip(sz, -1.0, 1.0))
        ce = np.cos(el[l])
        if abs(ce) < 1e-6:
            raise PreconditionError("azimuth undefined at |cos(elevation)| < 1e-6")
        w = wavelength * np.angle(_shift_ratio(factors.a_x[:, l])) / (2 * np.pi * array.d_x)
        az[l] = np.arcsin(np.clip(w / ce, -1.0, 1.0))
    return delays, az, el


def spatial_augment_3d(obs, aug: AugmentationConfig) -> np.ndarray:
    """Hankel-based spatial augmentation of a ``(n_z, n_x, S*B)`` tensor.

    Returns shape ``(n_z*(nz+1), n_x*(nx+1), V*B)`` with ``V = S - nz - nx``
    and entries ``Y[iz, ix, b*S + i2 + r + c]`` at index
    ``((iz, i2), (ix, r), (b, c))``.
    """
    if Layout(obs.layout) is not Layout.TENSOR3D:
        raise ValueError("spatial augmentation needs a Tensor3D observation")
    y = obs.as_tensor()
    s = obs.band_plan.subcarriers_per_band
    b = obs.band_plan.n_bands
    nx, nz = aug.n_x_aug, aug.n_z_aug
    v = s - nx - nz
    if v < 1:
        raise PreconditionError(f"augmentation ({nx}, {nz}) leaves no samples (S = {s})")
    n_z, n_x = y.shape[:2]
    yb = y.reshape(n_z, n_x, b, s)
    i2 = np.arange(nz + 1)[:, None, None]
    r = np.arange(nx + 1)[None, :, None]
    c = np.arange(v)[None, None, :]
    idx = i2 + r + c  # (nz+1, nx+1, v)
    g = yb[:, :, :, idx]  # (n_z, n_x, b, nz+1, nx+1, v)
    g = np.transpose(g, (0, 3, 1, 4, 2, 5))
    return g.reshape(n_z * (nz + 1), n_x * (nx + 1), v * b)


def augmented_steering(tau, azimuth, elevation, array, band_plan: BandPlan, wavelength,
                       aug: AugmentationConfig):
    """Factor vectors ``(a_z kron d_S[:nz+1], a_x kron d_S[:nx+1], J1 d)`` of one path."""
    from ..waveform import delay_steering, steering_x, steering_z

    s = band_plan.subcarriers_per_band
    nx, nz = aug.n_x_aug, aug.n_z_aug
    v = s - nx - nz
    d = delay_steering(tau, band_plan)
    ds = d[:s]  # first band carries offset 0
    az_t = np.kron(steering_z(elevation, array, wavelength), ds[:nz + 1])
    ax_t = np.kron(steering_x(azimuth, elevation, array, wavelength), ds[:nx + 1])
    dt = d.reshape(band_plan.n_bands, s)[:, :v].ravel()
    return az_t, ax_t, dt


def _mode3_unfolding(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[2]).T


def shift_init(x: np.ndarray, order: int, n_bands: int, v: int, basis=None):
    """Structured CPD start: multiband shift invariance on the mode-3 unfolding.

    ``basis`` may pass precomputed left singular vectors of that unfolding.
    """
    x3 = _mode3_unfolding(x)
    u = np.linalg.svd(x3, full_matrices=False)[0] if basis is None else basis
    u = u[:, :order]
    _, t = shift_eigenvalues(u, n_bands, v)
    c = u @ t
    k = np.linalg.pinv(c) @ x3
    a_z = np.empty((x.shape[0], order), dtype=complex)
    a_x = np.empty((x.shape[1], order), dtype=complex)
    for l in range(order):
        uu, ss, vh = np.linalg.svd(k[l].reshape(x.shape[0], x.shape[1]))
        a_z[:, l] = uu[:, 0] * ss[0]
        a_x[:, l] = vh[0]
    return a_z, a_x, c


def _argmax_1d(score, lo: float, hi: float) -> float:
    grid = np.arange(lo, hi + ANGLE_STEP / 2, ANGLE_STEP)
    vals = score(grid)
    j = int(np.argmax(vals))
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: -score(np.array([t]))[0], bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x) if -res.fun >= vals[j] else float(grid[j])


def refine_factor_delay(d: np.ndarray, band_plan: BandPlan, s: int, tau0: float) -> float:
    """Polish a shift-ratio delay by maximizing ``|d(tau)^H f|`` within one lobe."""
    from ..waveform import delay_steering

    offs = band_plan.frequency_offsets().reshape(band_plan.n_bands, -1)[:, :s].ravel()
    period = 1.0 / band_plan.subcarrier_spacing

    def score(tau):
        return abs(np.vdot(np.exp(-2j * np.pi * offs * tau), d))

    half = 1.0 / (s * band_plan.subcarrier_spacing)
    step = 1.0 / (8 * (band_plan.aperture - (band_plan.subcarriers_per_band - s)
                       * band_plan.subcarrier_spacing))
    grid = tau0 + np.arange(-half, half + step / 2, step)
    vals = np.array([score(t) for t in grid])
    return float(np.mod(refine_peak(score, grid, vals), period))


def cpd_sa_extract(factors: CpdFactors, array, band_plan: BandPlan, wavelength,
                   aug: AugmentationConfig):
    """Per-path parameters from SA factors.

    Delay from the shift ratio of the augmented delay factor. Elevation, then
    azimuth, by correlating the spatial factors against the augmented steering
    vectors at the estimated delay.
    """
    from ..waveform import delay_steering

    s = band_plan.subcarriers_per_band
    v = s - aug.n_x_aug - aug.n_z_aug
    n = factors.order
    delays, az, el = np.empty(n), np.empty(n), np.empty(n)
    kz = 2 * np.pi / wavelength * array.d_z * np.arange(array.n_z)
    kx = 2 * np.pi / wavelength * array.d_x * np.arange(array.n_x)
    for l in range(n):
        tau = refine_factor_delay(factors.d[:, l], band_plan, v,
                                  _delay_from_factor(factors.d[:, l], band_plan, v))
        delays[l] = tau
        ds = delay_steering(tau, band_plan)[:s]
        # correlating with a kron ds equals correlating a with the ds-despread factor
        gz = factors.a_z[:, l].reshape(array.n_z, -1) @ ds[:aug.n_z_aug + 1].conj()
        gx = factors.a_x[:, l].reshape(array.n_x, -1) @ ds[:aug.n_x_aug + 1].conj()

        def score_el(e, gz=gz):
            return np.abs(np.exp(-1j * np.outer(np.sin(e), kz)) @ gz)

        el[l] = _argmax_1d(score_el, -np.pi / 2, np.pi / 2)
        ce = np.cos(el[l])

        def score_az(a, gx=gx, ce=ce):
            return np.abs(np.exp(-1j * np.outer(ce * np.sin(a), kx)) @ gx)

        az[l] = _argmax_1d(score_az, -np.pi / 2, np.pi / 2)
    return delays, az, el


def _check_ura(obs: Observation):
    if Layout(obs.layout) is not Layout.TENSOR3D or obs.array.kind is not ArrayKind.URA:
        raise PreconditionError("tensor estimators need a Tensor3D observation from a URA")
    if obs.array.n_x < 2:
        raise PreconditionError("azimuth is unobservable with a single column of elements")


def cpd_estimate(obs: Observation, order: int | None = None, seed=0,
                 prior: HeightPrior | None = None) -> EstimationResult:
    """Plain CPD pipeline: MDL order, random-start ALS, shift-ratio extraction."""
    _check_ura(obs)
    x = obs.as_tensor()
    if order is None:
        order = estimate_order(obs.as_matrix(), obs.band_plan.subcarriers_per_band,
                               obs.band_plan.n_bands)
    f = cpd(x, order, seed=seed)
    delays, az, el = cpd_extract(f, obs.array, obs.band_plan, obs.wavelength)
    powers = f.powers()
    idx, flags = select_los(delays, az, el, prior, powers, LOS_MIN_RELATIVE_POWER)
    if not kruskal_feasible_3d(order, obs.array.n_x, obs.array.n_z,
                               obs.band_plan.subcarriers_per_band, obs.band_plan.n_bands, 0, 0):
        flags.append("kruskal_violated")
    return EstimationResult("CPD", delays, idx, order, azimuths=az, elevations=el,
                            los_azimuth=float(az[idx]), los_elevation=float(el[idx]),
                            powers=powers, flags=flags)


def cpd_sa(obs: Observation, aug: AugmentationConfig | None = None, order: int | None = None,
           seed=0, prior: HeightPrior | None = None, n_restarts: int = 0,
           max_iter: int = SA_MAX_ITER, tol: float = SA_FIT_TOL) -> EstimationResult:
    """CPD with spatial augmentation.

    Without ``order`` the model order comes from MDL; without ``aug`` the
    smallest Kruskal-feasible augmentation for that order is used. ALS starts
    from the shift-invariance solution of the augmented tensor; ``n_restarts``
    extra random starts may be added.
    """
    _check_ura(obs)
    a = obs.array
    s, b = obs.band_plan.subcarriers_per_band, obs.band_plan.n_bands
    if order is None:
        order = estimate_order(obs.as_matrix(), s, b)
    if aug is None:
        aug = default_augmentation_3d(order, a.n_x, a.n_z, s, b)
    elif not kruskal_feasible_3d(order, a.n_x, a.n_z, s, b, aug.n_x_aug, aug.n_z_aug):
        raise PreconditionError(
            f"augmentation (n_x={aug.n_x_aug}, n_z={aug.n_z_aug}) violates Kruskal's "
            f"condition for {order} paths")
    x = spatial_augment_3d(obs, aug)
    v = s - aug.n_x_aug - aug.n_z_aug
    # same rows and column space as the mode-3 unfolding, without duplicated columns
    h = multichannel_hankel(obs.as_matrix(), s, b, aug.n_x_aug + aug.n_z_aug + 1)
    u, sv, _ = np.linalg.svd(h, full_matrices=False)
    check_subspace_rank(sv, order, "Reduce the model order.")
    init = None
    if order <= (v - 1) * b:
        init = shift_init(x, order, b, v, basis=u)
    f = cpd(x, order, seed=seed, n_restarts=n_restarts if init is not None else max(n_restarts, 1),
            init=init, max_iter=max_iter, tol=tol)
    delays, az, el = cpd_sa_extract(f, a, obs.band_plan, obs.wavelength, aug)
    powers = f.powers()
    idx, flags = select_los(delays, az, el, prior, powers, LOS_MIN_RELATIVE_POWER)
    return EstimationResult("CPD-SA", delays, idx, order, azimuths=az, elevations=el,
                            los_azimuth=float(az[idx]), los_elevation=float(el[idx]),
                            powers=powers, flags=flags)


def congruence(est, truth) -> np.ndarray:
    """Per-true-component congruence after optimal assignment.

    ``est`` and ``truth`` are sequences of factor matrices (same modes, columns
    are components). Congruence of a pair is the product over modes of the
    absolute normalized inner products. Unmatched true components score 0.
    """
    n_true = truth[0].shape[1]
    score = np.ones((est[0].shape[1], n_true))
    for fe, ft in zip(est, truth):
        fe = fe / np.linalg.norm(fe, axis=0)
        ft = ft / np.linalg.norm(ft, axis=0)
        score *= np.abs(fe.conj().T @ ft)
    rows, cols = linear_sum_assignment(-score)
    out = np.zeros(n_true)
    out[cols] = score[rows, cols]
    return out
