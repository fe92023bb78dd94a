"""Shared estimator types, linear-algebra helpers and LoS extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hankel as _scipy_hankel

from ..geometry import SPEED_OF_LIGHT, Pose, direction_vector


class EstimationError(RuntimeError):
    """Base class for estimator failures."""


class PreconditionError(EstimationError, ValueError):
    """Rank or Kruskal precondition of an estimator does not hold."""


class RankDeficiencyError(EstimationError):
    """Signal subspace is numerically rank deficient for the requested order."""


class AlsDivergenceError(EstimationError):
    """ALS fit kept increasing; ``best`` holds the best iterate seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class EstimationResult:
    """Per-path estimates plus the extracted LoS parameters.

    ``spatial_frequencies`` is set for linear arrays (``cos(el) sin(az)``).
    When ``paired`` is false, the spatial-frequency list is not aligned with
    ``delays``.
    """

    algorithm: str
    delays: np.ndarray
    los_index: int
    model_order: int
    azimuths: np.ndarray | None = None
    elevations: np.ndarray | None = None
    spatial_frequencies: np.ndarray | None = None
    los_azimuth: float | None = None
    los_elevation: float | None = None
    los_spatial_frequency: float | None = None
    paired: bool = True
    powers: np.ndarray | None = None
    confidence: float | None = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.delays = np.atleast_1d(np.asarray(self.delays, dtype=float))
        if self.model_order < 1:
            raise ValueError("model order must be >= 1")
        if not 0 <= self.los_index < self.delays.size:
            raise ValueError("LoS index out of range")
        if not np.all(np.isfinite(self.delays)):
            raise EstimationError("non-finite delay estimate")

    @property
    def los_delay(self) -> float:
        return float(self.delays[self.los_index])

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else [float(v) for v in np.atleast_1d(x)]

        return {
            "algorithm": self.algorithm,
            "model_order": int(self.model_order),
            "los_index": int(self.los_index),
            "los_delay_s": self.los_delay,
            "los_azimuth_rad": self.los_azimuth,
            "los_elevation_rad": self.los_elevation,
            "los_spatial_frequency": self.los_spatial_frequency,
            "delays_s": arr(self.delays),
            "azimuths_rad": arr(self.azimuths),
            "elevations_rad": arr(self.elevations),
            "spatial_frequencies": arr(self.spatial_frequencies),
            "paired": self.paired,
            "powers": arr(self.powers),
            "confidence": self.confidence,
            "flags": list(self.flags),
        }


def hankel(x, p: int) -> np.ndarray:
    """``p x (N+1-p)`` Hankel matrix with ``X[i, j] = x[i + j]``."""
    x = np.asarray(x)
    n = x.size
    if not 1 <= p <= n:
        raise ValueError(f"Hankel row count {p} outside [1, {n}]")
    return _scipy_hankel(x[:p], x[p - 1:])


def selection_indices(b: int, s: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices picked by the two multiband selection matrices."""
    if not 1 <= q < s:
        raise ValueError(f"shift {q} must satisfy 1 <= q < {s}")
    base = np.arange(s - q)
    offs = (np.arange(b) * s)[:, None]
    return (offs + base).ravel(), (offs + base + q).ravel()


def selection_matrices(b: int, s: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """``J1 = I_b kron [I_{s-q}, 0]`` and ``J2 = I_b kron [0, I_{s-q}]``."""
    i1, i2 = selection_indices(b, s, q)
    eye = np.eye(s * b)
    return eye[i1], eye[i2]


def mdl_order(singular_values, n_snapshots: int) -> int:
    """Wax-Kailath MDL estimate of the signal-subspace dimension.

    Works on eigenvalues ``sigma**2``. Values below ``1e-10 * sigma_1`` are
    lifted to that floor so exact-rank (noiseless) inputs give their true rank.
    The result is clamped to ``[1, len - 1]``.
    """
    sv = np.sort(np.asarray(singular_values, dtype=float))[::-1]
    m = sv.size
    if m < 2:
        raise ValueError("MDL needs at least two singular values")
    lam = sv**2
    lam = np.maximum(lam, lam[0] * 1e-20)
    if lam[0] == 0:
        return 1
    n = max(int(n_snapshots), 1)
    scores = np.empty(m)
    for k in range(m):
        tail = lam[k:]
        log_geo = np.mean(np.log(tail))
        log_arith = np.log(np.mean(tail))
        scores[k] = -n * (m - k) * (log_geo - log_arith) + 0.5 * k * (2 * m - k) * np.log(n)
    return int(np.clip(np.argmin(scores), 1, m - 1))


def multichannel_hankel(rows: np.ndarray, s: int, b: int, k: int) -> np.ndarray:
    """Per-band Hankel stacking of every row: entry ``rows[m, b*S + c + i]``.

    Rows are indexed ``(b, c)`` with ``c < S+1-k`` and columns ``(m, i)`` with
    ``i < k``. Its column space equals that of the mode-3 unfolding of any
    spatial augmentation with ``n_x_aug + n_z_aug = k - 1``, without the
    duplicated columns.
    """
    rows = np.atleast_2d(rows)
    if not 1 <= k <= s:
        raise ValueError(f"smoothing length {k} outside [1, {s}]")
    m = rows.shape[0]
    idx = np.arange(s + 1 - k)[:, None] + np.arange(k)[None, :]
    g = rows.reshape(m, b, s)[:, :, idx]  # (m, b, c, i)
    return np.transpose(g, (1, 2, 0, 3)).reshape(b * (s + 1 - k), m * k)


def estimate_order(rows: np.ndarray, s: int, b: int) -> int:
    """MDL model order on a balanced multichannel Hankel stacking."""
    rows = np.atleast_2d(rows)
    m = rows.shape[0]
    k = int(min(s, max(2, math.ceil((s + 1) * b / (m + b)))))
    h = multichannel_hankel(rows, s, b, k)
    sv = np.linalg.svd(h, compute_uv=False)
    if sv.size < 2:
        return 1
    return mdl_order(sv, max(h.shape))


def shift_eigenvalues(u_s: np.ndarray, b: int, s: int, q: int = 1,
                      reverse: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """LS shift-invariance eigenproblem on a basis ``u_s`` of ``b`` blocks of ``s``.

    Solves ``J1 U = J2 U Psi`` (``reverse=False``) or ``J2 U = J1 U Psi`` and
    returns the eigenvalues and eigenvectors of ``Psi``.
    """
    i1, i2 = selection_indices(b, s, q)
    lhs, rhs = (u_s[i1], u_s[i2]) if not reverse else (u_s[i2], u_s[i1])
    psi = np.linalg.lstsq(rhs, lhs, rcond=None)[0]
    return np.linalg.eig(psi)


def phase_to_delay(phase, spacing: float, shift: int = 1) -> np.ndarray:
    """Delay from a shift-invariance phase, wrapped into ``[0, 1/spacing)``."""
    return np.mod(np.asarray(phase), 2 * np.pi) / (2 * np.pi * spacing * shift)


def check_subspace_rank(sv: np.ndarray, order: int, hint: str = ""):
    if order > sv.size:
        raise PreconditionError(f"model order {order} exceeds available rank {sv.size}. {hint}")
    if sv[0] == 0 or sv[order - 1] < 1e-10 * sv[0]:
        raise RankDeficiencyError(
            f"signal subspace rank below requested order {order} "
            f"(sigma_L / sigma_1 = {sv[order - 1] / max(sv[0], 1e-300):.2e}). {hint}")


@dataclass(frozen=True)
class AugmentationConfig:
    """Spatial augmentation factors and 1-D frequency-smoothing parameter."""

    n_x_aug: int = 0
    n_z_aug: int = 0
    stacking_p: int | None = None

    def __post_init__(self):
        if self.n_x_aug < 0 or self.n_z_aug < 0:
            raise ValueError("augmentation factors must be >= 0")


AUG_CAP_X = 21
AUG_CAP_Z = 10


def kruskal_feasible_3d(order, n_x, n_z, s, b, n_x_aug, n_z_aug) -> bool:
    v = s - n_x_aug - n_z_aug
    if v < 2:
        return False
    if order == 1:
        return v * b >= 1  # a rank-one decomposition is always unique
    k = min(n_x * (n_x_aug + 1), order) + min(n_z * (n_z_aug + 1), order)
    return k >= order + 2 and v * b >= order


def rank_feasible_2d(order, n_x, s, b, n_x_aug) -> bool:
    """Rank conditions for the augmented matrix, including the spatial shift rows."""
    v = s - n_x_aug
    return (v >= 2 and order <= n_x * (n_x_aug + 1) and order <= v * b
            and order <= (v - 1) * b and order <= (n_x - 1) * (n_x_aug + 1))


def rank_feasible_1d(order, s, b, p) -> bool:
    q = s + 1 - p
    return 2 <= p <= s and order <= q and order <= p * b and order <= (p - 1) * b


def minimal_augmentation_3d(order, n_x, n_z, s, b) -> AugmentationConfig:
    """Smallest feasible factors; ties broken by total, then by ``n_x``."""
    for total in range(s):
        for nx in range(total + 1):
            nz = total - nx
            if kruskal_feasible_3d(order, n_x, n_z, s, b, nx, nz) and \
                    order <= (s - nx - nz - 1) * b:
                return AugmentationConfig(nx, nz)
    raise PreconditionError(f"no feasible augmentation for {order} paths")


def minimal_augmentation_2d(order, n_x, s, b) -> AugmentationConfig:
    if n_x < 2:
        raise PreconditionError("2-D augmentation needs at least two horizontal elements")
    for nx in range(s):
        if rank_feasible_2d(order, n_x, s, b, nx):
            return AugmentationConfig(nx, 0)
    raise PreconditionError(f"no feasible augmentation for {order} paths")


def default_augmentation_3d(order, n_x, n_z, s, b) -> AugmentationConfig:
    """Minimal feasible factors raised to a frequency-smoothing target.

    Virtual elements differ only by the per-subcarrier phase ``2 pi df tau``,
    which is small for short delays, so the minimal factors leave the
    augmented subspace badly conditioned under noise. The target spends about
    ``S/8`` horizontal and ``S/16`` vertical shifts, capped so that wide bands
    do not blow up the tensor size.
    """
    m = minimal_augmentation_3d(order, n_x, n_z, s, b)
    cand = AugmentationConfig(max(m.n_x_aug, min(round(s / 8), AUG_CAP_X)),
                              max(m.n_z_aug, min(round(s / 16), AUG_CAP_Z)))
    if kruskal_feasible_3d(order, n_x, n_z, s, b, cand.n_x_aug, cand.n_z_aug) and \
            order <= (s - cand.n_x_aug - cand.n_z_aug - 1) * b:
        return cand
    return m


def default_augmentation_2d(order, n_x, s, b) -> AugmentationConfig:
    """Minimal feasible factor raised to about ``S/4`` shifts (see the 3-D variant)."""
    m = minimal_augmentation_2d(order, n_x, s, b)
    cand = AugmentationConfig(max(m.n_x_aug, min(round(s / 4), 2 * AUG_CAP_X)), 0)
    return cand if rank_feasible_2d(order, n_x, s, b, cand.n_x_aug) else m


def default_stacking(order, s, b) -> int:
    p = min(math.ceil((s + 1) / 2), s + 1 - order)
    if not rank_feasible_1d(order, s, b, p):
        raise PreconditionError(f"no feasible stacking parameter for {order} paths")
    return p


@dataclass(frozen=True)
class HeightPrior:
    """Known responder height used to rule out implausible LoS candidates.

    Applies to estimates made at the RSU: a path whose delay and local arrival
    direction imply a responder height further than ``tolerance`` from
    ``cru_height`` is rejected before the minimum-delay rule.
    """

    rsu: Pose
    cru_height: float
    tolerance: float = 2.0


def implied_heights(delays, azimuths, elevations, prior: HeightPrior) -> np.ndarray:
    t_local = direction_vector(np.asarray(azimuths), np.asarray(elevations))
    g = t_local @ prior.rsu.global_to_local()  # rows: R^T t
    return prior.rsu.position[2] + SPEED_OF_LIGHT * np.asarray(delays) * g[..., 2]


def select_los(delays, azimuths=None, elevations=None, prior: HeightPrior | None = None,
               powers=None, min_relative_power: float = 0.0):
    """Index of the minimum-delay path among the plausible ones.

    Candidates weaker than ``min_relative_power`` times the strongest path are
    ignored (spurious subspace components), then the height check applies.
    Returns ``(index, flags)``; the flag ``los_filter_fallback`` marks that no
    path passed the height check and the unfiltered minimum was used.
    """
    delays = np.asarray(delays, dtype=float)
    flags = []
    cand = np.ones(delays.size, dtype=bool)
    if powers is not None and min_relative_power > 0:
        pw = np.asarray(powers, dtype=float)
        cand = pw >= min_relative_power * pw.max()
    if prior is not None and elevations is not None and azimuths is not None:
        h = implied_heights(delays, azimuths, elevations, prior)
        ok = cand & (np.abs(h - prior.cru_height) <= prior.tolerance)
        if np.any(ok):
            idx = np.flatnonzero(ok)
            return int(idx[np.argmin(delays[idx])]), flags
        flags.append("los_filter_fallback")
    idx = np.flatnonzero(cand)
    return int(idx[np.argmin(delays[idx])]), flags
