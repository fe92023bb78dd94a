"""RTT protocol, measurement assembly and known-height position estimation.

The measurement is ``z0 = [tau_rtt, t_x, t_z]`` (URA), ``[tau_rtt, t_x]``
(ULA) or ``[tau_rtt]`` (single antenna), with ``tau_rtt = 2 |x - x_RSU| / c``
and ``t`` the direction cosines of the CRU in the RSU's local frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import SPEED_OF_LIGHT, ArrayKind, Pose, direction_vector


class PositioningError(ValueError):
    """Infeasible measurement geometry."""


def _direction_dims(kind: ArrayKind) -> list[int]:
    return {ArrayKind.URA: [0, 2], ArrayKind.ULA: [0], ArrayKind.SINGLE: []}[ArrayKind(kind)]


def measurement_model(position, rsu: Pose, kind: ArrayKind) -> tuple[np.ndarray, np.ndarray]:
    """``(zeta, d zeta / d position)`` with the Jacobian taken w.r.t. all three coordinates."""
    delta = np.asarray(position, dtype=float).reshape(3) - rsu.position
    r = float(np.linalg.norm(delta))
    if r == 0:
        raise PositioningError("CRU position coincides with the RSU")
    u = delta / r
    rot = rsu.global_to_local()
    t = rot @ u
    dt = rot @ (np.eye(3) - np.outer(u, u)) / r
    dims = _direction_dims(kind)
    zeta = np.concatenate([[2 * r / SPEED_OF_LIGHT], t[dims]])
    jac = np.vstack([2 * u / SPEED_OF_LIGHT, dt[dims]])
    return zeta, jac


def rtt_exchange(request_tau_hat: float, response_tau_hat: float, clock_bias: float,
                 t_req: float = 0.0) -> tuple[float, float]:
    """Two-way ToA with clock bias, returning ``(rtt_toa, t_res)``.

    The CRU stamps the request arrival on its own clock, ``t_req + beta +
    request_tau_hat``, and replies at ``t_res = tau_hat_CRU - beta`` in RSU
    time. The RSU measures ``tau_hat_RSU = t_res + response_tau_hat`` and
    reports ``rtt_toa = tau_hat_RSU - t_req``. The arithmetic is exact
    (rational), so the bias cancels bit for bit.
    """
    t_req_q = Fraction(t_req)
    beta = Fraction(clock_bias)
    tau_cru = t_req_q + beta + Fraction(request_tau_hat)
    t_res = tau_cru - beta
    tau_rsu = t_res + Fraction(response_tau_hat)
    return float(tau_rsu - t_req_q), float(t_res)


@dataclass(frozen=True)
class ProtocolState:
    t_req: float = 0.0
    clock_bias: float = 0.0


@dataclass(frozen=True)
class RttMeasurement:
    """Fused RTT observation at the RSU.

    ``aoa`` is the local (azimuth, elevation); for a ULA the elevation is
    reconstructed from the known CRU height. ``observation`` is ``z0`` in
    direction-cosine form and ``covariance`` its covariance ``R0``.
    """

    rtt_toa: float
    aoa: tuple
    observation: np.ndarray
    covariance: np.ndarray
    kind: ArrayKind
    t_req: float = 0.0
    t_res: float = 0.0

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.observation, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "observation", z)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "kind", ArrayKind(self.kind))
        if not self.rtt_toa > 0:
            raise ValueError("RTT delay must be > 0")
        if cov.shape != (z.size, z.size):
            raise ValueError(f"covariance must be {z.size}x{z.size}")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=0):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None


def ula_backsolve(omega: float, range_m: float, rsu: Pose, cru_height: float,
                  hint_xy=None) -> np.ndarray:
    """Global unit direction RSU -> CRU from a ULA spatial frequency and known height.

    Solves ``R[:, 0] . g = omega`` with ``g_z = dh / r``. Of the two mirror
    solutions, the one with ``t_y > 0`` is kept; remaining ties go to the one
    closer to ``hint_xy`` (or the first root without a hint).
    """
    dh = cru_height - rsu.position[2]
    if range_m < abs(dh) * (1 - 1e-12):
        raise PositioningError("range shorter than the height difference")
    sz = float(np.clip(dh / range_m, -1.0, 1.0))
    hz = np.sqrt(max(1.0 - sz**2, 0.0))
    a, b, c = rsu.body_to_global()[:, 0]
    amp = hz * np.hypot(a, b)
    if amp < 1e-12:
        raise PositioningError("array axis is vertical or CRU is straight below: bearing undefined")
    delta = np.arctan2(b, a)
    ca = float(np.clip((omega - c * sz) / amp, -1.0, 1.0))
    roots = [delta + np.arccos(ca), delta - np.arccos(ca)]
    cands = [np.array([hz * np.cos(p), hz * np.sin(p), sz]) for p in roots]
    ty = [float((rsu.global_to_local() @ g)[1]) for g in cands]
    order = sorted(range(2), key=lambda k: -ty[k])
    if abs(ty[0] - ty[1]) > 1e-9:
        return cands[order[0]]
    if hint_xy is not None:
        target = np.asarray(hint_xy, dtype=float) - rsu.position[:2]
        return min(cands, key=lambda g: np.linalg.norm(g[:2] * range_m - target))
    return cands[0]


def assemble_measurement(rsu_estimate, cru_estimate, protocol: ProtocolState, covariance,
                         kind: ArrayKind, rsu: Pose | None = None,
                         cru_height: float | None = None, hint_xy=None) -> RttMeasurement:
    """Combine both link estimates into ``z0``.

    The ToA of the request (CRU side) and of the response (RSU side) go
    through :func:`rtt_exchange`; the AoA comes from the RSU estimate. For a
    ULA, ``rsu`` and ``cru_height`` are needed to reconstruct the elevation.
    """
    kind = ArrayKind(kind)
    for name, est in (("RSU", rsu_estimate), ("CRU", cru_estimate)):
        if est is None or est.los_index is None:
            raise ValueError(f"no LoS estimate on the {name} link")
    rtt, t_res = rtt_exchange(cru_estimate.los_delay, rsu_estimate.los_delay,
                              protocol.clock_bias, protocol.t_req)
    if kind is ArrayKind.URA:
        az, el = rsu_estimate.los_azimuth, rsu_estimate.los_elevation
        t = direction_vector(az, el)
        z = np.array([rtt, t[0], t[2]])
        aoa = (float(az), float(el))
    elif kind is ArrayKind.ULA:
        w = float(rsu_estimate.los_spatial_frequency)
        z = np.array([rtt, w])
        aoa = (float(np.arcsin(np.clip(w, -1, 1))), 0.0)
        if rsu is not None and cru_height is not None:
            g = ula_backsolve(w, SPEED_OF_LIGHT * rtt / 2, rsu, cru_height, hint_xy)
            t = rsu.global_to_local() @ g
            aoa = (float(np.arctan2(t[0], t[1])), float(np.arcsin(np.clip(t[2], -1, 1))))
    else:
        z = np.array([rtt])
        aoa = ()
    return RttMeasurement(rtt, aoa, z, covariance, kind, protocol.t_req, t_res)


def ls_initialize(meas: RttMeasurement, rsu: Pose, cru_height: float, hint_xy=None) -> np.ndarray:
    """Closed-form range-bearing fix ``(x, y)``."""
    r = SPEED_OF_LIGHT * meas.rtt_toa / 2
    dh = cru_height - rsu.position[2]
    if r < abs(dh) * (1 - 1e-12):
        raise PositioningError(
            f"RTT range {r:.3f} m is shorter than the height difference {abs(dh):.3f} m")
    rho = np.sqrt(max(r**2 - dh**2, 0.0))
    if meas.kind is ArrayKind.URA:
        tx, tz = meas.observation[1], meas.observation[2]
        ty = np.sqrt(max(1.0 - tx**2 - tz**2, 0.0))
        g = rsu.body_to_global() @ np.array([tx, ty, tz])
    elif meas.kind is ArrayKind.ULA:
        g = ula_backsolve(meas.observation[1], r, rsu, cru_height, hint_xy)
    else:
        raise PositioningError("a single-antenna RSU provides no bearing")
    hn = np.hypot(g[0], g[1])
    if hn < 1e-12:
        return rsu.position[:2].copy()
    return rsu.position[:2] + rho * g[:2] / hn


@dataclass
class PositionEstimate:
    xy: np.ndarray
    converged: bool
    cost: float
    iterations: int
    grad_norm: float
    flags: list = field(default_factory=list)


def _cost(z, w, xy, rsu, h, kind):
    zeta, jac = measurement_model([xy[0], xy[1], h], rsu, kind)
    r = z - zeta
    return float(r @ w @ r), r, jac[:, :2]


def ml_position(meas: RttMeasurement, rsu: Pose, cru_height: float, init,
                max_iter: int = 100, step_tol: float = 1e-9) -> PositionEstimate:
    """Gauss-Newton with backtracking on ``(z0 - h(x))^T R0^-1 (z0 - h(x))``."""
    if meas.kind is ArrayKind.SINGLE:
        raise PositioningError("a single-antenna RSU cannot fix a 2-D position")
    w = np.linalg.inv(meas.covariance)
    w = 0.5 * (w + w.T)
    z = meas.observation
    xy = np.asarray(init, dtype=float).reshape(2).copy()
    cost, r, jac = _cost(z, w, xy, rsu, cru_height, meas.kind)
    converged = False
    flags = []
    it = 0
    for it in range(1, max_iter + 1):
        a = jac.T @ w @ jac
        g = jac.T @ w @ r
        try:
            step = np.linalg.solve(a, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(a, g, rcond=None)[0]
        alpha = 1.0
        accepted = False
        while alpha * np.linalg.norm(step) >= step_tol * 1e-3:
            cand = xy + alpha * step
            try:
                c_new, r_new, j_new = _cost(z, w, cand, rsu, cru_height, meas.kind)
            except ValueError:
                c_new = np.inf
            if c_new <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = np.linalg.norm(step) < 1e-6
            if not converged:
                flags.append("line_search_failed")
            break
        moved = alpha * np.linalg.norm(step)
        xy, cost, r, jac = cand, c_new, r_new, j_new
        if moved < step_tol:
            converged = True
            break
    grad = -2 * jac.T @ w @ r
    return PositionEstimate(xy, converged, cost, it, float(np.linalg.norm(grad)), flags)
