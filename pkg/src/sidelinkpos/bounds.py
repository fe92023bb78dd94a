"""Fisher information, path merging and position error bounds.

Three position error bounds (PEBs) are computed from the same geometry:

* ``LoS``: only the LoS path exists (no multipath at all).
* ``NLoS``: all paths inside the LoS resolution cell are modelled, their
  parameters treated as nuisance and marginalised out.
* ``WAA``: the in-cell paths are merged into one weighted-average path; the
  estimator is assumed to be unbiased for the merged path, so its bias
  w.r.t. the true LoS enters as ``b b^T``.

The channel parameter vector per path is ``[t_x, t_z, tau, Re a, Im a]`` with
``t`` the local direction cosines. ``t_y`` is never observable, ``t_z`` needs
vertical extent and ``t_x`` horizontal extent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ArrayConfig, ArrayKind, BandPlan, PathParam, Pose, SignalConfig, direction_vector
from .positioning import measurement_model

PARAM_NAMES = ("t_x", "t_z", "tau", "re", "im")


class SingularFimError(np.linalg.LinAlgError):
    """Fisher information is not invertible."""


@dataclass(frozen=True)
class ResolutionCell:
    """Half-widths of the resolution cell around a path.

    ``tx_halfwidth``/``tz_halfwidth`` are ``None`` along an axis without
    aperture, in which case that condition is dropped.
    """

    delay_halfwidth: float
    tx_halfwidth: float | None = None
    tz_halfwidth: float | None = None

    def __post_init__(self):
        for name in ("delay_halfwidth", "tx_halfwidth", "tz_halfwidth"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0")

    def contains(self, center: PathParam, other: PathParam) -> bool:
        if not abs(other.delay - center.delay) < self.delay_halfwidth:
            return False
        t0, t1 = center.direction, other.direction
        if self.tx_halfwidth is not None and not abs(t1[0] - t0[0]) < self.tx_halfwidth:
            return False
        if self.tz_halfwidth is not None and not abs(t1[2] - t0[2]) < self.tz_halfwidth:
            return False
        return True


def resolution_cell(band_plan: BandPlan, array: ArrayConfig,
                    wavelength: float | None = None) -> ResolutionCell:
    """Delay half-width ``1/(S df)``; direction-cosine widths ``lambda / aperture``."""
    lam = band_plan.wavelength if wavelength is None else wavelength
    pos = array.element_positions()
    ext = pos.max(axis=0) - pos.min(axis=0)
    tx = lam / ext[0] if ext[0] > 0 else None
    tz = lam / ext[2] if ext[2] > 0 else None
    return ResolutionCell(1.0 / (band_plan.subcarriers_per_band * band_plan.subcarrier_spacing),
                          tx, tz)


def los_index(paths) -> int:
    for i, p in enumerate(paths):
        if p.is_los:
            return i
    raise ValueError("no LoS path in the path set")


def paths_in_los_cell(paths, cell: ResolutionCell) -> list[int]:
    """Indices of the paths inside the LoS resolution cell (LoS included)."""
    paths = list(paths)
    i0 = los_index(paths)
    return [i for i, p in enumerate(paths) if i == i0 or cell.contains(paths[i0], p)]


@dataclass(frozen=True)
class MergedPath:
    gain: complex
    delay: float
    azimuth: float
    elevation: float
    weights: np.ndarray
    member_indices: tuple

    def as_path(self) -> PathParam:
        return PathParam(self.gain, self.delay, self.azimuth, self.elevation, is_los=True)


def merge_paths(paths, members) -> MergedPath:
    """Weighted-average path with weights ``|a_l| / sum |a_l|``."""
    members = tuple(int(i) for i in members)
    if not members:
        raise ValueError("member set is empty")
    sel = [paths[i] for i in members]
    mag = np.array([abs(p.gain) for p in sel])
    if mag.sum() == 0:
        raise ValueError("all member gains are zero; merge weights undefined")
    w = mag / mag.sum()
    tau = float(w @ [p.delay for p in sel])
    az = float(w @ [p.azimuth for p in sel])
    el = float(np.clip(w @ [p.elevation for p in sel], -np.pi / 2, np.pi / 2))
    return MergedPath(complex(sum(p.gain for p in sel)), tau, az, el, w, members)


def observable_params(array: ArrayConfig) -> list[str]:
    kind = array.kind
    dirs = {ArrayKind.URA: ["t_x", "t_z"], ArrayKind.ULA: ["t_x"], ArrayKind.SINGLE: []}[kind]
    return dirs + ["tau", "re", "im"]


def mean_signal(paths, array: ArrayConfig, band_plan: BandPlan, energy: float,
                wavelength: float, t_override=None) -> np.ndarray:
    """Noiseless observation vector (element-major) as a function of direction cosines.

    ``t_override`` optionally supplies ``(t_x, t_z)`` per path instead of the
    values implied by azimuth/elevation; used for finite-difference checks.
    """
    pos = array.element_positions()
    k = 2 * np.pi / wavelength
    f = band_plan.frequency_offsets()
    out = np.zeros(array.n_elements * f.size, dtype=complex)
    for i, p in enumerate(paths):
        t = p.direction if t_override is None else (t_override[i][0], 0.0, t_override[i][1])
        a = np.exp(1j * k * (pos[:, 0] * t[0] + pos[:, 2] * t[2]))
        d = np.exp(-2j * np.pi * f * p.delay)
        out += np.sqrt(energy) * p.gain * np.kron(a, d)
    return out


def _derivatives(path: PathParam, array: ArrayConfig, band_plan: BandPlan, energy: float,
                 wavelength: float) -> np.ndarray:
    """Columns ``d mu / d theta`` for the observable parameters of one path."""
    pos = array.element_positions()
    k = 2 * np.pi / wavelength
    f = band_plan.frequency_offsets()
    t = path.direction
    a = np.exp(1j * k * (pos[:, 0] * t[0] + pos[:, 2] * t[2]))
    d = np.exp(-2j * np.pi * f * path.delay)
    base = np.sqrt(energy) * np.kron(a, d)
    mu = path.gain * base
    cols = {
        "t_x": mu * np.repeat(1j * k * pos[:, 0], f.size),
        "t_z": mu * np.repeat(1j * k * pos[:, 2], f.size),
        "tau": mu * np.tile(-2j * np.pi * f, array.n_elements),
        "re": base,
        "im": 1j * base,
    }
    return np.column_stack([cols[n] for n in observable_params(array)])


def fisher_information(paths, array: ArrayConfig, band_plan: BandPlan, signal: SignalConfig,
                       wavelength: float | None = None) -> np.ndarray:
    """Complex-Gaussian FIM ``(2/N0) Re(D^H D)`` stacked over all paths' observable parameters."""
    lam = band_plan.wavelength if wavelength is None else wavelength
    es = signal.symbol_energy(band_plan)
    d = np.hstack([_derivatives(p, array, band_plan, es, lam) for p in paths])
    j = 2.0 / signal.noise_level * np.real(d.conj().T @ d)
    return 0.5 * (j + j.T)


def fim_merged(merged: MergedPath, array: ArrayConfig, band_plan: BandPlan,
               signal: SignalConfig, wavelength: float | None = None) -> np.ndarray:
    """FIM of the single merged-path model, ordered as :func:`observable_params`."""
    if merged.gain == 0:
        raise SingularFimError("merged gain is zero; the FIM is singular")
    return fisher_information([merged.as_path()], array, band_plan, signal, wavelength)


def _safe_inv(j: np.ndarray) -> np.ndarray:
    j = np.atleast_2d(j)
    try:
        inv = np.linalg.inv(j)
    except np.linalg.LinAlgError:
        raise SingularFimError("singular Fisher information") from None
    if not np.all(np.isfinite(inv)):
        raise SingularFimError("singular Fisher information")
    return 0.5 * (inv + inv.T)


def biased_crb(fim, bias) -> np.ndarray:
    """Lower bound ``J^-1 + b b^T`` on the error covariance of a biased estimator."""
    b = np.atleast_1d(np.asarray(bias, dtype=float))
    inv = _safe_inv(fim)
    if b.size != inv.shape[0]:
        raise ValueError("bias length does not match the FIM")
    return inv + np.outer(b, b)


def waa_covariance(sigma_toa_request: float, response_bound) -> np.ndarray:
    """Add the request-link ToA variance to the delay entry of the response bound."""
    sigma = np.atleast_2d(np.asarray(response_bound, dtype=float)).copy()
    if sigma.shape[0] != sigma.shape[1] or sigma.shape[0] not in (1, 2, 3):
        raise ValueError(f"response bound must be square of size 1..3, got {sigma.shape}")
    sigma[0, 0] += sigma_toa_request
    return sigma


def _param_vector(path: PathParam, array: ArrayConfig) -> np.ndarray:
    t = path.direction
    vals = {"t_x": t[0], "t_z": t[2], "tau": path.delay, "re": path.gain.real, "im": path.gain.imag}
    return np.array([vals[n] for n in observable_params(array)])


def _channel_block(cov: np.ndarray, array: ArrayConfig) -> np.ndarray:
    """Reorder a per-path covariance to ``[tau, t_x, (t_z)]``."""
    names = observable_params(array)
    idx = [names.index("tau")] + [names.index(n) for n in names if n.startswith("t_")]
    return cov[np.ix_(idx, idx)]


def marginal_crb(paths, index: int, array: ArrayConfig, band_plan: BandPlan,
                 signal: SignalConfig, wavelength: float | None = None) -> np.ndarray:
    """CRB of one path's parameters with all other paths as nuisance (Schur complement)."""
    j = fisher_information(paths, array, band_plan, signal, wavelength)
    n = len(observable_params(array))
    keep = np.arange(index * n, (index + 1) * n)
    rest = np.setdiff1d(np.arange(j.shape[0]), keep)
    efim = j[np.ix_(keep, keep)]
    if rest.size:
        jbb = j[np.ix_(rest, rest)]
        jab = j[np.ix_(keep, rest)]
        try:
            efim = efim - jab @ np.linalg.solve(jbb, jab.T)
        except np.linalg.LinAlgError:
            raise SingularFimError("nuisance block of the FIM is singular") from None
    return _safe_inv(efim)


def position_bound(channel_cov, rsu: Pose, cru_position, kind: ArrayKind) -> float:
    """PEB in metres for a known CRU height.

    ``channel_cov`` is the covariance of ``[tau_rtt, t_x, (t_z)]`` in the
    RSU's local frame; the CRU height is fixed, so only ``(x, y)`` is mapped.
    """
    kind = ArrayKind(kind)
    if kind is ArrayKind.SINGLE:
        return float("inf")
    _, jac = measurement_model(cru_position, rsu, kind)
    h = jac[:, :2]
    cov = np.atleast_2d(np.asarray(channel_cov, dtype=float))
    if cov.shape != (h.shape[0], h.shape[0]):
        raise ValueError(f"channel covariance must be {h.shape[0]}x{h.shape[0]}")
    try:
        info = h.T @ np.linalg.solve(cov, h)
        return float(np.sqrt(np.trace(np.linalg.inv(info))))
    except np.linalg.LinAlgError:
        return float("inf")


@dataclass
class BoundReport:
    fim: np.ndarray
    bias: np.ndarray
    channel_crb: np.ndarray
    sigma_toa: float
    waa_cov: np.ndarray
    peb_los: float
    peb_nlos: float
    peb_waa: float
    members_rsu: tuple = ()
    members_cru: tuple = ()


def _request_variances(paths_cru, array_cru, band_plan, signal, wavelength):
    """(LoS-only, NLoS, WAA) ToA variance of the request link."""
    cell = resolution_cell(band_plan, array_cru, wavelength)
    members = paths_in_los_cell(paths_cru, cell)
    i0 = los_index(paths_cru)
    los = paths_cru[i0]
    k_tau = observable_params(array_cru).index("tau")
    v_los = marginal_crb([los], 0, array_cru, band_plan, signal, wavelength)[k_tau, k_tau]
    in_cell = [paths_cru[i] for i in members]
    try:
        v_nlos = marginal_crb(in_cell, members.index(i0), array_cru, band_plan, signal,
                              wavelength)[k_tau, k_tau]
    except SingularFimError:
        v_nlos = np.inf
    merged = merge_paths(paths_cru, members)
    try:
        j = fim_merged(merged, array_cru, band_plan, signal, wavelength)
        bias = _param_vector(merged.as_path(), array_cru) - _param_vector(los, array_cru)
        v_waa = biased_crb(j, bias)[k_tau, k_tau]
    except SingularFimError:
        v_waa = np.inf
    return float(v_los), float(v_nlos), float(v_waa), tuple(members)


def bound_report(paths_rsu, paths_cru, rsu: Pose, cru_position, array_rsu: ArrayConfig,
                 band_plan: BandPlan, signal: SignalConfig,
                 array_cru: ArrayConfig | None = None,
                 wavelength: float | None = None) -> BoundReport:
    """All three PEBs for one CRU position.

    ``paths_rsu`` are the response-link paths seen at the RSU and
    ``paths_cru`` the request-link paths seen at the CRU.
    """
    paths_rsu, paths_cru = list(paths_rsu), list(paths_cru)
    array_cru = ArrayConfig() if array_cru is None else array_cru
    kind = array_rsu.kind
    cell = resolution_cell(band_plan, array_rsu, wavelength)
    members = paths_in_los_cell(paths_rsu, cell)
    i0 = los_index(paths_rsu)
    los = paths_rsu[i0]
    req_los, req_nlos, req_waa, members_cru = _request_variances(
        paths_cru, array_cru, band_plan, signal, wavelength)

    def peb(cov_block, req_var):
        if not np.all(np.isfinite(cov_block)) or not np.isfinite(req_var):
            return float("inf")
        return position_bound(waa_covariance(req_var, cov_block), rsu, cru_position, kind)

    crb_los = _channel_block(marginal_crb([los], 0, array_rsu, band_plan, signal, wavelength),
                             array_rsu)
    try:
        crb_nlos = _channel_block(
            marginal_crb([paths_rsu[i] for i in members], members.index(i0), array_rsu,
                         band_plan, signal, wavelength), array_rsu)
    except SingularFimError:
        crb_nlos = np.full_like(crb_los, np.inf)

    merged = merge_paths(paths_rsu, members)
    bias = _param_vector(merged.as_path(), array_rsu) - _param_vector(los, array_rsu)
    try:
        fim = fim_merged(merged, array_rsu, band_plan, signal, wavelength)
        full = biased_crb(fim, bias)
        sigma = _channel_block(full, array_rsu)
        waa = waa_covariance(req_waa, sigma)
        channel_diag = np.diag(full).copy()
    except SingularFimError:
        n = len(observable_params(array_rsu))
        fim = np.zeros((n, n))
        sigma = np.full_like(crb_los, np.inf)
        waa = sigma.copy()
        channel_diag = np.full(n, np.inf)
    return BoundReport(
        fim=fim, bias=bias, channel_crb=channel_diag, sigma_toa=req_waa, waa_cov=waa,
        peb_los=peb(crb_los, req_los), peb_nlos=peb(crb_nlos, req_nlos),
        peb_waa=peb(sigma, req_waa), members_rsu=tuple(members), members_cru=members_cru)


def direction_cosines(azimuth: float, elevation: float) -> tuple[float, float]:
    t = direction_vector(azimuth, elevation)
    return float(t[0]), float(t[2])
