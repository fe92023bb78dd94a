import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sidelinkpos.bounds import position_bound
from sidelinkpos.estimators import EstimationResult
from sidelinkpos.geometry import SPEED_OF_LIGHT, ArrayKind, Pose, angles_from_direction
from sidelinkpos.positioning import (
    PositioningError,
    ProtocolState,
    RttMeasurement,
    assemble_measurement,
    ls_initialize,
    measurement_model,
    ml_position,
    rtt_exchange,
    ula_backsolve,
)
from sidelinkpos.scene import downward_rsu

NS = 1e-9
RSU = downward_rsu((0.0, 0.0, 10.0), math.pi / 4)
H = 1.5


def local_angles(rsu, x):
    d = np.asarray(x, float) - rsu.position
    return angles_from_direction(rsu.global_to_local() @ (d / np.linalg.norm(d)))


def link_results(rsu, x, kind):
    """Noiseless LoS estimates of both links for a CRU at ``x``."""
    tau = np.linalg.norm(np.asarray(x) - rsu.position) / SPEED_OF_LIGHT
    az, el = local_angles(rsu, x)
    cru = EstimationResult("MF", [tau], 0, 1)
    if kind is ArrayKind.URA:
        rsu_est = EstimationResult("MF", [tau], 0, 1, azimuths=[az], elevations=[el],
                                   los_azimuth=az, los_elevation=el)
    elif kind is ArrayKind.ULA:
        w = math.cos(el) * math.sin(az)
        rsu_est = EstimationResult("MF", [tau], 0, 1, spatial_frequencies=[w],
                                   los_spatial_frequency=w)
    else:
        rsu_est = EstimationResult("MF", [tau], 0, 1)
    return rsu_est, cru


def cov_for(kind):
    return {ArrayKind.URA: np.diag([(0.1 * NS) ** 2, 1e-4, 1e-4]),
            ArrayKind.ULA: np.diag([(0.1 * NS) ** 2, 1e-4]),
            ArrayKind.SINGLE: np.diag([(0.1 * NS) ** 2])}[kind]


# RTT protocol ----------------------------------------------------------------------

@pytest.mark.parametrize("beta", [0.0, 1e-6, 1e-3, -0.37])
def test_rtt_noiseless_range(beta):
    tau = 30.0 / SPEED_OF_LIGHT
    rtt, t_res = rtt_exchange(tau, tau, beta, t_req=0.0123)
    assert rtt * SPEED_OF_LIGHT / 2 == pytest.approx(30.0, rel=1e-12)
    assert t_res == pytest.approx(0.0123 + tau, rel=1e-12)


@given(st.floats(0, 1e-5), st.floats(0, 1e-5), st.floats(-1.0, 1.0), st.floats(0, 10.0))
def test_rtt_bias_cancels_exactly(req, resp, beta, t_req):
    assert rtt_exchange(req, resp, beta, t_req)[0] == rtt_exchange(req, resp, 0.0, t_req)[0]


def test_rtt_noise_arithmetic():
    tau = 30.0 / SPEED_OF_LIGHT
    rtt, _ = rtt_exchange(tau + 1 * NS, tau + 1 * NS, 1e-3)
    err = SPEED_OF_LIGHT * rtt / 2 - 30.0
    assert err == pytest.approx(SPEED_OF_LIGHT * 2 * NS / 2, rel=1e-9)
    assert err == pytest.approx(0.3, abs=1e-3)


# measurement assembly -------------------------------------------------------------

@pytest.mark.parametrize("kind", list(ArrayKind))
def test_assemble_noiseless_matches_model(kind):
    x = np.array([1.6, -20.0, H])
    rsu_est, cru_est = link_results(RSU, x, kind)
    meas = assemble_measurement(rsu_est, cru_est, ProtocolState(0.5, 1e-3), cov_for(kind), kind,
                                RSU, H)
    zeta, _ = measurement_model(x, RSU, kind)
    np.testing.assert_allclose(meas.observation, zeta, rtol=1e-12, atol=1e-15)
    assert meas.t_req == 0.5


def test_assemble_ura_passes_angles_through():
    x = np.array([7.0, 12.0, H])
    rsu_est, cru_est = link_results(RSU, x, ArrayKind.URA)
    meas = assemble_measurement(rsu_est, cru_est, ProtocolState(), cov_for(ArrayKind.URA),
                                ArrayKind.URA)
    assert meas.aoa == (rsu_est.los_azimuth, rsu_est.los_elevation)


@given(st.floats(-40, 40), st.floats(-40, 40))
def test_assemble_ula_reconstructs_elevation(x, y):
    pos = np.array([x, y, H])
    if np.hypot(x, y) < 1.0:
        return
    rsu_est, cru_est = link_results(RSU, pos, ArrayKind.ULA)
    # a ULA cannot tell the two sides of its axis apart; the hint picks the side
    meas = assemble_measurement(rsu_est, cru_est, ProtocolState(), cov_for(ArrayKind.ULA),
                                ArrayKind.ULA, RSU, H, hint_xy=pos[:2])
    az, el = local_angles(RSU, pos)
    assert meas.aoa[1] == pytest.approx(el, abs=1e-7)
    assert meas.aoa[0] == pytest.approx(az, abs=1e-6)


def test_assemble_requires_both_links():
    rsu_est, _ = link_results(RSU, (1.0, 20.0, H), ArrayKind.URA)
    with pytest.raises(ValueError):
        assemble_measurement(rsu_est, None, ProtocolState(), cov_for(ArrayKind.URA),
                             ArrayKind.URA)


def test_measurement_validation():
    with pytest.raises(ValueError):
        RttMeasurement(0.0, (), [0.0], [[1.0]], ArrayKind.SINGLE)
    with pytest.raises(ValueError):
        RttMeasurement(1e-7, (), [1e-7, 0.1], [[1.0, 2.0], [2.0, 1.0]], ArrayKind.ULA)
    with pytest.raises(ValueError):
        RttMeasurement(1e-7, (), [1e-7, 0.1], [[1.0, 0.1], [0.0, 1.0]], ArrayKind.ULA)
    with pytest.raises(ValueError):
        RttMeasurement(1e-7, (), [1e-7, 0.1], np.eye(3), ArrayKind.ULA)


def test_measurement_model_jacobian_finite_difference():
    x = np.array([4.0, -18.0, H])
    for kind in (ArrayKind.URA, ArrayKind.ULA):
        _, jac = measurement_model(x, RSU, kind)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-5
            fd = (measurement_model(x + e, RSU, kind)[0] - measurement_model(x - e, RSU, kind)[0]) / 2e-5
            np.testing.assert_allclose(jac[:, i], fd, rtol=1e-6, atol=1e-12)
    with pytest.raises(PositioningError):
        measurement_model(RSU.position, RSU, ArrayKind.URA)


# LS initialisation ---------------------------------------------------------------

def _meas(x, kind, rsu=RSU, beta=0.0):
    rsu_est, cru_est = link_results(rsu, x, kind)
    return assemble_measurement(rsu_est, cru_est, ProtocolState(0.0, beta), cov_for(kind), kind,
                                rsu, H, hint_xy=np.asarray(x)[:2])


@pytest.mark.parametrize("kind", [ArrayKind.URA, ArrayKind.ULA])
def test_ls_init_exact(kind):
    x = np.array([1.6, -20.0, H])
    meas = _meas(x, kind)
    np.testing.assert_allclose(ls_initialize(meas, RSU, H, x[:2]), x[:2], atol=1e-7)


def test_ula_mirror_ambiguity_resolved_by_hint():
    x = np.array([1.6, -20.0, H])
    meas = _meas(x, ArrayKind.ULA)
    r = SPEED_OF_LIGHT * meas.rtt_toa / 2
    a = ula_backsolve(meas.observation[1], r, RSU, H, hint_xy=x[:2])
    mirror_xy = ula_backsolve(meas.observation[1], r, RSU, H, hint_xy=[-20.0, 1.6])
    np.testing.assert_allclose(RSU.position[:2] + r * a[:2], x[:2], atol=1e-7)
    # the other root reflects across the vertical plane through the array axis
    np.testing.assert_allclose(RSU.position[:2] + r * mirror_xy[:2], [-20.0, 1.6], atol=1e-7)
    w_a = measurement_model(x, RSU, ArrayKind.ULA)[0][1]
    w_b = measurement_model(np.r_[-20.0, 1.6, H], RSU, ArrayKind.ULA)[0][1]
    assert w_a == pytest.approx(w_b, abs=1e-12)


def test_ls_init_axis_convention():
    rsu = Pose((0.0, 0.0, H))
    meas = _meas(np.array([0.0, 20.0, H]), ArrayKind.URA, rsu)
    assert meas.aoa[0] == pytest.approx(0.0, abs=1e-15)
    xy = ls_initialize(meas, rsu, H)
    assert xy[1] > 0 and xy[0] == pytest.approx(0.0, abs=1e-12)


def test_ls_init_range_equals_height_gap():
    dh = 10.0 - H
    meas = RttMeasurement(2 * dh / SPEED_OF_LIGHT, (0.0, -math.pi / 2),
                          [2 * dh / SPEED_OF_LIGHT, 0.0, -1.0], cov_for(ArrayKind.URA),
                          ArrayKind.URA)
    np.testing.assert_allclose(ls_initialize(meas, RSU, H), RSU.position[:2], atol=1e-12)


def test_ls_init_infeasible_range():
    r = 5.0
    meas = RttMeasurement(2 * r / SPEED_OF_LIGHT, (0.0, 0.0), [2 * r / SPEED_OF_LIGHT, 0.0, 0.0],
                          cov_for(ArrayKind.URA), ArrayKind.URA)
    with pytest.raises(PositioningError):
        ls_initialize(meas, RSU, H)
    with pytest.raises(PositioningError):
        ula_backsolve(0.1, r, RSU, H)


# ML refinement -------------------------------------------------------------------

@pytest.mark.parametrize("kind", [ArrayKind.URA, ArrayKind.ULA])
def test_ml_noiseless_fixed_point(kind):
    x = np.array([6.0, 22.0, H])
    meas = _meas(x, kind)
    est = ml_position(meas, RSU, H, ls_initialize(meas, RSU, H))
    assert est.converged and est.iterations <= 5
    np.testing.assert_allclose(est.xy, x[:2], atol=1e-6)


def _noisy_meas(x, kind, rng, cov):
    zeta, _ = measurement_model(x, RSU, kind)
    z = rng.multivariate_normal(zeta, cov)
    return RttMeasurement(z[0], (), z, cov, kind)


def test_ml_basin_and_scale_invariance():
    rng = np.random.default_rng(3)
    x = np.array([6.0, 22.0, H])
    cov = cov_for(ArrayKind.URA)
    meas = _noisy_meas(x, ArrayKind.URA, rng, cov)
    init = ls_initialize(meas, RSU, H)
    a = ml_position(meas, RSU, H, init)
    for d in ([5, 0], [0, -5], [-3.5, 3.5]):
        b = ml_position(meas, RSU, H, init + np.array(d, float))
        np.testing.assert_allclose(b.xy, a.xy, atol=1e-6)
    for k in (1e-3, 7.0):
        scaled = RttMeasurement(meas.rtt_toa, (), meas.observation, k * cov, ArrayKind.URA)
        c = ml_position(scaled, RSU, H, init)
        np.testing.assert_allclose(c.xy, a.xy, atol=1e-6)


@given(st.floats(-30, 30), st.floats(-30, 30), st.integers(0, 2**31))
def test_ml_first_order_optimality(x, y, seed):
    pos = np.array([x, y, H])
    if np.hypot(x, y) < 3:
        return
    cov = np.diag([(0.05 * NS) ** 2, 1e-5, 1e-5])
    meas = _noisy_meas(pos, ArrayKind.URA, np.random.default_rng(seed), cov)
    try:
        init = ls_initialize(meas, RSU, H)
    except PositioningError:
        return
    est = ml_position(meas, RSU, H, init)
    assert est.converged
    # ||H^-1 g|| <= ||g|| / lambda_min(H): the Newton step left is below 0.1 um
    jac = measurement_model(np.r_[est.xy, H], RSU, ArrayKind.URA)[1][:, :2]
    hess = 2 * jac.T @ np.linalg.inv(cov) @ jac
    assert est.grad_norm / np.linalg.eigvalsh(hess)[0] < 1e-7


def test_ml_rejects_single_antenna():
    meas = RttMeasurement(1e-7, (), [1e-7], [[1e-20]], ArrayKind.SINGLE)
    with pytest.raises(PositioningError):
        ml_position(meas, RSU, H, [0.0, 0.0])


def test_ml_rmse_matches_bound_at_high_snr():
    rng = np.random.default_rng(11)
    x = np.array([5.0, 18.0, H])
    cov = np.diag([(0.02 * NS) ** 2, 2e-6, 2e-6])
    peb = position_bound(cov, RSU, x, ArrayKind.URA)
    errs = []
    for _ in range(2000):
        meas = _noisy_meas(x, ArrayKind.URA, rng, cov)
        est = ml_position(meas, RSU, H, ls_initialize(meas, RSU, H))
        errs.append(np.sum((est.xy - x[:2]) ** 2))
    rmse = math.sqrt(np.mean(errs))
    assert abs(rmse / peb - 1) < 0.10
