import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from sidelinkpos.bounds import (
    ResolutionCell,
    SingularFimError,
    biased_crb,
    bound_report,
    fim_merged,
    fisher_information,
    marginal_crb,
    mean_signal,
    merge_paths,
    observable_params,
    paths_in_los_cell,
    position_bound,
    resolution_cell,
    waa_covariance,
)
from sidelinkpos.geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    ArrayKind,
    BandPlan,
    PathParam,
    Pose,
    SignalConfig,
    dbm_to_watts,
)
from sidelinkpos.scene import downward_rsu

NS = 1e-9
BP167 = BandPlan.uniform(5.9e9, 1, 100e6, 167, 120e3)


def small_plan():
    return BandPlan.uniform(5.9e9, 1, 100e6, 32, 120e3)


# resolution cell ------------------------------------------------------------------

def test_resolution_cell_delay_width_from_pilot_bandwidth():
    # 167 subcarriers at 120 kHz: 20.04 MHz, about 49.9 ns
    cell = resolution_cell(BP167, ArrayConfig(1, 1))
    assert cell.delay_halfwidth == pytest.approx(1 / 20.04e6)
    assert cell.delay_halfwidth == pytest.approx(49.9 * NS, abs=0.05 * NS)


def test_resolution_cell_ula_width():
    lam = BP167.wavelength
    cell = resolution_cell(BP167, ArrayConfig.half_wavelength(4, 1, lam))
    assert cell.tx_halfwidth == pytest.approx(2 / 3)
    assert cell.tz_halfwidth is None


def test_resolution_cell_single_antenna():
    cell = resolution_cell(BP167, ArrayConfig(1, 1))
    assert cell.tx_halfwidth is None and cell.tz_halfwidth is None
    los = PathParam(1.0, 100 * NS, 0.0, 0.0, True)
    far_angle = PathParam(1.0, 120 * NS, 1.2, -0.9)
    assert cell.contains(los, far_angle)


def test_resolution_cell_validation():
    with pytest.raises(ValueError):
        ResolutionCell(0.0)
    with pytest.raises(ValueError):
        ResolutionCell(1e-8, -1.0)


def test_in_cell_examples():
    lam = BP167.wavelength
    cell = resolution_cell(BP167, ArrayConfig.half_wavelength(4, 1, lam))
    los = PathParam(1.0, 100 * NS, 0.1, 0.0, True)
    late = PathParam(0.5, 100 * NS + 60 * NS, 0.1, 0.0)
    wide = PathParam(0.5, 110 * NS, 1.2, 0.0)     # |dt_x| about 0.83 > 2/3
    near = PathParam(0.5, 110 * NS, 0.3, 0.0)
    assert paths_in_los_cell([los, late], cell) == [0]
    assert paths_in_los_cell([los, wide], cell) == [0]
    assert paths_in_los_cell([late, near, los, wide], cell) == [1, 2]
    with pytest.raises(ValueError):
        paths_in_los_cell([late], cell)


path_st = st.builds(
    PathParam,
    st.complex_numbers(min_magnitude=0.1, max_magnitude=2.0, allow_nan=False, allow_infinity=False),
    st.floats(0, 200 * NS), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


@given(st.lists(path_st, min_size=1, max_size=8), st.floats(0, 200 * NS),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_in_cell_brute_force(others, tau, az, el):
    arr = ArrayConfig.half_wavelength(4, 2, BP167.wavelength)
    cell = resolution_cell(BP167, arr)
    los = PathParam(1.0, tau, az, el, True)
    paths = [los] + others
    t0 = np.array([math.cos(el) * math.sin(az), math.sin(el)])
    expected = [0]
    for i, p in enumerate(others, start=1):
        t = np.array([math.cos(p.elevation) * math.sin(p.azimuth), math.sin(p.elevation)])
        if (abs(p.delay - tau) < 1 / (167 * 120e3) and abs(t[0] - t0[0]) < 2 / 3
                and abs(t[1] - t0[1]) < 2):
            expected.append(i)
    assert paths_in_los_cell(paths, cell) == expected


# merging --------------------------------------------------------------------------

def test_merge_singleton():
    los = PathParam(0.3 - 0.2j, 80 * NS, 0.4, -0.1, True)
    m = merge_paths([los], [0])
    assert m.gain == los.gain and m.delay == los.delay
    assert m.azimuth == los.azimuth and m.elevation == los.elevation
    np.testing.assert_array_equal(m.weights, [1.0])


def test_merge_equal_magnitudes():
    paths = [PathParam(1.0, 50 * NS), PathParam(1j, 60 * NS)]
    m = merge_paths(paths, [0, 1])
    assert m.delay == pytest.approx(55 * NS)
    np.testing.assert_allclose(m.weights, [0.5, 0.5])


def test_merge_cancelling_gains():
    paths = [PathParam(1.0, 50 * NS), PathParam(-1.0, 60 * NS)]
    m = merge_paths(paths, [0, 1])
    assert m.gain == 0
    assert math.isfinite(m.delay)
    with pytest.raises(SingularFimError):
        fim_merged(m, ArrayConfig(1, 1), small_plan(), SignalConfig())


def test_merge_errors():
    with pytest.raises(ValueError):
        merge_paths([PathParam(1.0, 1e-8)], [])
    with pytest.raises(ValueError):
        merge_paths([PathParam(0.0, 1e-8)], [0])


@given(st.lists(path_st, min_size=1, max_size=6), st.floats(-math.pi, math.pi))
def test_merge_weights_phase_invariant(paths, phi):
    rot = [PathParam(p.gain * complex(math.cos(phi), math.sin(phi)), p.delay, p.azimuth,
                     p.elevation) for p in paths]
    idx = list(range(len(paths)))
    a, b = merge_paths(paths, idx), merge_paths(rot, idx)
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-12)
    assert abs(a.weights.sum() - 1) < 1e-12 and np.all(a.weights >= 0)
    assert a.delay == pytest.approx(b.delay, rel=1e-12)


# Fisher information ---------------------------------------------------------------

def test_single_antenna_delay_crb_closed_form():
    bp = small_plan()
    sig = SignalConfig()
    gain = 2e-6 * complex(0.6, 0.8)
    crb = marginal_crb([PathParam(gain, 75 * NS)], 0, ArrayConfig(1, 1), bp, sig)
    es = sig.symbol_energy(bp)
    f = np.arange(32) * 120e3
    # delay CRB with unknown complex gain: N0 / (2 Es |a|^2 (2 pi)^2 sum (f - mean f)^2)
    oracle = sig.noise_level / (2 * es * abs(gain) ** 2 * (2 * math.pi) ** 2
                                * np.sum((f - f.mean()) ** 2))
    k = observable_params(ArrayConfig(1, 1)).index("tau")
    assert crb[k, k] == pytest.approx(oracle, rel=1e-9)


def test_crb_scales_with_energy():
    bp = small_plan()
    arr = ArrayConfig.half_wavelength(4, 2, bp.wavelength)
    paths = [PathParam(1e-6, 75 * NS, 0.3, 0.2, True)]
    a = marginal_crb(paths, 0, arr, bp, SignalConfig())
    b = marginal_crb(paths, 0, arr, bp, SignalConfig(tx_power=2 * dbm_to_watts(10.0)))
    np.testing.assert_allclose(np.diag(b), np.diag(a) / 2, rtol=1e-9)


def test_fim_matches_finite_differences():
    bp = BandPlan.uniform(5.9e9, 2, 100e6, 8, 120e3)
    arr = ArrayConfig.half_wavelength(3, 2, bp.wavelength)
    sig = SignalConfig()
    es = sig.symbol_energy(bp)
    paths = [PathParam(1e-6 * (0.3 + 0.4j), 81 * NS, 0.4, -0.2),
             PathParam(1e-6 * (-0.5j), 97 * NS, -0.3, 0.1)]
    j = fisher_information(paths, arr, bp, sig)
    assert np.allclose(j, j.T) and np.min(np.linalg.eigvalsh(j)) > -1e-9 * np.max(np.abs(j))

    def theta_to_mu(theta):
        ps, ts = [], []
        for k in range(2):
            tx, tz, tau, re, im = theta[5 * k:5 * k + 5]
            ps.append(PathParam(complex(re, im), tau))
            ts.append((tx, tz))
        return mean_signal(ps, arr, bp, es, bp.wavelength, t_override=ts)

    theta = []
    for p in paths:
        t = p.direction
        theta += [t[0], t[2], p.delay, p.gain.real, p.gain.imag]
    theta = np.array(theta)
    scale = np.array([1, 1, 1e-7, 1e-6, 1e-6] * 2)
    cols = []
    for i in range(theta.size):
        h = 1e-6 * scale[i]
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((theta_to_mu(theta + e) - theta_to_mu(theta - e)) / (2 * h))
    d = np.column_stack(cols)
    j_fd = 2 / sig.noise_level * np.real(d.conj().T @ d)
    norm = np.sqrt(np.outer(np.diag(j), np.diag(j)))
    assert np.max(np.abs(j - j_fd) / norm) < 1e-6


def test_biased_crb_examples():
    np.testing.assert_allclose(biased_crb([[4.0]], [0.5]), [[0.5]])
    j = np.array([[4.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(biased_crb(j, [0, 0]), np.linalg.inv(j))
    with pytest.raises(SingularFimError):
        biased_crb(np.zeros((2, 2)), [0, 0])
    with pytest.raises(ValueError):
        biased_crb(j, [0.0])


def test_biased_crb_bias_dominates():
    b = np.array([1e-3, 2e-3])
    for scale in (1e6, 1e12, 1e18):
        c = biased_crb(np.diag([1.0, 2.0]) * scale, b)
    np.testing.assert_allclose(c, np.outer(b, b), rtol=1e-6, atol=1e-18)


def test_waa_covariance_examples():
    s = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_array_equal(waa_covariance(0.0, s), s)
    np.testing.assert_array_equal(waa_covariance(3.0, np.eye(2)), np.diag([4.0, 1.0]))
    out = waa_covariance(5.0, s)
    assert out[0, 1] == s[0, 1] and out[1, 0] == s[1, 0] and out[1, 1] == s[1, 1]
    with pytest.raises(ValueError):
        waa_covariance(1.0, np.eye(4))


# position bound -------------------------------------------------------------------

def test_position_bound_range_bearing_oracle():
    rsu = Pose((0.0, 0.0, 1.5))
    sig_tau, sig_t = 0.1 * NS, 1e-3
    cov = np.diag([sig_tau**2, sig_t**2])
    for r in (10.0, 20.0, 40.0):
        peb = position_bound(cov, rsu, (0.0, r, 1.5), ArrayKind.ULA)
        oracle = math.sqrt((r * sig_t) ** 2 + (SPEED_OF_LIGHT * sig_tau / 2) ** 2)
        assert peb == pytest.approx(oracle, rel=1e-9)
    tiny = np.diag([1e-30, sig_t**2])
    ratio = position_bound(tiny, rsu, (0, 20, 1.5), "ULA") / position_bound(
        tiny, rsu, (0, 10, 1.5), "ULA")
    assert ratio == pytest.approx(2.0, rel=1e-9)


def test_position_bound_errors():
    rsu = Pose((0.0, 0.0, 1.5))
    with pytest.raises(ValueError):
        position_bound(np.eye(2), rsu, (0.0, 0.0, 1.5), ArrayKind.ULA)
    with pytest.raises(ValueError):
        position_bound(np.eye(3), rsu, (0.0, 10.0, 1.5), ArrayKind.ULA)
    assert position_bound(np.eye(1), rsu, (0.0, 10.0, 1.5), ArrayKind.SINGLE) == math.inf


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-math.pi, math.pi),
       st.floats(3, 60), st.floats(-math.pi, math.pi))
def test_position_bound_translation_rotation_invariance(dx, dy, phi, r, bearing):
    rsu = downward_rsu((0.0, 0.0, 10.0), 0.3)
    cru = np.array([r * math.cos(bearing), r * math.sin(bearing), 1.5])
    cov = np.diag([(0.2 * NS) ** 2, 1e-4, 4e-4])
    base = position_bound(cov, rsu, cru, ArrayKind.URA)
    shift = np.array([dx, dy, 0.0])
    moved = Pose(rsu.position + shift, rsu.rotation)
    assert position_bound(cov, moved, cru + shift, ArrayKind.URA) == pytest.approx(base, rel=1e-7)
    c, s = math.cos(phi), math.sin(phi)
    rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    turned = downward_rsu((0.0, 0.0, 10.0), 0.3 + phi)
    assert np.allclose(turned.body_to_global(), rz @ rsu.body_to_global())
    assert position_bound(cov, turned, rz @ cru, ArrayKind.URA) == pytest.approx(base, rel=1e-7)


# bound report ---------------------------------------------------------------------

def _two_link(paths_extra, arr, bp):
    rsu = downward_rsu((0.0, 0.0, 10.0))
    cru = np.array([3.0, 25.0, 1.5])
    d = cru - rsu.position
    r = np.linalg.norm(d)
    t = rsu.global_to_local() @ (d / r)
    los = PathParam(1e-6, r / SPEED_OF_LIGHT, math.atan2(t[0], t[1]), math.asin(t[2]), True)
    paths = [los] + paths_extra(los)
    return rsu, cru, paths


@given(st.floats(0.05, 0.95), st.floats(-0.3, 0.3), st.floats(-0.2, 0.2),
       st.complex_numbers(min_magnitude=0.1, max_magnitude=1.0, allow_nan=False,
                          allow_infinity=False))
def test_los_peb_not_above_nlos_peb(frac, daz, del_, g):
    bp = small_plan()
    arr = ArrayConfig.half_wavelength(4, 2, bp.wavelength)
    cell = resolution_cell(bp, arr)

    def extra(los):
        el = float(np.clip(los.elevation + del_, -1.5, 1.5))
        return [PathParam(1e-6 * g, los.delay + frac * cell.delay_halfwidth,
                          los.azimuth + daz, el)]

    rsu, cru, paths = _two_link(extra, arr, bp)
    assume(len(paths_in_los_cell(paths, cell)) == 2)
    rep = bound_report(paths, paths, rsu, cru, arr, bp, SignalConfig())
    assert rep.peb_los >= 0 and rep.peb_nlos >= 0 and rep.peb_waa >= 0
    assert rep.peb_los <= rep.peb_nlos * (1 + 1e-9)


def test_waa_equals_los_without_multipath():
    bp = small_plan()
    arr = ArrayConfig.half_wavelength(4, 2, bp.wavelength)
    rsu, cru, paths = _two_link(lambda los: [], arr, bp)
    rep = bound_report(paths, paths, rsu, cru, arr, bp, SignalConfig())
    assert rep.peb_waa == pytest.approx(rep.peb_los, rel=1e-9)
    assert rep.peb_nlos == pytest.approx(rep.peb_los, rel=1e-9)
    np.testing.assert_array_equal(rep.bias, 0.0)


def test_unbiased_pebs_scale_with_snr():
    bp = small_plan()
    arr = ArrayConfig.half_wavelength(4, 2, bp.wavelength)
    cell = resolution_cell(bp, arr)

    def extra(los):
        return [PathParam(0.5e-6j, los.delay + 0.3 * cell.delay_halfwidth, los.azimuth + 0.1,
                          los.elevation - 0.05)]

    rsu, cru, paths = _two_link(extra, arr, bp)
    a = bound_report(paths, paths, rsu, cru, arr, bp, SignalConfig())
    b = bound_report(paths, paths, rsu, cru, arr, bp,
                     SignalConfig(tx_power=2 * dbm_to_watts(10.0)))
    assert b.peb_los == pytest.approx(a.peb_los / math.sqrt(2), rel=1e-9)
    assert b.peb_nlos == pytest.approx(a.peb_nlos / math.sqrt(2), rel=1e-9)
    assert b.peb_waa > a.peb_waa / math.sqrt(2)   # the bias term does not shrink
