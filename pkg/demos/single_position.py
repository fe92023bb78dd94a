"""Position one vehicle in the urban intersection with each algorithm.

Run: python3 demos/single_position.py
"""

import numpy as np

from sidelinkpos import estimators as est
from sidelinkpos.bounds import bound_report
from sidelinkpos.geometry import SPEED_OF_LIGHT, ArrayConfig, BandPlan, SignalConfig
from sidelinkpos.positioning import (
    ProtocolState,
    assemble_measurement,
    ls_initialize,
    ml_position,
)
from sidelinkpos.scene import Receiver, generate_paths, urban_scene
from sidelinkpos.waveform import synthesize


def main():
    scene = urban_scene()
    cru = np.array([1.6, 45.0, scene.cru_height])
    bp = BandPlan.uniform(5.9e9, 1, 100e6, 167, 120e3)
    lam = bp.wavelength
    rsu_array = ArrayConfig.half_wavelength(4, 2, lam)
    cru_array = ArrayConfig()
    sig = SignalConfig()

    paths_rsu = generate_paths(scene, cru, Receiver.AT_RSU)
    paths_cru = generate_paths(scene, cru, Receiver.AT_CRU)
    print(f"{len(paths_rsu)} paths; LoS range {np.linalg.norm(cru - scene.rsu.position):.2f} m")

    report = bound_report(paths_rsu, paths_cru, scene.rsu, cru, rsu_array, bp, sig, cru_array, lam)
    print(f"PEB  LoS {report.peb_los:.3f} m  NLoS {report.peb_nlos:.3f} m  "
          f"WAA {report.peb_waa:.3f} m")

    obs_rsu = synthesize(paths_rsu, rsu_array, bp, sig, rng_seed=1, wavelength=lam)
    obs_cru = synthesize(paths_cru, cru_array, bp, sig, rng_seed=2, wavelength=lam)
    prior = est.HeightPrior(scene.rsu, scene.cru_height)
    # the street runs along y, so its centre line picks the side for a ULA
    hint = (1.6, 0.0)
    runs = {
        "MF": (est.mf_3d(obs_rsu), est.mf_1d(obs_cru)),
        "HRP": (est.cpd_estimate(obs_rsu, prior=prior), est.esprit_1d(obs_cru)),
        "HRP-SA": (est.cpd_sa(obs_rsu, prior=prior), est.esprit_1d(obs_cru)),
    }
    for name, (e_rsu, e_cru) in runs.items():
        meas = assemble_measurement(e_rsu, e_cru, ProtocolState(0.0, 2e-6), report.waa_cov,
                                    rsu_array.kind, scene.rsu, scene.cru_height, hint)
        sol = ml_position(meas, scene.rsu, scene.cru_height,
                          ls_initialize(meas, scene.rsu, scene.cru_height, hint))
        r_err = abs(SPEED_OF_LIGHT * meas.rtt_toa / 2 - np.linalg.norm(cru - scene.rsu.position))
        print(f"{name:7s} range error {r_err:.3f} m  position error "
              f"{np.linalg.norm(sol.xy - cru[:2]):.3f} m")


if __name__ == "__main__":
    main()
