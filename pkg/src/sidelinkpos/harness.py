"""Monte Carlo evaluation: configuration, trial loop, results CSV and summaries.

Each trial draws its noise from a counter-based stream keyed by
``(base_seed, sweep_id, traj_idx, trial)``, so any subset of trials can be
recomputed in any order. With ``paired_trials`` the sweep index is left out
of the key and all sweep points share noise (paired comparisons).
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import bounds as bd
from . import estimators as est
from .geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    ArrayKind,
    BandPlan,
    Pose,
    SignalConfig,
    db_to_linear,
    dbm_to_watts,
    wrap_angle,
)
from .positioning import (
    PositioningError,
    ProtocolState,
    assemble_measurement,
    ls_initialize,
    ml_position,
)
from .scene import (
    SCENES,
    Receiver,
    generate_paths,
    highway_trajectories,
    import_paths,
    urban_vehicle_trajectory,
)
from .waveform import synthesize

CSV_COLUMNS = ["sweep_id", "traj_idx", "trial", "algorithm", "range_err_m", "az_err_rad",
               "el_err_rad", "pos_err_m", "converged", "peb_los_m", "peb_nlos_m", "peb_waa_m"]
PIPELINES = ("MF", "HRP", "HRP-SA")
TRAJECTORIES = {
    "urban": lambda: [urban_vehicle_trajectory()],
    "highway": lambda: list(highway_trajectories()),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ArraySpec:
    n_x: int = 1
    n_z: int = 1

    def build(self, wavelength: float) -> ArrayConfig:
        return ArrayConfig.half_wavelength(self.n_x, self.n_z, wavelength)


@dataclass
class BandSpec:
    carrier_hz: float = 5.9e9
    n_bands: int = 1
    separation_hz: float = 100e6
    subcarriers: int = 167
    spacing_hz: float = 120e3

    def build(self) -> BandPlan:
        return BandPlan.uniform(self.carrier_hz, self.n_bands, self.separation_hz,
                                self.subcarriers, self.spacing_hz)


@dataclass
class SignalSpec:
    tx_power_dbm: float = 10.0
    n_ofdm_symbols: int = 12
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 8.0

    def build(self) -> SignalConfig:
        return SignalConfig(dbm_to_watts(self.tx_power_dbm), self.n_ofdm_symbols,
                            dbm_to_watts(self.noise_psd_dbm_hz), db_to_linear(self.noise_figure_db))


@dataclass
class SweepAxis:
    path: str
    values: list


@dataclass
class ExperimentConfig:
    """Experiment description; angles are in degrees at this boundary.

    ``covariance`` is ``"oracle"`` (WAA bound at the true geometry) or a dict
    ``{"range_m": ..., "angle_rad": ...}`` giving a diagonal ``R0``.
    ``paths`` optionally replaces the scene by imported path lists:
    ``{"rsu": csv, "cru": csv, "cru_position": [x, y, z]}``.
    """

    scene: str = "urban"
    trajectory: int = 0
    n_points: int | None = 10
    rsu_array: ArraySpec = field(default_factory=lambda: ArraySpec(4, 2))
    cru_array: ArraySpec = field(default_factory=ArraySpec)
    band_plan: BandSpec = field(default_factory=BandSpec)
    signal: SignalSpec = field(default_factory=SignalSpec)
    algorithms: list = field(default_factory=lambda: ["MF", "HRP-SA"])
    n_trials: int = 10
    base_seed: int = 0
    sweep: list = field(default_factory=list)
    heading_sigma_deg: float = 0.0
    paired_trials: bool = False
    covariance: object = "oracle"
    noiseless: bool = False
    paths: dict | None = None
    clock_bias_s: float = 0.0
    t_req_s: float = 0.0

    def __post_init__(self):
        if isinstance(self.rsu_array, dict):
            self.rsu_array = ArraySpec(**self.rsu_array)
        if isinstance(self.cru_array, dict):
            self.cru_array = ArraySpec(**self.cru_array)
        if isinstance(self.band_plan, dict):
            self.band_plan = BandSpec(**self.band_plan)
        if isinstance(self.signal, dict):
            self.signal = SignalSpec(**self.signal)
        self.sweep = [SweepAxis(**a) if isinstance(a, dict) else a for a in self.sweep]
        self.validate()

    def validate(self):
        if not isinstance(self.n_trials, int) or self.n_trials < 1:
            raise ConfigError("n_trials must be an integer >= 1")
        if self.heading_sigma_deg < 0:
            raise ConfigError("heading_sigma_deg must be >= 0")
        if self.paths is None and self.scene not in SCENES:
            raise ConfigError(f"unknown scene {self.scene!r}; choose from {sorted(SCENES)}")
        if self.paths is None and not 0 <= self.trajectory < len(TRAJECTORIES[self.scene]()):
            raise ConfigError(f"scene {self.scene!r} has no trajectory {self.trajectory}")
        if self.n_points is not None and self.n_points < 1:
            raise ConfigError("n_points must be >= 1")
        for a in self.algorithms:
            if a not in PIPELINES:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {PIPELINES}")
        if self.cru_array.n_x * self.cru_array.n_z != 1:
            raise ConfigError("the CRU must be a single-antenna device")
        if not (self.covariance == "oracle" or isinstance(self.covariance, dict)):
            raise ConfigError("covariance must be 'oracle' or a dict of standard deviations")
        for axis in self.sweep:
            if not isinstance(axis.values, list) or not axis.values:
                raise ConfigError(f"sweep axis {axis.path!r} needs a non-empty value list")
        try:
            self.band_plan.build()
            self.signal.build().symbol_energy(self.band_plan.build())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**copy.deepcopy(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def sweep_points(self) -> list["ExperimentConfig"]:
        """One config per point of the Cartesian product of the sweep axes."""
        if not self.sweep:
            return [self]
        out = []
        for combo in itertools.product(*(a.values for a in self.sweep)):
            d = self.to_dict()
            d["sweep"] = []
            for axis, value in zip(self.sweep, combo):
                _set_path(d, axis.path, value)
            out.append(ExperimentConfig.from_dict(d))
        return out


def _set_path(d: dict, path: str, value):
    keys = path.split(".")
    node = d
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"sweep path {path!r} does not exist")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"sweep path {path!r} does not exist")
    node[keys[-1]] = value


@dataclass
class ResultRecord:
    sweep_id: int
    traj_idx: int
    trial: int
    algorithm: str
    range_err_m: float
    az_err_rad: float
    el_err_rad: float
    pos_err_m: float
    converged: bool
    peb_los_m: float
    peb_nlos_m: float
    peb_waa_m: float
    config_hash: str = ""
    seed: tuple = ()
    error: str = ""

    def row(self) -> list[str]:
        vals = [getattr(self, c) for c in CSV_COLUMNS]
        return [("1" if v else "0") if isinstance(v, bool) else
                (repr(float(v)) if isinstance(v, float) else str(v)) for v in vals]


@dataclass
class _Point:
    """Everything about one trajectory point that does not depend on noise."""

    position: np.ndarray
    paths_rsu: list
    paths_cru: list
    report: bd.BoundReport
    covariance: np.ndarray


def _trial_seed(cfg: ExperimentConfig, sweep_id: int, traj_idx: int, trial: int) -> tuple:
    return (cfg.base_seed, 0 if cfg.paired_trials else sweep_id, traj_idx, trial)


def _oracle_covariance(report: bd.BoundReport, kind: ArrayKind) -> np.ndarray | None:
    cov = report.waa_cov
    if not np.all(np.isfinite(cov)):
        return None
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    return cov


def _configured_covariance(spec: dict, kind: ArrayKind) -> np.ndarray:
    sr = float(spec.get("range_m", 0.5))
    sa = float(spec.get("angle_rad", 0.02))
    d = [(2 * sr / SPEED_OF_LIGHT) ** 2] + [sa**2] * {ArrayKind.URA: 2, ArrayKind.ULA: 1,
                                                     ArrayKind.SINGLE: 0}[kind]
    return np.diag(d)


def _points(cfg: ExperimentConfig, rsu: Pose, array_rsu, array_cru, bp, sig, lam, scene):
    if cfg.paths is not None:
        with open(cfg.paths["rsu"], newline="") as fh:
            paths_rsu = import_paths(fh)
        with open(cfg.paths["cru"], newline="") as fh:
            paths_cru = import_paths(fh)
        positions = [(np.asarray(cfg.paths["cru_position"], dtype=float), paths_rsu, paths_cru)]
    else:
        traj = TRAJECTORIES[cfg.scene]()[cfg.trajectory]
        pts = traj.samples()
        if cfg.n_points is not None and cfg.n_points < len(pts):
            pts = pts[np.linspace(0, len(pts) - 1, cfg.n_points).round().astype(int)]
        positions = [(p, generate_paths(scene, p, Receiver.AT_RSU),
                      generate_paths(scene, p, Receiver.AT_CRU)) for p in pts]
    out = []
    for p, pr, pc in positions:
        report = bd.bound_report(pr, pc, rsu, p, array_rsu, bp, sig, array_cru, lam)
        cov = None
        if cfg.covariance == "oracle":
            cov = _oracle_covariance(report, array_rsu.kind)
        if cov is None:
            spec = cfg.covariance if isinstance(cfg.covariance, dict) else {}
            cov = _configured_covariance(spec, array_rsu.kind)
        out.append(_Point(p, pr, pc, report, cov))
    return out


def _estimate_rsu(algorithm: str, obs, prior):
    kind = obs.array.kind
    if kind is ArrayKind.SINGLE:
        return est.mf_1d(obs) if algorithm == "MF" else est.esprit_1d(obs)
    if algorithm == "MF":
        return est.mf_3d(obs)
    if kind is ArrayKind.ULA:
        return est.esprit_2d(obs) if algorithm == "HRP" else est.esprit_2d_sa(obs)
    if algorithm == "HRP":
        return est.cpd_estimate(obs, prior=prior)
    return est.cpd_sa(obs, prior=prior)


def _estimate_cru(algorithm: str, obs):
    return est.mf_1d(obs) if algorithm == "MF" else est.esprit_1d(obs)


def _angle_errors(meas, los, kind):
    if kind is ArrayKind.SINGLE or not meas.aoa:
        return math.inf, math.inf
    az, el = meas.aoa
    return abs(float(wrap_angle(az - los.azimuth))), abs(el - los.elevation)


def run_experiment(cfg: ExperimentConfig, trial_order=None):
    """Yield one :class:`ResultRecord` per (sweep point, trajectory point, trial, algorithm).

    ``trial_order`` optionally permutes the trial indices (results are
    unchanged, only their order).
    """
    digest = cfg.digest()
    for sweep_id, pcfg in enumerate(cfg.sweep_points()):
        bp = pcfg.band_plan.build()
        sig = pcfg.signal.build()
        lam = bp.wavelength
        scene = None
        if pcfg.paths is None:
            scene = SCENES[pcfg.scene]()
            rsu = scene.rsu
            cru_height = scene.cru_height
        else:
            rsu = Pose(pcfg.paths.get("rsu_position", (0.0, 0.0, 10.0)),
                       pcfg.paths.get("rsu_rotation", (0.0, 0.0, 0.0)))
            cru_height = float(pcfg.paths["cru_position"][2])
        array_rsu = pcfg.rsu_array.build(lam)
        array_cru = pcfg.cru_array.build(lam)
        points = _points(pcfg, rsu, array_rsu, array_cru, bp, sig, lam, scene)
        hint = None
        if pcfg.paths is None:
            hint = np.mean(np.asarray(TRAJECTORIES[pcfg.scene]()[pcfg.trajectory].waypoints)[:, :2],
                           axis=0)
        sigma = math.radians(pcfg.heading_sigma_deg)
        trials = list(range(pcfg.n_trials)) if trial_order is None else list(trial_order)
        for traj_idx, pt in enumerate(points):
            for trial in trials:
                key = _trial_seed(pcfg, sweep_id, traj_idx, trial)
                yield from _run_trial(pcfg, key, digest, sweep_id, traj_idx, trial, pt, rsu,
                                      cru_height, array_rsu, array_cru, bp, sig, lam, sigma, hint)


def _run_trial(cfg, key, digest, sweep_id, traj_idx, trial, pt: _Point, rsu, cru_height,
               array_rsu, array_cru, bp, sig, lam, sigma, hint):
    ss = np.random.SeedSequence(list(key))
    s_rsu, s_cru, s_head = ss.spawn(3)
    n0 = 0.0 if cfg.noiseless else None
    obs_rsu = synthesize(pt.paths_rsu, array_rsu, bp, sig, s_rsu, noise_level=n0, wavelength=lam)
    obs_cru = synthesize(pt.paths_cru, array_cru, bp, sig, s_cru, noise_level=n0, wavelength=lam)
    # standard-normal draw scaled by sigma: paired across heading values
    yaw_err = sigma * float(np.random.default_rng(s_head).standard_normal())
    believed = rsu.with_yaw_offset(yaw_err)
    prior = est.HeightPrior(believed, cru_height)
    los = pt.paths_rsu[bd.los_index(pt.paths_rsu)]
    true_range = float(np.linalg.norm(pt.position - rsu.position))
    rep = pt.report
    for algorithm in cfg.algorithms:
        base = dict(sweep_id=sweep_id, traj_idx=traj_idx, trial=trial, algorithm=algorithm,
                    peb_los_m=float(rep.peb_los), peb_nlos_m=float(rep.peb_nlos),
                    peb_waa_m=float(rep.peb_waa), config_hash=digest, seed=key)
        try:
            e_rsu = _estimate_rsu(algorithm, obs_rsu, prior)
            e_cru = _estimate_cru(algorithm, obs_cru)
            protocol = ProtocolState(cfg.t_req_s, cfg.clock_bias_s)
            meas = assemble_measurement(e_rsu, e_cru, protocol, pt.covariance,
                                        array_rsu.kind, believed, cru_height, hint)
        except (est.EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            yield ResultRecord(range_err_m=math.inf, az_err_rad=math.inf, el_err_rad=math.inf,
                               pos_err_m=math.inf, converged=False, error=str(exc), **base)
            continue
        range_err = abs(SPEED_OF_LIGHT * meas.rtt_toa / 2 - true_range)
        az_err, el_err = _angle_errors(meas, los, array_rsu.kind)
        try:
            try:
                init = ls_initialize(meas, believed, cru_height, hint)
            except PositioningError:
                if array_rsu.kind is ArrayKind.SINGLE:
                    raise
                # RTT range shorter than the height gap: start below the RSU
                init = believed.position[:2].copy()
            sol = ml_position(meas, believed, cru_height, init)
            pos_err = float(np.linalg.norm(sol.xy - pt.position[:2]))
            converged = bool(sol.converged)
            err = ""
        except (PositioningError, ValueError, np.linalg.LinAlgError) as exc:
            pos_err, converged, err = math.inf, False, str(exc)
        yield ResultRecord(range_err_m=float(range_err), az_err_rad=float(az_err),
                           el_err_rad=float(el_err), pos_err_m=pos_err, converged=converged,
                           error=err, **base)


def records_to_csv(records, file=None) -> str:
    """Write records as CSV (``file`` may be a path or text stream); returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    text = buf.getvalue()
    if isinstance(file, str):
        with open(file, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    elif file is not None:
        file.write(text)
    return text


def write_results(records, path: str) -> int:
    """Stream records to ``path`` row by row; rows written before a failure are kept."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())
            fh.flush()
            n += 1
    return n


_INT_COLS = {"sweep_id", "traj_idx", "trial"}
_FLOAT_COLS = set(CSV_COLUMNS[4:8]) | set(CSV_COLUMNS[9:])


def read_records(file) -> list[ResultRecord]:
    """Parse a results CSV, checking the header and every value."""
    fh = open(file, newline="", encoding="utf-8") if isinstance(file, str) else file
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        out = []
        for n, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"line {n}: expected {len(CSV_COLUMNS)} fields")
            vals = {}
            for col, v in zip(CSV_COLUMNS, row):
                try:
                    if col in _INT_COLS:
                        vals[col] = int(v)
                    elif col in _FLOAT_COLS:
                        vals[col] = float(v)
                        if not vals[col] >= 0:
                            raise ValueError
                    elif col == "converged":
                        if v not in ("0", "1"):
                            raise ValueError
                        vals[col] = v == "1"
                    else:
                        vals[col] = v
                except ValueError:
                    raise ValueError(f"line {n}: bad value {v!r} in column {col}") from None
            out.append(ResultRecord(**vals))
        return out
    finally:
        if isinstance(file, str):
            fh.close()


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float)
    return float(np.sqrt(np.mean(e**2)))


def empirical_cdf(errors, step: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Error quantiles at probability levels ``step, 2*step, ..., 1`` (order statistics)."""
    e = np.asarray(errors, dtype=float)
    probs = np.round(np.arange(1, round(1 / step) + 1) * step, 12)
    return probs, np.quantile(e, probs, method="inverted_cdf")


METRICS = ("range_err_m", "az_err_rad", "el_err_rad", "pos_err_m")


def summarize(records, metrics=METRICS) -> tuple[list[dict], list[dict]]:
    """RMSE per (sweep, trajectory point, algorithm) and CDF per (sweep, algorithm)."""
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.sweep_id, r.traj_idx, r.algorithm), []).append(r)
    rmse_rows = []
    for (sid, tid, alg), rs in sorted(groups.items()):
        row = {"sweep_id": sid, "traj_idx": tid, "algorithm": alg, "n": len(rs)}
        for m in metrics:
            row[f"rmse_{m}"] = rmse([getattr(r, m) for r in rs])
        rmse_rows.append(row)
    cdf_groups: dict = {}
    for r in records:
        cdf_groups.setdefault((r.sweep_id, r.algorithm), []).append(r.pos_err_m)
    cdf_rows = []
    for (sid, alg), errs in sorted(cdf_groups.items()):
        probs, q = empirical_cdf(errs)
        for p, v in zip(probs, q):
            cdf_rows.append({"sweep_id": sid, "algorithm": alg, "probability": float(p),
                             "pos_err_m": float(v)})
    return rmse_rows, cdf_rows


def rows_to_csv(rows: list[dict], file=None) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    text = buf.getvalue()
    if isinstance(file, str):
        with open(file, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    elif file is not None:
        file.write(text)
    return text


def bootstrap_median_diff(a, b, n_boot: int = 2000, seed: int = 0,
                          level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap CI of ``median(b) - median(a)`` (samples resampled independently)."""
    def diff(x, y, axis=-1):
        return np.median(y, axis=axis) - np.median(x, axis=axis)

    res = stats.bootstrap((np.asarray(a, dtype=float), np.asarray(b, dtype=float)), diff,
                          n_resamples=n_boot, vectorized=True, confidence_level=level,
                          method="percentile", rng=np.random.default_rng(seed))
    ci = res.confidence_interval
    return float(ci.low), float(ci.high)
