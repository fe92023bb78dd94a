"""Shared domain types and geometric primitives.

Conventions used throughout the package:

* Local receiver frames have the array in the XZ plane and boresight along +Y.
* A direction is either a unit 3-vector ``t`` or an (azimuth, elevation) pair,
  related by ``t = [cos(el) sin(az), cos(el) cos(az), sin(el)]``.
* Pose rotations are intrinsic Z-Y-X (yaw, then pitch, then roll). The matrix
  returned by :meth:`Pose.global_to_local` is the transpose of the body-to-global
  rotation.
* Angles are radians everywhere except at I/O boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

_UNIT_TOL = 1e-9


def wrap_angle(x):
    """Wrap an angle (or array of angles) into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return float(y) if np.ndim(y) == 0 else y


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-global rotation for intrinsic Z-Y-X angles."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class Pose:
    """Position (m) and roll/pitch/yaw rotation (rad) of a device."""

    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        rot = wrap_angle(np.asarray(self.rotation, dtype=float).reshape(3))
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", np.asarray(rot, dtype=float))

    @property
    def yaw(self) -> float:
        return float(self.rotation[2])

    def body_to_global(self) -> np.ndarray:
        return rotation_matrix(*self.rotation)

    def global_to_local(self) -> np.ndarray:
        return self.body_to_global().T

    def with_yaw_offset(self, delta: float) -> "Pose":
        rot = self.rotation.copy()
        rot[2] = rot[2] + delta
        return Pose(self.position, rot)


@dataclass(frozen=True)
class PathParam:
    """One propagation path as seen at a receiver."""

    gain: complex
    delay: float
    azimuth: float = 0.0
    elevation: float = 0.0
    is_los: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gain", complex(self.gain))
        object.__setattr__(self, "delay", float(self.delay))
        object.__setattr__(self, "azimuth", float(self.azimuth))
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "is_los", bool(self.is_los))
        if not np.isfinite(self.delay) or self.delay < 0:
            raise ValueError(f"path delay must be finite and >= 0, got {self.delay}")
        if not -np.pi / 2 <= self.elevation <= np.pi / 2:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        if not -np.pi < self.azimuth <= np.pi:
            raise ValueError(f"azimuth {self.azimuth} outside (-pi, pi]")

    @property
    def direction(self) -> np.ndarray:
        return direction_vector(self.azimuth, self.elevation)


class ArrayKind(str, Enum):
    URA = "URA"
    ULA = "ULA"
    SINGLE = "Single"


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform rectangular array in the local XZ plane.

    Element ``(iz, ix)`` sits at ``[ix * d_x, 0, iz * d_z]``. The flat element
    order used by :meth:`element_positions` is ``ix * n_z + iz``, matching the
    Kronecker ordering ``a = a_x kron a_z``.
    """

    n_x: int = 1
    n_z: int = 1
    d_x: float = 0.0254
    d_z: float = 0.0254

    def __post_init__(self):
        if self.n_x < 1 or self.n_z < 1:
            raise ValueError("array dimensions must be >= 1")
        if self.d_x <= 0 or self.d_z <= 0:
            raise ValueError("element spacings must be > 0")

    @classmethod
    def half_wavelength(cls, n_x: int, n_z: int, wavelength: float) -> "ArrayConfig":
        return cls(n_x, n_z, wavelength / 2, wavelength / 2)

    @property
    def kind(self) -> ArrayKind:
        if self.n_x == 1 and self.n_z == 1:
            return ArrayKind.SINGLE
        if self.n_z == 1:
            return ArrayKind.ULA
        return ArrayKind.URA

    @property
    def n_elements(self) -> int:
        return self.n_x * self.n_z

    def element_positions(self) -> np.ndarray:
        ix, iz = np.meshgrid(np.arange(self.n_x), np.arange(self.n_z), indexing="ij")
        pos = np.zeros((self.n_elements, 3))
        pos[:, 0] = ix.ravel() * self.d_x
        pos[:, 2] = iz.ravel() * self.d_z
        return pos


@dataclass(frozen=True)
class BandPlan:
    """Multiband OFDM layout: ``B`` bands of ``S`` subcarriers spaced ``df``."""

    carriers: tuple
    subcarriers_per_band: int
    subcarrier_spacing: float

    def __post_init__(self):
        carriers = tuple(float(f) for f in np.atleast_1d(self.carriers))
        object.__setattr__(self, "carriers", carriers)
        if len(carriers) < 1:
            raise ValueError("at least one band is required")
        if self.subcarriers_per_band < 2:
            raise ValueError("at least two subcarriers per band are required")
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier spacing must be > 0")
        gaps = np.diff(carriers)
        if np.any(gaps <= 0):
            raise ValueError("band carriers must be strictly increasing")
        if np.any(gaps < self.band_bandwidth * (1 - 1e-12)):
            raise ValueError("bands overlap: carrier spacing below per-band bandwidth")

    @classmethod
    def uniform(cls, f0: float, n_bands: int, separation: float,
                subcarriers: int, spacing: float) -> "BandPlan":
        return cls(tuple(f0 + b * separation for b in range(n_bands)), subcarriers, spacing)

    @property
    def n_bands(self) -> int:
        return len(self.carriers)

    @property
    def band_bandwidth(self) -> float:
        return self.subcarriers_per_band * self.subcarrier_spacing

    @property
    def total_bandwidth(self) -> float:
        return self.band_bandwidth * self.n_bands

    @property
    def aperture(self) -> float:
        """Span from the lowest to the highest subcarrier (plus one spacing)."""
        return self.carriers[-1] - self.carriers[0] + self.band_bandwidth

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carriers[0]

    @property
    def n_samples(self) -> int:
        return self.subcarriers_per_band * self.n_bands

    def frequency_offsets(self) -> np.ndarray:
        """Offsets ``f_b - f_0 + s * df`` for every sample, band-major order."""
        f = np.asarray(self.carriers) - self.carriers[0]
        s = np.arange(self.subcarriers_per_band) * self.subcarrier_spacing
        return (f[:, None] + s[None, :]).ravel()


@dataclass(frozen=True)
class SignalConfig:
    """Pilot energetics.

    ``tx_power`` in W, ``noise_psd`` in W/Hz, ``noise_figure`` as a linear
    factor. The OFDM symbol duration does not enter the model and is not stored.
    """

    tx_power: float = dbm_to_watts(10.0)
    n_ofdm_symbols: int = 12
    noise_psd: float = dbm_to_watts(-174.0)
    noise_figure: float = db_to_linear(8.0)

    def symbol_energy(self, band_plan: BandPlan) -> float:
        es = self.tx_power * self.n_ofdm_symbols / band_plan.total_bandwidth
        if es <= 0:
            raise ValueError("per-subcarrier energy must be positive")
        return es

    @property
    def noise_level(self) -> float:
        return self.noise_psd * self.noise_figure


def direction_vector(azimuth, elevation) -> np.ndarray:
    """Unit arrival direction for (azimuth, elevation); broadcasts over arrays."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    if np.any(np.abs(el) > np.pi / 2 + 1e-12):
        raise ValueError("elevation outside [-pi/2, pi/2]")
    ce = np.cos(el)
    return np.stack([ce * np.sin(az), ce * np.cos(az), np.sin(el)], axis=-1)


def angles_from_direction(t) -> tuple[float, float]:
    """Inverse of :func:`direction_vector`; azimuth is 0 at the poles."""
    t = np.asarray(t, dtype=float).reshape(3)
    if abs(np.linalg.norm(t) - 1.0) > _UNIT_TOL:
        raise ValueError(f"direction must be unit norm, got norm {np.linalg.norm(t)}")
    # arctan2 keeps full precision near the poles, where arcsin does not
    el = float(np.arctan2(t[2], np.hypot(t[0], t[1])))
    if np.hypot(t[0], t[1]) < 1e-12:
        return 0.0, el
    az = float(np.arctan2(t[0], t[1]))
    return wrap_angle(az), el


def local_arrival_direction(receiver: Pose, interaction_point) -> np.ndarray:
    """Unit direction, in the receiver's local frame, toward the last interaction point."""
    delta = np.asarray(interaction_point, dtype=float).reshape(3) - receiver.position
    dist = np.linalg.norm(delta)
    if dist == 0.0:
        raise ValueError("interaction point coincides with the receiver")
    return receiver.global_to_local() @ (delta / dist)
