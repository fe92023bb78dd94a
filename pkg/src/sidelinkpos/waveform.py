"""Steering vectors and multiband observation synthesis.

The frequency-domain model is referenced to the first carrier: a path with
delay ``tau`` contributes ``exp(-j 2 pi (f_b - f_0 + s df) tau)`` on subcarrier
``s`` of band ``b``. The common carrier phase ``exp(-j 2 pi f_0 tau)`` is part
of the complex path gain (the scene generator already puts it there).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import ArrayConfig, ArrayKind, BandPlan, PathParam, SignalConfig


class Layout(str, Enum):
    TENSOR3D = "Tensor3D"
    MATRIX2D = "Matrix2D"
    VECTOR1D = "Vector1D"


@dataclass(frozen=True)
class Observation:
    """Noisy measurement in one of three layouts.

    ``Tensor3D`` data has shape ``(n_z, n_x, S*B)``, ``Matrix2D`` has
    ``(n_x, S*B)`` and ``Vector1D`` has ``(S*B,)``. ``energy`` is the
    per-subcarrier energy ``E_s`` and ``noise_level`` the per-entry noise
    variance ``N_0``.
    """

    layout: Layout
    data: np.ndarray
    band_plan: BandPlan
    array: ArrayConfig
    energy: float
    noise_level: float
    wavelength: float

    def __post_init__(self):
        expected = {
            Layout.TENSOR3D: (self.array.n_z, self.array.n_x, self.band_plan.n_samples),
            Layout.MATRIX2D: (self.array.n_x, self.band_plan.n_samples),
            Layout.VECTOR1D: (self.band_plan.n_samples,),
        }[Layout(self.layout)]
        if self.data.shape != expected:
            raise ValueError(f"{self.layout} data must have shape {expected}, got {self.data.shape}")

    def as_tensor(self) -> np.ndarray:
        a = self.array
        return self.data.reshape(a.n_z, a.n_x, self.band_plan.n_samples)

    def as_matrix(self) -> np.ndarray:
        """Element-by-sample matrix with rows ordered ``ix * n_z + iz``."""
        t = self.as_tensor()
        return np.transpose(t, (1, 0, 2)).reshape(self.array.n_elements, -1)


def spatial_frequency(azimuth, elevation):
    return np.cos(elevation) * np.sin(azimuth)


def steering_x(azimuth, elevation, array: ArrayConfig, wavelength: float) -> np.ndarray:
    n = np.arange(array.n_x)
    omega = spatial_frequency(azimuth, elevation)
    return np.exp(1j * 2 * np.pi / wavelength * array.d_x * n * omega)


def steering_x_freq(omega, array: ArrayConfig, wavelength: float) -> np.ndarray:
    """Horizontal steering vector(s) from spatial frequency; one column per omega."""
    n = np.arange(array.n_x)[:, None]
    return np.exp(1j * 2 * np.pi / wavelength * array.d_x * n * np.atleast_1d(omega)[None, :])


def steering_z(elevation, array: ArrayConfig, wavelength: float) -> np.ndarray:
    n = np.arange(array.n_z)
    return np.exp(1j * 2 * np.pi / wavelength * array.d_z * n * np.sin(elevation))


def array_steering(azimuth, elevation, array: ArrayConfig, wavelength: float) -> np.ndarray:
    """Full steering vector ``a_x kron a_z``."""
    return np.kron(steering_x(azimuth, elevation, array, wavelength),
                   steering_z(elevation, array, wavelength))


def delay_steering(tau, band_plan: BandPlan) -> np.ndarray:
    """Multiband delay steering vector ``d_B(tau) kron d_S(tau)``.

    A scalar ``tau`` gives a vector of length ``S*B``; an array of delays gives
    a matrix with one column per delay.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0):
        raise ValueError("delay must be >= 0")
    f = band_plan.frequency_offsets()
    if tau_arr.ndim == 0:
        return np.exp(-2j * np.pi * f * tau_arr)
    return np.exp(-2j * np.pi * f[:, None] * tau_arr[None, :])


def default_layout(array: ArrayConfig) -> Layout:
    return {
        ArrayKind.URA: Layout.TENSOR3D,
        ArrayKind.ULA: Layout.MATRIX2D,
        ArrayKind.SINGLE: Layout.VECTOR1D,
    }[array.kind]


def noise_generator(seed) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by an int or a tuple of ints."""
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def noiseless_tensor(paths, array: ArrayConfig, band_plan: BandPlan, energy: float,
                     wavelength: float) -> np.ndarray:
    az = np.array([p.azimuth for p in paths])
    el = np.array([p.elevation for p in paths])
    gains = np.sqrt(energy) * np.array([p.gain for p in paths])
    ax = np.exp(1j * 2 * np.pi / wavelength * array.d_x
                * np.arange(array.n_x)[:, None] * spatial_frequency(az, el)[None, :])
    az_ = np.exp(1j * 2 * np.pi / wavelength * array.d_z
                 * np.arange(array.n_z)[:, None] * np.sin(el)[None, :])
    d = delay_steering(np.array([p.delay for p in paths]), band_plan)
    return np.einsum("l,il,jl,kl->ijk", gains, az_, ax, d)


def synthesize(paths, array: ArrayConfig, band_plan: BandPlan, signal: SignalConfig,
               rng_seed=0, layout: Layout | None = None, noise_level: float | None = None,
               wavelength: float | None = None) -> Observation:
    """Synthesize a noisy observation of ``paths``.

    Noise is one circular complex Gaussian of variance ``N_0`` per tensor
    entry, drawn in ``(n_z, n_x, S*B)`` order from a generator keyed by
    ``rng_seed``, so all layouts of the same array share noise. Pass
    ``noise_level=0`` for a noiseless observation.
    """
    paths = list(paths)
    if not paths:
        raise ValueError("path list is empty")
    layout = default_layout(array) if layout is None else Layout(layout)
    if layout is Layout.MATRIX2D and array.n_z != 1:
        raise ValueError("Matrix2D layout requires a horizontal linear array (n_z = 1)")
    if layout is Layout.VECTOR1D and array.n_elements != 1:
        raise ValueError("Vector1D layout requires a single-antenna receiver")
    wavelength = band_plan.wavelength if wavelength is None else wavelength
    es = signal.symbol_energy(band_plan)
    n0 = signal.noise_level if noise_level is None else float(noise_level)
    data = noiseless_tensor(paths, array, band_plan, es, wavelength)
    if n0 > 0:
        rng = noise_generator(rng_seed)
        shape = data.shape
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        data = data + np.sqrt(n0 / 2) * noise
    target = {
        Layout.TENSOR3D: data.shape,
        Layout.MATRIX2D: (array.n_x, band_plan.n_samples),
        Layout.VECTOR1D: (band_plan.n_samples,),
    }[layout]
    return Observation(layout, data.reshape(target), band_plan, array, es, n0, wavelength)
