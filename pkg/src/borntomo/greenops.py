"""Discretized Green's operators for the homogeneous 2D Helmholtz background.

Three pieces of machinery:

* the incident field radiated by a line source, sampled at cell centers;
* the domain operator G (cell-to-cell), a convolution applied via circulant
  embedding on a (2 ny, 2 nx) zero-padded grid;
* the sensor operator H (cell-to-sensor), kept dense.

Discretization is midpoint rule on pulse basis / delta testing: off-diagonal
entries are g(offset) * cell_area with g(x) = (i/4) H0^(2)(kb |x|). The
offset-(0, 0) entry cannot be midpoint-sampled (log singularity), so it is the
exact integral of g over one cell, computed by adaptive quadrature over the
polar angle after integrating the radial part in closed form:
integral_0^R H0^(2)(kb r) r dr = [kb R H1^(2)(kb R) - 2i/pi] / kb^2.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DimensionError, GeometryError
from .specfun import hankel2_0, hankel2_1


def green_function(medium, distances):
    """Free-space kernel g = (i/4) H0^(2)(kb r) for positive distances."""
    return 0.25j * hankel2_0(medium.kb * np.asarray(distances, dtype=float))


def incident_field(scene, source_index):
    """Field of source ``source_index`` at all cell centers: A (i/4) H0^(2)(kb r)."""
    if not 0 <= source_index < scene.sources.count:
        raise DimensionError(f"source_index {source_index} out of range [0, {scene.sources.count})")
    pos = scene.sources.positions[source_index]
    centers = scene.grid.cell_centers()
    dist = np.hypot(centers[:, 0] - pos[0], centers[:, 1] - pos[1])
    if np.any(dist <= 0.0):
        raise GeometryError("source coincides with a grid cell center")
    return scene.sources.amplitude * green_function(scene.medium, dist)


def incident_fields(scene):
    """(L, N) stack of incident fields, one row per source."""
    return np.stack([incident_field(scene, l) for l in range(scene.sources.count)])


def cell_self_term(medium, step_x, step_y):
    """Integral of g over one step_x * step_y cell centered on the singularity.

    Reduced to a 1D angular integral with the radial integral in closed form;
    the quadrature gets a breakpoint where the cell boundary switches edges.
    """
    hx, hy = 0.5 * step_x, 0.5 * step_y
    kb = medium.kb
    split = math.atan2(hy, hx)

    def radial(theta):
        r_edge = hx / math.cos(theta) if theta <= split else hy / math.sin(theta)
        return kb * r_edge * hankel2_1(kb * r_edge)

    re, _ = quad(lambda t: radial(t).real, 0.0, 0.5 * math.pi, points=[split],
                 epsabs=1e-13, epsrel=1e-13, limit=200)
    im, _ = quad(lambda t: radial(t).imag, 0.0, 0.5 * math.pi, points=[split],
                 epsabs=1e-13, epsrel=1e-13, limit=200)
    angular = re + 1j * im
    # full cell = 4 quadrants; (i/4) prefactor of g folded in
    return 4.0 * 0.25j * (angular - 1j * 0.5 * math.pi * (2.0 / math.pi)) / kb ** 2


@dataclass(frozen=True)
class DomainGreen:
    """Cell-to-cell Green's operator, applied by FFT on the embedded grid."""

    shape: tuple          # (count_y, count_x)
    kernel: np.ndarray    # (2 ny, 2 nx) circulant-embedded kernel, area-weighted
    spectrum: np.ndarray      # fft2(kernel)
    spectrum_adj: np.ndarray  # fft2(conj(kernel))
    self_term: complex

    @property
    def n_cells(self):
        return self.shape[0] * self.shape[1]


def build_domain_green(scene):
    """Assemble the convolution kernel and its spectral caches for the scene grid."""
    grid = scene.grid
    ny, nx = grid.count_y, grid.count_x
    # embedded offsets: index p encodes dy = p for p < ny else p - 2 ny
    dy = np.arange(2 * ny)
    dx = np.arange(2 * nx)
    dy = np.where(dy < ny, dy, dy - 2 * ny) * grid.step_y
    dx = np.where(dx < nx, dx, dx - 2 * nx) * grid.step_x
    r = np.hypot(dx[None, :], dy[:, None])
    kernel = np.empty((2 * ny, 2 * nx), dtype=complex)
    nonzero = r > 0
    kernel[nonzero] = green_function(scene.medium, r[nonzero]) * grid.cell_area
    kernel[0, 0] = cell_self_term(scene.medium, grid.step_x, grid.step_y)
    return DomainGreen(
        shape=(ny, nx),
        kernel=kernel,
        spectrum=np.fft.fft2(kernel),
        spectrum_adj=np.fft.fft2(np.conj(kernel)),
        self_term=complex(kernel[0, 0]),
    )


def _convolve(shape, spectrum, w):
    ny, nx = shape
    w = np.asarray(w)
    if w.shape[-1] != ny * nx:
        raise DimensionError(f"field length {w.shape[-1]} != grid size {ny * nx}")
    batch = w.shape[:-1]
    padded = np.zeros(batch + (2 * ny, 2 * nx), dtype=complex)
    padded[..., :ny, :nx] = w.reshape(batch + (ny, nx))
    out = np.fft.ifft2(np.fft.fft2(padded) * spectrum)
    return np.ascontiguousarray(out[..., :ny, :nx]).reshape(batch + (ny * nx,))


def apply_domain_green(G, w):
    """G @ w by zero-padded FFT convolution; accepts (..., N) batches."""
    return _convolve(G.shape, G.spectrum, w)


def apply_domain_green_adjoint(G, w):
    """G^H @ w; since G^T = G this is convolution with the conjugated kernel."""
    return _convolve(G.shape, G.spectrum_adj, w)


@dataclass(frozen=True)
class SensorGreen:
    """Dense cell-to-sensor Green's operator (M x N)."""

    matrix: np.ndarray

    @property
    def n_sensors(self):
        return self.matrix.shape[0]

    @property
    def n_cells(self):
        return self.matrix.shape[1]


def build_sensor_green(scene):
    centers = scene.grid.cell_centers()
    sensors = scene.sensors.positions
    dist = np.hypot(
        sensors[:, 0][:, None] - centers[:, 0][None, :],
        sensors[:, 1][:, None] - centers[:, 1][None, :],
    )
    if np.any(dist <= 0.0):
        raise GeometryError("sensor coincides with a grid cell center")
    return SensorGreen(green_function(scene.medium, dist) * scene.grid.cell_area)


def apply_sensor_green(H, w):
    """H @ w, (..., N) -> (..., M)."""
    w = np.asarray(w)
    if w.shape[-1] != H.n_cells:
        raise DimensionError(f"field length {w.shape[-1]} != grid size {H.n_cells}")
    return w @ H.matrix.T


def apply_sensor_green_adjoint(H, r):
    """H^H @ r, (..., M) -> (..., N)."""
    r = np.asarray(r)
    if r.shape[-1] != H.n_sensors:
        raise DimensionError(f"residual length {r.shape[-1]} != sensor count {H.n_sensors}")
    return r @ np.conj(H.matrix)


@dataclass(frozen=True)
class Operators:
    """Everything the forward/inverse passes need, built once per scene."""

    scene: object
    domain_green: DomainGreen
    sensor_green: SensorGreen
    incident: np.ndarray  # (L, N)


def build_operators(scene):
    return Operators(
        scene=scene,
        domain_green=build_domain_green(scene),
        sensor_green=build_sensor_green(scene),
        incident=incident_fields(scene),
    )
