"""Physical experiment definition: grid, background medium, sources, sensors, phantoms.

All lengths are centimeters. The imaging domain Omega is a rectangle centered
at the origin; field vectors are flattened row-major over cells with
``n = iy * count_x + ix`` (shape ``(count_y, count_x)`` when viewed as an image).
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, InvalidInputError


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell grid covering the centered domain Omega.

    Cell centers sit at ((ix + 1/2) * step_x - extent_x / 2,
    (iy + 1/2) * step_y - extent_y / 2).
    """

    extent_x: float
    extent_y: float
    step_x: float
    step_y: float
    count_x: int
    count_y: int

    def __post_init__(self):
        for name in ("extent_x", "extent_y", "step_x", "step_y"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInputError(f"Grid2D.{name} must be finite and > 0")
        for name in ("count_x", "count_y"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"Grid2D.{name} must be >= 1")
        for axis in ("x", "y"):
            extent = getattr(self, f"extent_{axis}")
            step = getattr(self, f"step_{axis}")
            count = getattr(self, f"count_{axis}")
            if abs(count * step - extent) > 1e-9 * extent:
                raise InvalidInputError(
                    f"Grid2D: count_{axis} * step_{axis} = {count * step} != extent_{axis} = {extent}"
                )

    @classmethod
    def from_extent(cls, extent_x, extent_y, step_x, step_y):
        """Build a grid from extents and steps; extent/step must be integral."""
        counts = []
        for extent, step, axis in ((extent_x, step_x, "x"), (extent_y, step_y, "y")):
            ratio = extent / step
            count = round(ratio)
            if count < 1 or abs(ratio - count) > 1e-9 * max(1.0, ratio):
                raise InvalidInputError(f"extent_{axis}/step_{axis} = {ratio} is not a positive integer")
            counts.append(count)
        return cls(extent_x, extent_y, step_x, step_y, counts[0], counts[1])

    @property
    def n_cells(self):
        return self.count_x * self.count_y

    @property
    def cell_area(self):
        return self.step_x * self.step_y

    @property
    def half_diagonal(self):
        return 0.5 * math.hypot(self.extent_x, self.extent_y)

    @property
    def shape(self):
        """Image shape (rows, cols) = (count_y, count_x)."""
        return (self.count_y, self.count_x)

    def cell_centers(self):
        """(N, 2) array of cell-center coordinates, row-major over (iy, ix)."""
        xs = (np.arange(self.count_x) + 0.5) * self.step_x - 0.5 * self.extent_x
        ys = (np.arange(self.count_y) + 0.5) * self.step_y - 0.5 * self.extent_y
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def refined(self, factor=2):
        """Same domain at ``factor x`` finer sampling (used for oracle data)."""
        return Grid2D(
            self.extent_x, self.extent_y,
            self.step_x / factor, self.step_y / factor,
            self.count_x * factor, self.count_y * factor,
        )

    def contains(self, points):
        """Boolean mask: which points lie inside the closed rectangle Omega."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (np.abs(pts[:, 0]) <= 0.5 * self.extent_x) & (np.abs(pts[:, 1]) <= 0.5 * self.extent_y)


@dataclass(frozen=True)
class Medium:
    """Homogeneous background: relative permittivity and operating wavelength (cm)."""

    epsilon_b: float
    wavelength: float

    def __post_init__(self):
        if not (math.isfinite(self.epsilon_b) and self.epsilon_b > 0):
            raise InvalidInputError("Medium.epsilon_b must be finite and > 0")
        if not (math.isfinite(self.wavelength) and self.wavelength > 0):
            raise InvalidInputError("Medium.wavelength must be finite and > 0")

    @property
    def k0(self):
        """Free-space wavenumber 2*pi/wavelength."""
        return 2.0 * math.pi / self.wavelength

    @property
    def kb(self):
        """Background wavenumber k0 * sqrt(epsilon_b)."""
        return self.k0 * math.sqrt(self.epsilon_b)


@dataclass(frozen=True)
class SourceSet:
    """Line-source positions with a common amplitude."""

    positions: np.ndarray  # (L, 2)
    amplitude: float = 1.0
    radius: float | None = None  # set when built by circular_layout

    def __post_init__(self):
        object.__setattr__(self, "positions", np.atleast_2d(np.asarray(self.positions, dtype=float)))
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise InvalidInputError("SourceSet.positions must be (L, 2)")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidInputError("SourceSet.positions must be finite")
        if not (math.isfinite(self.amplitude) and self.amplitude != 0):
            raise InvalidInputError("SourceSet.amplitude must be finite and nonzero")

    @property
    def count(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class SensorArray:
    """Sensor positions in the measurement region Gamma."""

    positions: np.ndarray  # (M, 2)
    radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "positions", np.atleast_2d(np.asarray(self.positions, dtype=float)))
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise InvalidInputError("SensorArray.positions must be (M, 2)")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidInputError("SensorArray.positions must be finite")

    @property
    def count(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class ScatteringPotential:
    """Real contrast vector f = kb^2 (eps - eps_b) on the grid, units cm^-2."""

    values: np.ndarray  # (N,)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("ScatteringPotential values must be finite")


@dataclass(frozen=True)
class Scene:
    """Complete experiment: grid + medium + sources + sensors."""

    grid: Grid2D
    medium: Medium
    sources: SourceSet
    sensors: SensorArray

    def __post_init__(self):
        for kind, pos in (("source", self.sources.positions), ("sensor", self.sensors.positions)):
            inside = self.grid.contains(pos)
            if np.any(inside):
                raise GeometryError(f"{kind} positions lie inside the imaging domain")

    def refined(self, factor=2):
        """Same physics on a finer grid (finer Omega sampling only)."""
        return Scene(self.grid.refined(factor), self.medium, self.sources, self.sensors)

    def to_json_dict(self):
        if self.sources.radius is None or self.sensors.radius is None:
            raise InvalidInputError("only circular-layout scenes serialize to JSON")
        return {
            "grid": {
                "extent_x": self.grid.extent_x,
                "extent_y": self.grid.extent_y,
                "step_x": self.grid.step_x,
                "step_y": self.grid.step_y,
            },
            "medium": {
                "epsilon_b": self.medium.epsilon_b,
                "wavelength": self.medium.wavelength,
            },
            "sources": {
                "radius": self.sources.radius,
                "count": self.sources.count,
                "amplitude": self.sources.amplitude,
            },
            "sensors": {
                "radius": self.sensors.radius,
                "count": self.sensors.count,
            },
        }

    @classmethod
    def from_json_dict(cls, doc):
        try:
            grid = Grid2D.from_extent(
                doc["grid"]["extent_x"], doc["grid"]["extent_y"],
                doc["grid"]["step_x"], doc["grid"]["step_y"],
            )
            medium = Medium(doc["medium"]["epsilon_b"], doc["medium"]["wavelength"])
            src_doc, sen_doc = doc["sources"], doc["sensors"]
        except KeyError as exc:
            raise InvalidInputError(f"scene JSON missing key: {exc}") from exc
        sources, _ = circular_layout(src_doc["radius"], src_doc["count"], 1,
                                     amplitude=src_doc.get("amplitude", 1.0))
        _, sensors = circular_layout(sen_doc["radius"], 1, sen_doc["count"])
        return cls(grid, medium, sources, sensors)

    def canonical_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def scene_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def epsilon_to_potential(eps_map, medium):
    """Map a permittivity map to the scattering potential kb^2 (eps - eps_b).

    The opposite sign convention (eps_b - eps) would make the potential
    negative for any object denser than the background, clashing with the
    nonnegativity constraint used in reconstruction; see README notes.
    """
    eps = np.asarray(eps_map, dtype=float).ravel()
    if not np.all(np.isfinite(eps)) or np.any(eps <= 0):
        raise InvalidInputError("permittivity map must be finite and > 0")
    kb2 = medium.kb ** 2
    return ScatteringPotential(kb2 * (eps - medium.epsilon_b))


def potential_to_epsilon(potential, medium):
    """Inverse of epsilon_to_potential."""
    values = potential.values if isinstance(potential, ScatteringPotential) else np.asarray(potential, float)
    return medium.epsilon_b + values / medium.kb ** 2


# Modified Shepp-Logan: (intensity, semi_axis_x, semi_axis_y, x0, y0, angle_deg)
# in canonical [-1, 1]^2 coordinates; region values are sums of overlapping
# intensities and land in [0, 1].
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)

# Physical phantom footprint (cm): outer ellipse spans 82 x 112.
PHANTOM_WIDTH = 82.0
PHANTOM_HEIGHT = 112.0


def shepp_logan_raw(grid):
    """Unit-normalized phantom image on the grid, flattened; max value is 1."""
    if grid.extent_x < PHANTOM_WIDTH - 1e-9 or grid.extent_y < PHANTOM_HEIGHT - 1e-9:
        raise GeometryError(
            f"phantom footprint {PHANTOM_WIDTH} x {PHANTOM_HEIGHT} cm exceeds the "
            f"{grid.extent_x} x {grid.extent_y} cm domain"
        )
    centers = grid.cell_centers()
    # canonical coordinates: outer ellipse semi-axes (0.69, 0.92) -> (41, 56) cm
    u = centers[:, 0] * (2.0 * 0.69 / PHANTOM_WIDTH)
    v = centers[:, 1] * (2.0 * 0.92 / PHANTOM_HEIGHT)
    img = np.zeros(grid.n_cells)
    for intensity, a, b, x0, y0, angle_deg in SHEPP_LOGAN_ELLIPSES:
        phi = math.radians(angle_deg)
        du, dv = u - x0, v - y0
        major = (du * math.cos(phi) + dv * math.sin(phi)) / a
        minor = (dv * math.cos(phi) - du * math.sin(phi)) / b
        img[major * major + minor * minor <= 1.0] += intensity
    # region sums are nonnegative by construction; clear float-add residue
    return np.maximum(img, 0.0)


def shepp_logan(grid, medium, contrast):
    """Shepp-Logan scattering potential with peak permittivity eps_b * (1 + contrast).

    The raw phantom is scaled so max(f) = kb^2 * eps_b * contrast exactly,
    at any grid resolution.
    """
    if not (math.isfinite(contrast) and contrast >= 0):
        raise InvalidInputError("contrast must be finite and >= 0")
    raw = shepp_logan_raw(grid)
    peak = medium.kb ** 2 * medium.epsilon_b * contrast
    return ScatteringPotential(raw * (peak / raw.max()))


def circular_layout(radius, num_sources, num_sensors, amplitude=1.0, grid=None):
    """Sources at angles 2*pi*l/L and sensors at 2*pi*m/M on a common circle.

    If a grid is supplied, the radius must clear the domain's half-diagonal so
    every point is strictly outside Omega.
    """
    if not (math.isfinite(radius) and radius > 0):
        raise InvalidInputError("radius must be finite and > 0")
    if num_sources < 1 or num_sensors < 1:
        raise InvalidInputError("source and sensor counts must be >= 1")
    if grid is not None and radius <= grid.half_diagonal:
        raise GeometryError(
            f"circle radius {radius} cm does not clear the domain half-diagonal {grid.half_diagonal:.3f} cm"
        )

    def ring(count):
        angles = 2.0 * np.pi * np.arange(count) / count
        return radius * np.column_stack([np.cos(angles), np.sin(angles)])

    sources = SourceSet(ring(num_sources), amplitude=amplitude, radius=radius)
    sensors = SensorArray(ring(num_sensors), radius=radius)
    return sources, sensors
