"""Forward scattering models.

Two predictors for the sensor-domain field share the same operators:

* ``recursive_born`` -- the K-layer scattering recursion. Layer 0 is the
  incident field and each further layer adds one scattering event, so K = 1
  is exactly the single-scattering (first Born) model. All K layers are kept
  for the reverse-mode gradient pass.
* ``solve_lippmann_schwinger`` -- the full implicit model (I - G diag f) u =
  u_in solved by a Krylov method; this is the ground-truth data generator.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab, gmres

from .errors import ConvergenceError, DimensionError, InvalidInputError
from .greenops import (
    apply_domain_green,
    apply_sensor_green,
)


def _check_potential(f):
    f = np.asarray(f, dtype=float).ravel()
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("scattering potential must be finite")
    return f


@dataclass(frozen=True)
class BornTrace:
    """Layer fields u^0 .. u^{K-1} plus the sensor-domain prediction."""

    layers: np.ndarray      # (K, ..., N); layers[0] is the incident field
    prediction: np.ndarray  # (..., M)

    @property
    def depth(self):
        return self.layers.shape[0]


def recursive_born(G, H, f, u_in, K):
    """K-layer scattering recursion u^k = u^0 + G(u^{k-1} * f), z = H(u^{K-1} * f).

    ``u_in`` may carry leading batch axes (e.g. one row per transmission);
    the recursion is applied to every row at once. Cost is O(K N log N) per row.
    """
    if K < 1:
        raise InvalidInputError(f"layer count K must be >= 1, got {K}")
    f = _check_potential(f)
    u_in = np.asarray(u_in, dtype=complex)
    if u_in.shape[-1] != f.shape[0]:
        raise DimensionError(f"incident field length {u_in.shape[-1]} != potential length {f.shape[0]}")
    layers = np.empty((K,) + u_in.shape, dtype=complex)
    layers[0] = u_in
    for k in range(1, K):
        layers[k] = u_in + apply_domain_green(G, layers[k - 1] * f)
    prediction = apply_sensor_green(H, layers[K - 1] * f)
    return BornTrace(layers=layers, prediction=prediction)


@dataclass(frozen=True)
class LSSolution:
    """Converged internal field with its sensor prediction and residual."""

    internal_field: np.ndarray
    prediction: np.ndarray
    residual_norm: float
    iterations: int


def solve_lippmann_schwinger(G, H, f, u_in, tol=1e-10, max_iter=2000):
    """Solve (I - G diag f) u = u_in to relative residual <= tol.

    BiCGSTAB first (transpose-free, suits the complex non-Hermitian system),
    with a GMRES(50) fallback before giving up.
    """
    if not tol > 0:
        raise InvalidInputError("tol must be > 0")
    f = _check_potential(f)
    u_in = np.asarray(u_in, dtype=complex).ravel()
    n = f.shape[0]
    if u_in.shape[0] != n:
        raise DimensionError(f"incident field length {u_in.shape[0]} != potential length {n}")
    rhs_norm = np.linalg.norm(u_in)
    if rhs_norm == 0.0:
        zero = np.zeros(n, dtype=complex)
        return LSSolution(zero, apply_sensor_green(H, zero * f), 0.0, 0)

    matvec_count = [0]

    def system(v):
        matvec_count[0] += 1
        return v - apply_domain_green(G, f * v)

    op = LinearOperator((n, n), matvec=system, dtype=complex)

    def residual(u):
        return np.linalg.norm(system(u) - u_in) / rhs_norm

    u, _ = bicgstab(op, u_in, x0=u_in.copy(), rtol=tol, atol=0.0, maxiter=max_iter)
    res = residual(u)
    if not res <= tol:
        restart = min(50, max_iter)
        u_g, _ = gmres(op, u_in, x0=u_in.copy(), rtol=tol, atol=0.0,
                       restart=restart, maxiter=max(1, max_iter // restart))
        res_g = residual(u_g)
        if res_g < res:
            u, res = u_g, res_g
    if not res <= tol:
        raise ConvergenceError(
            f"Lippmann-Schwinger solve stalled at relative residual {res:.3e} (tol {tol:.1e})",
            residual=res, iterations=matvec_count[0],
        )
    return LSSolution(
        internal_field=u,
        prediction=apply_sensor_green(H, u * f),
        residual_norm=res,
        iterations=matvec_count[0],
    )


@dataclass(frozen=True)
class MeasurementSet:
    """Sensor readings, one column per transmission (M x L)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.values.ndim != 2:
            raise DimensionError("measurements must be a 2D (sensors x transmissions) array")

    @property
    def n_sensors(self):
        return self.values.shape[0]

    @property
    def n_transmissions(self):
        return self.values.shape[1]


def simulate_measurements(operators, f, tol=1e-10, max_iter=2000):
    """Exact (Lippmann-Schwinger) data for every transmission of a scene.

    Returns the measurement set plus per-transmission relative residuals.
    """
    G, H = operators.domain_green, operators.sensor_green
    columns = []
    residuals = []
    for u_in in operators.incident:
        sol = solve_lippmann_schwinger(G, H, f, u_in, tol=tol, max_iter=max_iter)
        columns.append(sol.prediction)
        residuals.append(sol.residual_norm)
    return MeasurementSet(np.column_stack(columns)), residuals


def estimate_contraction(G, f, iters=30):
    """Power-iteration estimate of the spectral radius of G diag(f).

    A value below one predicts convergence of the scattering series.
    """
    if iters < 10:
        raise InvalidInputError("need at least 10 power iterations")
    f = _check_potential(f)
    rng = np.random.default_rng(12345)
    w = rng.standard_normal(f.shape[0]) + 1j * rng.standard_normal(f.shape[0])
    w /= np.linalg.norm(w)
    estimate = 0.0
    for _ in range(iters):
        w = apply_domain_green(G, f * w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        estimate = norm
        w /= norm
    return float(estimate)
