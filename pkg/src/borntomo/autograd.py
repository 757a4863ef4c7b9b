"""Reverse-mode gradient of the data-fidelity term through the scattering layers.

The forward recursion is differentiated exactly: with r = z - y,

    g <- H^H r  elementwise-times  conj(u^{last})
    v <- H^H r  elementwise-times  f
    then, walking layers last-1 .. 0:
        g += (G^H v) * conj(u^k);   v  = (G^H v) * f

and the gradient of 1/2 ||y - z||^2 with respect to the real potential is
Re(g) at layer 0. The Jacobian of z is never formed; only its product with
the residual is evaluated, so one gradient costs the same O(K N log N) as
the forward pass.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .forward import recursive_born
from .greenops import apply_domain_green_adjoint, apply_sensor_green_adjoint


@dataclass(frozen=True)
class GradientResult:
    """Gradient, fidelity value 1/2 ||y - z||^2, and the model prediction."""

    grad: np.ndarray        # real (N,)
    fidelity: float
    prediction: np.ndarray  # (..., M), matching the incident-field batch shape


def fidelity_and_gradient(G, H, f, u_in, y, K):
    """Fidelity and its exact gradient for one or more transmissions.

    ``u_in`` of shape (N,) with ``y`` of shape (M,) treats a single
    transmission; ``u_in`` (L, N) with ``y`` (L, M) sums fidelity and
    gradient over rows.
    """
    u_in = np.asarray(u_in, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if y.shape[:-1] != u_in.shape[:-1]:
        raise DimensionError(f"measurement batch {y.shape[:-1]} != incident batch {u_in.shape[:-1]}")
    trace = recursive_born(G, H, f, u_in, K)
    if y.shape[-1] != trace.prediction.shape[-1]:
        raise DimensionError(f"got {y.shape[-1]} measurements per transmission, expected {trace.prediction.shape[-1]}")
    residual = trace.prediction - y
    fidelity = 0.5 * float(np.sum(np.abs(residual) ** 2))

    f_arr = np.asarray(f, dtype=float).ravel()
    hr = apply_sensor_green_adjoint(H, residual)
    g = hr * np.conj(trace.layers[K - 1])
    v = hr * f_arr
    for k in range(K - 2, -1, -1):
        gv = apply_domain_green_adjoint(G, v)
        g = g + gv * np.conj(trace.layers[k])
        if k > 0:
            v = gv * f_arr
    grad = g.real
    if grad.ndim > 1:
        grad = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
    return GradientResult(grad=grad, fidelity=fidelity, prediction=trace.prediction)


def fidelity_and_gradient_multi(operators, f, measurements, K):
    """Sum of per-transmission fidelities and gradients for a whole scene.

    ``measurements`` holds one column per transmission; transmissions are
    processed as one batch, so the reduction order is fixed and deterministic.
    """
    y = measurements.values
    if y.shape[1] != operators.incident.shape[0]:
        raise DimensionError(
            f"measurement set has {y.shape[1]} transmissions, scene has {operators.incident.shape[0]}"
        )
    return fidelity_and_gradient(operators.domain_green, operators.sensor_green,
                                 f, operators.incident, y.T, K)


def fidelity_only(G, H, f, u_in, y, K):
    """1/2 ||y - z||^2 without the backward pass (for step-size searches)."""
    trace = recursive_born(G, H, f, u_in, K)
    return 0.5 * float(np.sum(np.abs(trace.prediction - np.asarray(y, dtype=complex)) ** 2)), trace.prediction
