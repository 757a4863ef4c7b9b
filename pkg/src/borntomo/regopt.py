"""TV-regularized reconstruction: prox machinery, the accelerated driver, baselines.

All three reconstruction methods minimize the same functional

    D(f) + tau * R(f)  over the feasible set,   D(f) = sum_l 1/2 ||y_l - z_l(f)||^2

with R the isotropic total variation; they differ only in the forward model
behind z: the K-layer scattering recursion (``reconstruct_rb``), its K = 1
linearization (``reconstruct_fb``), or a frozen-field linearization refreshed
by full Lippmann-Schwinger solves (``reconstruct_am``).
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autograd import fidelity_and_gradient, fidelity_only
from .errors import DivergenceError, InvalidInputError
from .forward import solve_lippmann_schwinger
from .greenops import apply_sensor_green, apply_sensor_green_adjoint

SNR_CAP_DB = 300.0


@dataclass(frozen=True)
class TVParams:
    """Regularizer weight, prox solver controls, and the feasible set."""

    tau: float = 0.0
    inner_iters: int = 100
    inner_tol: float = 1e-8
    constraint: str = "nonnegative"  # nonnegative | box | unconstrained
    box_lo: float = 0.0
    box_hi: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau >= 0):
            raise InvalidInputError("tau must be finite and >= 0")
        if self.inner_iters < 1:
            raise InvalidInputError("inner_iters must be >= 1")
        if self.constraint not in ("nonnegative", "box", "unconstrained"):
            raise InvalidInputError(f"unknown constraint '{self.constraint}'")
        if self.constraint == "box" and not self.box_lo < self.box_hi:
            raise InvalidInputError("box constraint needs box_lo < box_hi")

    def project(self, x):
        if self.constraint == "nonnegative":
            return np.maximum(x, 0.0)
        if self.constraint == "box":
            return np.clip(x, self.box_lo, self.box_hi)
        return x


def default_tau(y):
    """The shared regularization weight 1e-9 * 1/2 ||y||^2 over all measurements."""
    y = np.asarray(y)
    return 1e-9 * 0.5 * float(np.sum(np.abs(y) ** 2))


def tv_value(f, grid):
    """Isotropic TV: sum over cells of |forward-difference gradient|.

    Replicate (Neumann) boundaries: differences past the last row/column are
    zero, so constant images have zero TV everywhere including edges.
    """
    img = np.asarray(f, dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("tv_value: non-finite input")
    dx = np.zeros_like(img)
    dy = np.zeros_like(img)
    dx[:, :-1] = img[:, 1:] - img[:, :-1]
    dy[:-1, :] = img[1:, :] - img[:-1, :]
    return float(np.sum(np.hypot(dx, dy)))


def _tv_div(p, q):
    """Adjoint pair assembly: L(p, q)_{ij} = p_ij - p_{i-1,j} + q_ij - q_{i,j-1}."""
    out = np.zeros((p.shape[0] + 1, q.shape[1] + 1))
    out[:-1, :] += p
    out[1:, :] -= p
    out[:, :-1] += q
    out[:, 1:] -= q
    return out


def _tv_grad_pair(x):
    """Transpose of _tv_div: p_ij = x_ij - x_{i+1,j}, q_ij = x_ij - x_{i,j+1}."""
    return x[:-1, :] - x[1:, :], x[:, :-1] - x[:, 1:]


def _project_dual(p, q):
    """Project onto the dual unit ball of isotropic TV.

    Interior (i, j) pairs are scaled by their joint magnitude; the strip of p
    in the last column and of q in the last row pair with a structural zero,
    so they are clipped by their own magnitude.
    """
    mag = np.ones((p.shape[0] + 1, q.shape[1] + 1))
    mag[:-1, :-1] = np.maximum(1.0, np.hypot(p[:, :-1], q[:-1, :]))
    mag[:-1, -1] = np.maximum(1.0, np.abs(p[:, -1]))
    mag[-1, :-1] = np.maximum(1.0, np.abs(q[-1, :]))
    return p / mag[:-1, :], q / mag[:, :-1]


def tv_prox(g, weight, params, grid=None, shape=None):
    """Approximate argmin_f 1/2 ||f - g||^2 + weight * TV(f) over the feasible set.

    Dual fast-gradient-projection with FISTA momentum on the dual variables;
    stops at the duality gap target weight * (TV(f) - <f, L(p,q)>) <=
    inner_tol * (1 + primal objective) or after inner_iters iterations.
    """
    if weight < 0 or not math.isfinite(weight):
        raise InvalidInputError("prox weight must be finite and >= 0")
    if shape is None:
        shape = grid.shape
    b = np.asarray(g, dtype=float).reshape(shape)
    if weight == 0.0:
        return params.project(b).ravel()

    ny, nx = shape
    p = np.zeros((ny - 1, nx))
    q = np.zeros((ny, nx - 1))
    rp, rq = p, q
    theta = 1.0
    f_img = params.project(b)
    step = 1.0 / (8.0 * weight)
    for _ in range(params.inner_iters):
        f_img = params.project(b - weight * _tv_div(rp, rq))
        gp, gq = _tv_grad_pair(f_img)
        p_new, q_new = _project_dual(rp + step * gp, rq + step * gq)
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        beta = (theta - 1.0) / theta_new
        rp = p_new + beta * (p_new - p)
        rq = q_new + beta * (q_new - q)
        p, q, theta = p_new, q_new, theta_new

        # duality gap of the denoising problem at the primal point sourced by (p, q)
        f_img = params.project(b - weight * _tv_div(p, q))
        gp_f, gq_f = _tv_grad_pair(f_img)
        tv_primal = _tv_of_pairs(gp_f, gq_f)
        pairing = float(np.sum(p * gp_f) + np.sum(q * gq_f))
        gap = weight * (tv_primal - pairing)
        primal = 0.5 * float(np.sum((f_img - b) ** 2)) + weight * tv_primal
        if gap <= params.inner_tol * (1.0 + primal):
            break
    return f_img.ravel()


def _tv_of_pairs(gp, gq):
    """TV value from the difference pairs produced by _tv_grad_pair."""
    full_p = np.vstack([gp, np.zeros((1, gp.shape[1]))])
    full_q = np.hstack([gq, np.zeros((gq.shape[0], 1))])
    return float(np.sum(np.hypot(full_p, full_q)))


def snr_db(estimate, truth):
    """10 log10(||truth||^2 / ||estimate - truth||^2), capped at 300 dB."""
    estimate = np.asarray(estimate, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    signal = float(np.sum(truth ** 2))
    if signal == 0.0:
        raise InvalidInputError("snr_db: truth vector is identically zero")
    noise = float(np.sum((estimate - truth) ** 2))
    if noise == 0.0:
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * math.log10(signal / noise))


def data_fit(y, z):
    """Relative measurement residual ||y - z||^2 / ||y||^2."""
    y = np.asarray(y)
    z = np.asarray(z)
    denom = float(np.sum(np.abs(y) ** 2))
    if denom == 0.0:
        raise InvalidInputError("data_fit: reference measurements are identically zero")
    return float(np.sum(np.abs(y - z) ** 2)) / denom


@dataclass
class OptimState:
    """Mutable state of the accelerated proximal-gradient loop."""

    iterate: np.ndarray
    companion: np.ndarray   # previous iterate, for the momentum term
    gamma: float
    theta: float = 1.0
    iteration: int = 0
    objective: float = math.inf
    clean_steps: int = 0    # accepted steps since the last backtrack


@dataclass
class ReconstructionReport:
    """Everything a run produces besides the estimate itself."""

    potential: np.ndarray
    method: str
    K: int
    tau: float
    iterations: int
    converged: bool
    initial_data_fit: float
    data_fit_trace: np.ndarray
    objective_trace: np.ndarray
    step_trace: np.ndarray
    snr_db: float | None
    wall_time: float
    extra: dict = field(default_factory=dict)

    def to_json_dict(self, include_timing=True):
        doc = {
            "method": self.method,
            "K": self.K,
            "tau": self.tau,
            "iterations": self.iterations,
            "converged": self.converged,
            "initial_data_fit": self.initial_data_fit,
            "data_fit_trace": [float(v) for v in self.data_fit_trace],
            "objective_trace": [float(v) for v in self.objective_trace],
            "step_trace": [float(v) for v in self.step_trace],
            "snr_db": None if self.snr_db is None else float(self.snr_db),
        }
        doc.update(self.extra)
        if include_timing:
            doc["wall_time_s"] = self.wall_time
        return doc


def linear_model_lipschitz(H, fields, iters=30, seed=0):
    """Power-iteration estimate of the squared norm of f -> H(fields * f).

    This is the Lipschitz constant of the data-fidelity gradient of the
    single-scattering model, used to seed the step size.
    """
    n = fields.shape[-1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        z = apply_sensor_green(H, fields * v)
        back = apply_sensor_green_adjoint(H, z)
        tv = (np.conj(fields) * back).real
        if tv.ndim > 1:
            tv = tv.reshape(-1, n).sum(axis=0)
        norm = np.linalg.norm(tv)
        if norm == 0.0:
            return 0.0
        estimate = norm
        v = tv / norm
    return float(estimate)


_MAX_HALVINGS = 60
_GROW_AFTER = 5
_GROW_FACTOR = 1.2


def _backtracked_step(G, H, fields, y_rows, K, params, grid_shape, anchor, state):
    """One prox-gradient step from ``anchor`` with quadratic-upper-bound search.

    Returns (candidate, its fidelity, number of halvings) and updates
    state.gamma in place.
    """
    res = fidelity_and_gradient(G, H, anchor, fields, y_rows, K)
    if not (np.isfinite(res.fidelity) and np.all(np.isfinite(res.grad))):
        raise DivergenceError("non-finite fidelity or gradient",
                              last_iterate=state.iterate.copy(), iterations=state.iteration)
    slack = 1e-12 * (1.0 + abs(res.fidelity))
    halvings = 0
    while True:
        cand = tv_prox(anchor - state.gamma * res.grad, state.gamma * params.tau,
                       params, shape=grid_shape)
        d_cand, _ = fidelity_only(G, H, cand, fields, y_rows, K)
        delta = cand - anchor
        bound = res.fidelity + float(res.grad @ delta) + float(delta @ delta) / (2.0 * state.gamma)
        if d_cand <= bound + slack or not np.isfinite(d_cand):
            break
        state.gamma *= 0.5
        halvings += 1
        if halvings > _MAX_HALVINGS:
            break
    return cand, d_cand, halvings


def _drive(operators, measurements, K, params, max_iter, stop_tol, method,
           f_true=None, fields=None, f0=None, gamma0=None):
    """Shared accelerated proximal-gradient loop for the RB/FB/AM-inner problems.

    Monotone variant: if the extrapolated step raises the objective, momentum
    is reset and the step re-anchored at the previous iterate, which the
    quadratic-upper-bound search makes non-increasing; if even that step
    cannot decrease the objective the loop stops (progress is below prox
    accuracy).
    """
    grid = operators.scene.grid
    G, H = operators.domain_green, operators.sensor_green
    if fields is None:
        fields = operators.incident
    y_rows = np.ascontiguousarray(measurements.values.T)
    y_energy = float(np.sum(np.abs(y_rows) ** 2))
    n = grid.n_cells

    if gamma0 is None:
        lip = linear_model_lipschitz(H, fields)
        gamma0 = 1.0 / lip if lip > 0 else 1.0
    state = OptimState(
        iterate=np.zeros(n) if f0 is None else np.asarray(f0, dtype=float).copy(),
        companion=None, gamma=gamma0,
    )
    state.companion = state.iterate.copy()
    d0, _ = fidelity_only(G, H, state.iterate, fields, y_rows, K)
    state.objective = d0 + params.tau * tv_value(state.iterate, grid)
    if not np.isfinite(state.objective):
        raise DivergenceError(f"{method}: non-finite objective at the start",
                              last_iterate=state.iterate, iterations=0)
    initial_fit = 2.0 * d0 / y_energy if y_energy > 0 else 0.0

    fit_trace, obj_trace, step_trace = [], [], []
    start = time.perf_counter()
    converged = False
    for t in range(1, max_iter + 1):
        prev = state.iterate
        mono_slack = 1e-12 * max(1.0, abs(state.objective))

        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.theta ** 2))
        beta = (state.theta - 1.0) / theta_new
        extrapolated = prev + beta * (prev - state.companion)

        cand, d_cand, halvings = _backtracked_step(
            G, H, fields, y_rows, K, params, grid.shape, extrapolated, state)
        obj_cand = d_cand + params.tau * tv_value(cand, grid)

        if obj_cand > state.objective + mono_slack:
            # momentum overshoot: restart from the previous iterate
            theta_new = 1.0
            cand, d_cand, extra_halvings = _backtracked_step(
                G, H, fields, y_rows, K, params, grid.shape, prev, state)
            halvings += extra_halvings
            obj_cand = d_cand + params.tau * tv_value(cand, grid)
            if obj_cand > state.objective + mono_slack:
                converged = True  # no descent available at prox accuracy
                break

        if not np.isfinite(obj_cand):
            raise DivergenceError(
                f"{method}: non-finite objective at iteration {t}",
                last_iterate=prev, iterations=t - 1)

        state.companion = prev
        state.iterate = cand
        state.theta = theta_new
        state.objective = obj_cand
        state.iteration = t
        if halvings == 0:
            state.clean_steps += 1
            if state.clean_steps >= _GROW_AFTER:
                state.gamma *= _GROW_FACTOR
                state.clean_steps = 0
        else:
            state.clean_steps = 0

        fit_trace.append(2.0 * d_cand / y_energy if y_energy > 0 else 0.0)
        obj_trace.append(obj_cand)
        step_trace.append(state.gamma)

        change = np.linalg.norm(cand - prev)
        scale = np.linalg.norm(prev)
        if change <= stop_tol * max(scale, 1e-30):
            converged = True
            break

    wall = time.perf_counter() - start
    return ReconstructionReport(
        potential=state.iterate,
        method=method,
        K=K,
        tau=params.tau,
        iterations=state.iteration,
        converged=converged,
        initial_data_fit=initial_fit,
        data_fit_trace=np.asarray(fit_trace),
        objective_trace=np.asarray(obj_trace),
        step_trace=np.asarray(step_trace),
        snr_db=None if f_true is None else snr_db(state.iterate, f_true),
        wall_time=wall,
    )


def reconstruct_rb(operators, measurements, K, params, max_iter=500, stop_tol=1e-6,
                   f_true=None):
    """Recursive-Born reconstruction: K scattering layers, TV, zero start."""
    if K < 1:
        raise InvalidInputError("reconstruct_rb needs K >= 1")
    return _drive(operators, measurements, K, params, max_iter, stop_tol,
                  method="rb", f_true=f_true)


def reconstruct_fb(operators, measurements, params, max_iter=500, stop_tol=1e-6,
                   f_true=None):
    """First-Born baseline: the identical driver pinned at K = 1."""
    report = _drive(operators, measurements, 1, params, max_iter, stop_tol,
                    method="fb", f_true=f_true)
    return report


def reconstruct_am(operators, measurements, params, outer_iters=20, inner_iters=50,
                   max_iter=None, stop_tol=1e-6, f_true=None, ls_tol=1e-10,
                   ls_max_iter=2000):
    """Alternating-minimization baseline.

    Each outer pass (a) solves the full Lippmann-Schwinger equation for the
    internal fields at the current potential, then (b) runs TV-regularized
    accelerated proximal-gradient steps on the now-linear measurement model
    with those fields frozen.
    """
    if outer_iters < 1:
        raise InvalidInputError("reconstruct_am needs outer_iters >= 1")
    if max_iter is not None:
        outer_iters = max_iter
    G, H = operators.domain_green, operators.sensor_green
    grid = operators.scene.grid
    y_rows = measurements.values.T
    y_energy = float(np.sum(np.abs(y_rows) ** 2))

    f = np.zeros(grid.n_cells)
    fit_trace, obj_trace, step_trace = [], [], []
    initial_fit = 1.0 if y_energy > 0 else 0.0
    start = time.perf_counter()
    converged = False
    completed = 0
    for outer in range(1, outer_iters + 1):
        fields = np.stack([
            solve_lippmann_schwinger(G, H, f, u_in, tol=ls_tol, max_iter=ls_max_iter).internal_field
            for u_in in operators.incident
        ])
        inner = _drive(operators, measurements, 1, params,
                       max_iter=inner_iters, stop_tol=stop_tol,
                       method="am-inner", fields=fields, f0=f)
        f_new = inner.potential
        d_lin, _ = fidelity_only(G, H, f_new, fields, y_rows, 1)
        fit_trace.append(2.0 * d_lin / y_energy if y_energy > 0 else 0.0)
        obj_trace.append(d_lin + params.tau * tv_value(f_new, grid))
        step_trace.append(inner.step_trace[-1] if len(inner.step_trace) else 0.0)
        completed = outer
        change = np.linalg.norm(f_new - f)
        f = f_new
        if change <= stop_tol * max(np.linalg.norm(f), 1e-30):
            converged = True
            break

    wall = time.perf_counter() - start
    return ReconstructionReport(
        potential=f,
        method="am",
        K=0,
        tau=params.tau,
        iterations=completed,
        converged=converged,
        initial_data_fit=initial_fit,
        data_fit_trace=np.asarray(fit_trace),
        objective_trace=np.asarray(obj_trace),
        step_trace=np.asarray(step_trace),
        snr_db=None if f_true is None else snr_db(f, f_true),
        wall_time=wall,
        extra={"outer_iterations": completed, "inner_iterations": inner_iters},
    )
