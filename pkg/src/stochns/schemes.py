"""
Time-stepping schemes for the stochastic Navier-Stokes equations.

Three one-step maps are provided:

* fully implicit Euler:   u_k - u_{k-1} + h [nu A u_k + B(u_k, u_k)] = G(u_{k-1}) dW_k
* semi-implicit Euler:    v_k - v_{k-1} + h [nu A v_k + B(v_{k-1}, v_k)] = G(v_{k-1}) dW_k
* splitting: the deterministic flow du/dt + nu A u + B(u, u) = 0 over one
  step, followed by the pure noise flow dy = G(y) dW.

The implicit equations are solved by fixed-point iteration preconditioned
with the mode-diagonal viscous resolvent (I + nu h A)^{-1}.  The residual of
the full equation after an update equals h |B(new) - B(old)|, so it is
available at the cost of the nonlinear term needed by the next iteration
anyway.  All maps accept batched fields and iterate until every member
meets the tolerance.
"""

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .noise import NoiseModel, WienerPath, apply_g, coarsen_path
from .spectral import (
    SpectralField,
    _advection,
    inner,
    norm_bundle,
    to_physical,
)

__all__ = [
    "SchemeParams",
    "StepDiagnostics",
    "TrajectoryRecord",
    "SolverError",
    "implicit_euler_step",
    "semi_implicit_step",
    "deterministic_substep",
    "stochastic_substep",
    "splitting_step",
    "run_trajectory",
    "SCHEME_KINDS",
]

SCHEME_KINDS = ("splitting", "fully_implicit", "semi_implicit")
_DIVERGENCE_FACTOR = 1e8


class SolverError(RuntimeError):
    """Fixed-point iteration failed to reach the residual tolerance.

    ``failed`` flags the batch members that did not converge; ``step`` is the
    index of the failing step when raised from :func:`run_trajectory`.
    """

    def __init__(self, message, failed=None, step=None):
        super().__init__(message)
        self.failed = failed
        self.step = step


@dataclass(frozen=True)
class SchemeParams:
    viscosity: float
    horizon: float
    n_steps: int
    solver_tol: float = 1e-11
    solver_max_iter: int = 200
    inner_substeps: int = 8
    scheme_kind: str = "fully_implicit"
    # diagnostic switch: drop the bilinear term B
    advection: bool = True

    def __post_init__(self):
        # nu = 0 is only meaningful in the advection-free diagnostic mode
        if not (self.viscosity > 0 or (self.viscosity == 0 and not self.advection)):
            raise ValueError(f"viscosity must be positive, got {self.viscosity}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.solver_max_iter < 1 or self.inner_substeps < 1:
            raise ValueError("solver_max_iter and inner_substeps must be >= 1")
        if self.scheme_kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme {self.scheme_kind!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step solver record; array entries are per batch member."""

    solver_iterations: int
    residual: float
    energy_defect: np.ndarray
    grad_l2: np.ndarray
    residual_history: tuple = ()


@dataclass
class TrajectoryRecord:
    """Grid values of one scheme run (or a batch of runs).

    ``norms`` maps ``"l2"``, ``"grad_l2"``, ``"v"``, ``"stokes_l2"``,
    ``"x_norm"`` to arrays of shape ``(N + 1, *batch)``.  ``states`` holds the
    fields at the indices listed in ``state_index`` (all of 0..N by default).
    """

    params: SchemeParams
    path_seed: object
    norms: dict
    diagnostics: list
    states: list = field(default_factory=list)
    state_index: list = field(default_factory=list)

    def state(self, k: int) -> SpectralField:
        return self.states[self.state_index.index(k)]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.params.n_steps + 1) * self.params.dt

    def member(self, i) -> "TrajectoryRecord":
        """Record of a single batch member."""
        seed = self.path_seed[i] if isinstance(self.path_seed, tuple) else self.path_seed
        norms = {k: v[:, i] for k, v in self.norms.items()}
        diags = [replace(d, energy_defect=d.energy_defect[i], grad_l2=d.grad_l2[i])
                 for d in self.diagnostics]
        states = [s.member(i) for s in self.states]
        return TrajectoryRecord(self.params, seed, norms, diags, states, list(self.state_index))

    def to_csv(self, path) -> None:
        """Write one row per grid time: k, t, norms and step diagnostics."""
        if np.ndim(self.norms["l2"]) != 1:
            raise ValueError("CSV export needs a single trajectory; use member(i)")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t", "l2", "grad_l2", "stokes_l2", "solver_iterations",
                        "residual", "energy_defect"])
            for k, t in enumerate(self.times):
                if k == 0:
                    it, res, defect = 0, 0.0, 0.0
                else:
                    d = self.diagnostics[k - 1]
                    it, res, defect = d.solver_iterations, d.residual, float(d.energy_defect)
                w.writerow([k, repr(float(t)), repr(float(self.norms["l2"][k])),
                            repr(float(self.norms["grad_l2"][k])),
                            repr(float(self.norms["stokes_l2"][k])), it, repr(float(res)),
                            repr(defect)])


def _resolvent(u_grid, nu, dt):
    return 1.0 / (1.0 + nu * dt * u_grid.stokes_eigenvalues)


def _l2(coeffs, area):
    return np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=(-3, -2, -1)) * area)


def _fixed_point(start: SpectralField, rhs: np.ndarray, dt, params: SchemeParams, advect):
    """Iterate x <- R(rhs - dt * advect(x)) until dt |advect(new) - advect(old)| <= tol."""
    g = start.grid
    res_op = _resolvent(g, params.viscosity, dt)
    area = g.area
    x = start
    bx = advect(x) if params.advection else None
    history = []
    for it in range(1, params.solver_max_iter + 1):
        if bx is None:
            x = SpectralField(g, res_op * rhs)
            return x, it, np.zeros(x.batch_shape), (0.0,)
        x = SpectralField(g, res_op * (rhs - dt * bx))
        bn = advect(x)
        res = dt * _l2(bn - bx, area)
        bx = bn
        worst = float(np.max(res))
        history.append(worst)
        if worst <= params.solver_tol:
            return x, it, res, tuple(history[-6:])
        if not np.isfinite(worst) or worst > _DIVERGENCE_FACTOR * max(history[0], 1.0):
            break
    raise SolverError(
        f"fixed-point iteration stalled at residual {history[-1]:.3e} after {len(history)} "
        f"iterations (tol {params.solver_tol:.1e}); reduce the step size",
        failed=np.asarray(res > params.solver_tol),
    )


def _noise_increment(model, u_prev, dW):
    if model is None or dW is None:
        return None
    return apply_g(model, u_prev, dW).coeffs


def _energy_defect(u_new, u_prev, noise, params, dt):
    nb = norm_bundle(u_new)
    lhs = inner(u_new - u_prev, u_new) + params.viscosity * dt * nb.grad_l2**2
    if noise is not None:
        lhs = lhs - inner(SpectralField(u_new.grid, noise), u_new)
    return np.abs(lhs), nb.grad_l2


def _full_advect(u: SpectralField) -> np.ndarray:
    up = to_physical(u)
    return _advection(u.grid, up, up)


def _implicit_solve(u_prev, noise, dt, params):
    rhs = u_prev.coeffs if noise is None else u_prev.coeffs + noise
    return _fixed_point(u_prev, rhs, dt, params, _full_advect)


def implicit_euler_step(u_prev: SpectralField, params: SchemeParams,
                        noise_model: Optional[NoiseModel] = None, dW=None,
                        step_index: Optional[int] = None):
    """One fully implicit Euler step; returns ``(u_next, StepDiagnostics)``.

    ``step_index`` is accepted for time-dependent diffusion coefficients; the
    shipped noise models are autonomous and ignore it.
    """
    dt = params.dt
    noise = _noise_increment(noise_model, u_prev, dW)
    u, it, res, hist = _implicit_solve(u_prev, noise, dt, params)
    defect, grad = _energy_defect(u, u_prev, noise, params, dt)
    return u, StepDiagnostics(it, float(np.max(res)), defect, grad, hist)


def semi_implicit_step(v_prev: SpectralField, params: SchemeParams,
                       noise_model: Optional[NoiseModel] = None, dW=None,
                       step_index: Optional[int] = None):
    """One semi-implicit Euler step (advecting velocity frozen at v_prev)."""
    dt = params.dt
    g = v_prev.grid
    noise = _noise_increment(noise_model, v_prev, dW)
    rhs = v_prev.coeffs if noise is None else v_prev.coeffs + noise
    vp = to_physical(v_prev)

    def advect(v):
        return _advection(g, vp, to_physical(v))

    v, it, res, hist = _fixed_point(v_prev, rhs, dt, params, advect)
    defect, grad = _energy_defect(v, v_prev, noise, params, dt)
    return v, StepDiagnostics(it, float(np.max(res)), defect, grad, hist)


def deterministic_substep(u_start: SpectralField, duration: float, params: SchemeParams,
                          return_diagnostics: bool = False):
    """Approximate the noiseless flow over ``duration`` by implicit Euler sub-steps."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    m = params.inner_substeps
    h = duration / m
    u = u_start
    iterations, worst, defect = 0, 0.0, np.zeros(u_start.batch_shape)
    for _ in range(m):
        u_next, it, res, _ = _implicit_solve(u, None, h, params)
        if return_diagnostics:
            d, _ = _energy_defect(u_next, u, None, params, h)
            defect = np.maximum(defect, d)
        iterations += it
        worst = max(worst, float(np.max(res)))
        u = u_next
    if return_diagnostics:
        return u, iterations, worst, defect
    return u


def _as_fine_block(dW, n_pairs):
    dW = np.asarray(dW, dtype=complex)
    return dW[None] if dW.ndim == 1 else dW


def stochastic_substep(y_start: SpectralField, noise_model: Optional[NoiseModel], dW,
                       inner_substeps: Optional[int] = None) -> SpectralField:
    """Solve dy = G(y) dW across one step.

    ``dW`` holds the fine increments of the step, shape ``(m, *batch, n_pairs)``
    (a single increment without the leading axis is also accepted).  The
    additive case is exact; the multiplicative case runs Euler-Maruyama over
    the m fine increments.  ``inner_substeps`` is informational: the fine
    resolution is fixed by the supplied increments.
    """
    if noise_model is None or dW is None:
        return y_start
    block = _as_fine_block(dW, noise_model.n_pairs)
    if noise_model.kind == "additive":
        total = block[0].copy()
        for j in range(1, block.shape[0]):
            total += block[j]
        return y_start + apply_g(noise_model, y_start, total)
    y = y_start
    for j in range(block.shape[0]):
        y = y + apply_g(noise_model, y, block[j])
    return y


def splitting_step(state: SpectralField, params: SchemeParams,
                   noise_model: Optional[NoiseModel] = None, dW=None,
                   step_index: Optional[int] = None):
    """Deterministic flow over one step, then the noise flow; returns ``(state, diag)``."""
    u, it, res, defect = deterministic_substep(state, params.dt, params, return_diagnostics=True)
    y = stochastic_substep(u, noise_model, dW, params.inner_substeps)
    grad = norm_bundle(y).grad_l2
    return y, StepDiagnostics(it, res, defect, grad)


_STEPPERS = {
    "fully_implicit": implicit_euler_step,
    "semi_implicit": semi_implicit_step,
    "splitting": splitting_step,
}


def _norm_arrays(bundle):
    return {"l2": bundle.l2, "grad_l2": bundle.grad_l2, "v": bundle.v,
            "stokes_l2": bundle.stokes_l2, "x_norm": bundle.x_norm}


def run_trajectory(u0: SpectralField, params: SchemeParams,
                   noise_model: Optional[NoiseModel] = None,
                   path: Optional[WienerPath] = None, keep_states=True,
                   observer=None) -> TrajectoryRecord:
    """Apply ``params.n_steps`` steps of ``params.scheme_kind`` from ``u0``.

    ``path`` supplies the noise at any resolution that ``n_steps`` divides;
    Euler schemes use the coarsened increments and the splitting scheme
    receives the fine increments of each step.  A batched path drives a
    batched initial field (``u0`` may also be a single field, broadcast).
    ``keep_states`` is True (all), False (none), or an iterable of indices.
    ``observer(k, state)`` is called for every grid value, k = 0..N.
    """
    n = params.n_steps
    stepper = _STEPPERS[params.scheme_kind]
    seed = None
    if path is not None and noise_model is not None:
        if path.n_fine % n:
            raise ValueError(f"path resolution {path.n_fine} is not a multiple of N={n}")
        if abs(path.horizon - params.horizon) > 1e-12 * params.horizon:
            raise ValueError("path horizon differs from the scheme horizon")
        factor = path.n_fine // n
        seed = path.seed
        batch = path.batch_shape
        if u0.batch_shape != batch:
            u0 = SpectralField(u0.grid, np.broadcast_to(u0.coeffs, batch + (2,) + u0.coeffs.shape[-2:]))
        coarse = coarsen_path(path, factor).increments
    else:
        noise_model = None
        factor, coarse = 1, None

    if keep_states is True:
        wanted = set(range(n + 1))
    elif keep_states is False:
        wanted = set()
    else:
        wanted = {int(k) for k in keep_states}

    norms = {k: [v] for k, v in _norm_arrays(norm_bundle(u0)).items()}
    states, index = ([u0], [0]) if 0 in wanted else ([], [])
    diags = []
    u = u0
    if observer is not None:
        observer(0, u0)
    for k in range(n):
        if noise_model is None:
            dW = None
        elif params.scheme_kind == "splitting":
            dW = path.increments[k * factor:(k + 1) * factor]
        else:
            dW = coarse[k]
        try:
            u, diag = stepper(u, params, noise_model, dW, step_index=k)
        except SolverError as exc:
            exc.step = k
            raise
        diags.append(diag)
        if observer is not None:
            observer(k + 1, u)
        for key, v in _norm_arrays(norm_bundle(u)).items():
            norms[key].append(v)
        if k + 1 in wanted:
            states.append(u)
            index.append(k + 1)
    norms = {key: np.array(v) for key, v in norms.items()}
    return TrajectoryRecord(params, seed, norms, diags, states, index)
