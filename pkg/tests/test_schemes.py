import math
from dataclasses import replace

import numpy as np
import pytest

from stochns.noise import Modulation, build_noise_model, coarsen_path, sample_wiener_path
from stochns.schemes import (
    SchemeParams,
    SolverError,
    deterministic_substep,
    implicit_euler_step,
    run_trajectory,
    semi_implicit_step,
    splitting_step,
    stochastic_substep,
)
from stochns.spectral import (
    inner,
    new_grid,
    norm_bundle,
    random_field,
    single_mode,
    taylor_green,
    zero_field,
)


@pytest.fixture(scope="module")
def grid():
    return new_grid(16)


@pytest.fixture(scope="module")
def u0(grid):
    return random_field(grid, np.random.default_rng(4))


@pytest.fixture(scope="module")
def model(grid):
    return build_noise_model(grid, 1.0, 3.0)


def params(**kw):
    base = dict(viscosity=1.0, horizon=0.25, n_steps=16)
    base.update(kw)
    return SchemeParams(**base)


# ---------------------------------------------------------------- parameters

@pytest.mark.parametrize("kw", [dict(viscosity=0.0), dict(horizon=0.0), dict(n_steps=0),
                                dict(solver_tol=0.0), dict(scheme_kind="rk4"),
                                dict(inner_substeps=0)])
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        params(**kw)


def test_zero_viscosity_allowed_only_without_advection():
    assert params(viscosity=0.0, advection=False).dt == pytest.approx(0.25 / 16)


# ---------------------------------------------------------------- single steps

def test_implicit_step_from_rest_is_rest(grid):
    u, diag = implicit_euler_step(zero_field(grid), params())
    assert np.all(u.coeffs == 0)
    assert diag.solver_iterations == 1


def test_resolvent_on_single_mode():
    g = new_grid(8, 3.0)
    p = params(viscosity=0.3, advection=False)
    u = single_mode(g, (1, 2), 1.7)
    out, _ = implicit_euler_step(u, p)
    factor = 1.0 / (1.0 + 0.3 * p.dt * 5 * (2 * math.pi / 3.0) ** 2)
    np.testing.assert_allclose(out.coeffs, factor * u.coeffs, rtol=1e-14, atol=0)
    semi, _ = semi_implicit_step(u, p)
    np.testing.assert_array_equal(semi.coeffs, out.coeffs)


def test_semi_implicit_from_rest_is_rest(grid):
    v, _ = semi_implicit_step(zero_field(grid), params())
    assert np.all(v.coeffs == 0)


@pytest.mark.parametrize("step", [implicit_euler_step, semi_implicit_step])
def test_energy_identity_without_noise(u0, step):
    p = params()
    u, diag = step(u0, p)
    a = norm_bundle(u)
    lhs = a.l2 ** 2 + norm_bundle(u - u0).l2 ** 2 + 2 * p.viscosity * p.dt * a.grad_l2 ** 2
    assert lhs == pytest.approx(norm_bundle(u0).l2 ** 2, abs=20 * p.solver_tol * (1 + a.v ** 2))
    assert diag.energy_defect <= 10 * p.solver_tol * (1 + a.v ** 2)
    assert diag.residual <= p.solver_tol


@pytest.mark.parametrize("step", [implicit_euler_step, semi_implicit_step])
def test_energy_identity_with_noise(u0, model, step):
    p = params()
    dW = sample_wiener_path(model, p.dt, 1, seed=3).increments[0]
    u, diag = step(u0, p, model, dW)
    assert diag.energy_defect <= 10 * p.solver_tol * (1 + norm_bundle(u).v ** 2)


def test_picard_residual_decreases(u0):
    _, diag = implicit_euler_step(u0 * 4.0, params())
    hist = diag.residual_history
    assert len(hist) >= 2
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_solver_failure_is_reported(u0):
    p = params(horizon=5.0, n_steps=1, solver_max_iter=3)
    with pytest.raises(SolverError) as info:
        implicit_euler_step(u0 * 50.0, p)
    assert info.value.failed is not None


def test_states_stay_divergence_free(u0, model):
    p = params()
    path = sample_wiener_path(model, p.horizon, p.n_steps, seed=8)
    rec = run_trajectory(u0, p, model, path)
    assert max(s.divergence_ratio() for s in rec.states) < 1e-13
    assert all(np.all(s.coeffs[..., 0, 0] == 0) for s in rec.states)


# ---------------------------------------------------------------- splitting pieces

def test_deterministic_substep_from_rest(grid):
    assert np.all(deterministic_substep(zero_field(grid), 0.5, params()).coeffs == 0)


def test_deterministic_substep_dissipates(u0):
    out = deterministic_substep(u0 * 3.0, 0.5, params(inner_substeps=16))
    assert norm_bundle(out).l2 <= norm_bundle(u0 * 3.0).l2


def test_deterministic_substep_on_taylor_green_is_close():
    g = new_grid(16)
    tg = taylor_green(g)
    p = params(viscosity=0.1, inner_substeps=64)
    out = deterministic_substep(tg, 1.0, p)
    exact = tg * math.exp(-0.2)
    # first-order inner scheme: error about nu^2 * 2 * dt_inner / 2 * t
    assert norm_bundle(out - exact).l2 / norm_bundle(exact).l2 < 5e-3


def test_stochastic_substep_zero_increment(u0, model):
    zero = np.zeros((4, model.n_pairs), dtype=complex)
    np.testing.assert_array_equal(stochastic_substep(u0, model, zero).coeffs, u0.coeffs)


def test_stochastic_substep_additive_shift(grid, u0, model):
    block = sample_wiener_path(model, 0.1, 4, seed=1).increments
    other = random_field(grid, np.random.default_rng(99))
    a = stochastic_substep(u0, model, block)
    b = stochastic_substep(other, model, block)
    np.testing.assert_allclose((a - b).coeffs, (u0 - other).coeffs, atol=1e-15)


def test_constant_modulation_reduces_to_scaled_additive(grid, u0):
    add = build_noise_model(grid)
    mult = build_noise_model(grid, kind="scalar_multiplicative", sigma=0.5,
                             modulation=Modulation("const", 3.0))
    block = sample_wiener_path(add, 0.1, 4, seed=2).increments
    y_add = stochastic_substep(zero_field(grid), add, block)
    y_mult = stochastic_substep(u0, mult, block)
    np.testing.assert_allclose((y_mult - u0).coeffs, 1.5 * y_add.coeffs, atol=1e-14)


def test_splitting_without_noise_is_deterministic_substep(u0):
    p = params(scheme_kind="splitting")
    y, _ = splitting_step(u0, p)
    np.testing.assert_array_equal(y.coeffs, deterministic_substep(u0, p.dt, p).coeffs)


def test_splitting_without_drift_adds_noise(u0, model):
    p = params(viscosity=0.0, advection=False, scheme_kind="splitting")
    block = sample_wiener_path(model, p.dt, 4, seed=5).increments
    y, _ = splitting_step(u0, p, model, block)
    expect = stochastic_substep(u0, model, block)
    np.testing.assert_allclose(y.coeffs, expect.coeffs, atol=1e-16)


def test_splitting_with_tiny_noise_tracks_noiseless_flow(grid):
    tg = taylor_green(grid)
    tiny = build_noise_model(grid, 1.0, 3.0)
    tiny = build_noise_model(grid, 1e-12 / tiny.trace_q, 3.0)
    p = params(viscosity=0.1, scheme_kind="splitting")
    block = sample_wiener_path(tiny, p.dt, 8, seed=0).increments
    noisy, _ = splitting_step(tg, p, tiny, block)
    quiet, _ = splitting_step(tg, p)
    assert np.max(np.abs(noisy.coeffs - quiet.coeffs)) < 1e-5


def test_splitting_record_matches_composition(u0, model):
    p = params(scheme_kind="splitting", n_steps=4, inner_substeps=4)
    path = sample_wiener_path(model, p.horizon, 16, seed=6)
    rec = run_trajectory(u0, p, model, path)
    y = u0
    for k in range(4):
        y = stochastic_substep(deterministic_substep(y, p.dt, p), model,
                               path.increments[4 * k:4 * k + 4])
        np.testing.assert_array_equal(rec.state(k + 1).coeffs, y.coeffs)


# ---------------------------------------------------------------- trajectories

def test_single_step_trajectory_equals_step(u0, model):
    p = params(n_steps=1)
    path = sample_wiener_path(model, p.horizon, 4, seed=7)
    rec = run_trajectory(u0, p, model, path)
    one, _ = implicit_euler_step(u0, p, model, coarsen_path(path, 4).increments[0])
    np.testing.assert_array_equal(rec.states[-1].coeffs, one.coeffs)
    np.testing.assert_array_equal(rec.states[0].coeffs, u0.coeffs)
    assert len(rec.states) == 2 and len(rec.diagnostics) == 1


@pytest.mark.parametrize("kind", ["fully_implicit", "semi_implicit", "splitting"])
def test_trajectory_is_deterministic(u0, model, kind):
    p = params(scheme_kind=kind, n_steps=8, inner_substeps=2)
    path = sample_wiener_path(model, p.horizon, 16, seed=11)
    a = run_trajectory(u0, p, model, path)
    b = run_trajectory(u0, p, model, path)
    for s, t in zip(a.states, b.states):
        assert s.coeffs.tobytes() == t.coeffs.tobytes()
    assert a.norms["l2"].tobytes() == b.norms["l2"].tobytes()


def test_zero_everything_stays_zero(grid):
    quiet = build_noise_model(grid, 0.0)
    p = params(n_steps=4)
    rec = run_trajectory(zero_field(grid), p, quiet, sample_wiener_path(quiet, 0.25, 4, seed=0))
    assert all(np.all(s.coeffs == 0) for s in rec.states)


def test_noiseless_implicit_energy_decreases(u0):
    rec = run_trajectory(u0 * 5.0, params(n_steps=32), keep_states=False)
    assert np.all(np.diff(rec.norms["l2"]) <= 0)
    assert rec.states == []


def test_batched_trajectory_matches_members(u0, model):
    p = params(n_steps=4)
    batch = sample_wiener_path(model, p.horizon, 8, seed=[1, 2])
    rec = run_trajectory(u0, p, model, batch)
    for i, s in enumerate((1, 2)):
        single = run_trajectory(u0, p, model, sample_wiener_path(model, p.horizon, 8, seed=s))
        np.testing.assert_allclose(rec.states[-1].member(i).coeffs, single.states[-1].coeffs,
                                   atol=1e-14)
        assert rec.member(i).path_seed == s


def test_path_resolution_must_divide(u0, model):
    with pytest.raises(ValueError):
        run_trajectory(u0, params(n_steps=3), model, sample_wiener_path(model, 0.25, 8, seed=0))
    with pytest.raises(ValueError):
        run_trajectory(u0, params(), model, sample_wiener_path(model, 0.5, 16, seed=0))


def test_failing_step_index_is_reported(u0):
    p = params(horizon=10.0, n_steps=2, solver_max_iter=4)
    with pytest.raises(SolverError) as info:
        run_trajectory(u0 * 50.0, p)
    assert info.value.step == 0


def test_trajectory_csv(tmp_path, u0, model):
    p = params(n_steps=4)
    rec = run_trajectory(u0, p, model, sample_wiener_path(model, p.horizon, 4, seed=0))
    f = tmp_path / "traj.csv"
    rec.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "k,t,l2,grad_l2,stokes_l2,solver_iterations,residual,energy_defect"
    assert len(lines) == 6
    assert float(lines[1].split(",")[2]) == pytest.approx(norm_bundle(u0).l2)


def test_observer_sees_every_state(u0):
    seen = []
    rec = run_trajectory(u0, params(n_steps=3), observer=lambda k, s: seen.append((k, s)))
    assert [k for k, _ in seen] == [0, 1, 2, 3]
    assert seen[-1][1] is rec.states[-1]


def test_inner_product_symmetry_in_records(u0):
    rec = run_trajectory(u0, replace(params(n_steps=2), scheme_kind="semi_implicit"))
    a, b = rec.states[1], rec.states[2]
    assert inner(a, b) == pytest.approx(inner(b, a), rel=1e-15)
