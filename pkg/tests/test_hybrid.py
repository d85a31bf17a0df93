import json

import numpy as np
import pytest

from mopgrnn.datagen import Sample, attach_physics_channel, generate_dataset
from mopgrnn.dynamics import (GOLF_PHYSICS, PENDULUM_PHYSICS, PENDULUM_TRUE, ExcitationSignal, OdeSystemSpec,
                              TimeGrid, Trajectory)
from mopgrnn.errors import ConfigurationError, DivergenceError, InvalidInputError, SchemaError
from mopgrnn.hybrid import (Model, ModelKind, Normalization, build_model, constraint_violation_trace,
                            fit_normalization, load_model, network_inputs, predict_derivs_teacher_forced,
                            rollout, rollout_sample, save_model)
from mopgrnn.rnn import rnn_forward

TRUTH = OdeSystemSpec("pendulum", PENDULUM_TRUE)
PHY = OdeSystemSpec("pendulum", PENDULUM_PHYSICS)
GRID = TimeGrid.from_duration(1.0, 0.01)
SIG = ExcitationSignal("sine", 10.0, 1.0)


@pytest.fixture(scope="module")
def data():
    ds = generate_dataset(TRUTH, [SIG, ExcitationSignal("sine", 20.0, 0.5)], [np.array([0.3, 0.0])], GRID)
    return attach_physics_channel(ds, PHY)


def euler_reference(spec, x0, sig, grid):
    x = np.array(x0, dtype=float)
    out = [x]
    for t in grid.times[:-1]:
        x = x + grid.dt * spec.dynamics(x, sig(t), t)
        out.append(x)
    return np.array(out)


@pytest.mark.parametrize("kind,dim", [("rnn", 4), ("pgrnn", 6), ("mopgrnn", 6)])
def test_input_layout(kind, dim, data):
    m = build_model(kind, PHY, data, hidden_size=5, seed=0)
    assert m.input_dim == dim
    assert m.input_layout[:4] == ["x0", "x1", "u", "t"]
    assert network_inputs(m, data.samples[0]).shape == (GRID.n, dim)


def test_physics_channel_adds_state_dim(data):
    a = build_model("rnn", PHY, data, seed=3)
    b = build_model("pgrnn", PHY, data, seed=3)
    assert b.input_dim - a.input_dim == 2


def test_missing_physics_is_configuration_error(data):
    with pytest.raises(ConfigurationError):
        build_model("pgrnn", None, data)
    with pytest.raises(ConfigurationError):
        Model("phy")
    bare = generate_dataset(TRUTH, [SIG], [np.zeros(2)], GRID)
    with pytest.raises(ConfigurationError):
        predict_derivs_teacher_forced(build_model("pgrnn", PHY, data), bare.samples[0])


def test_param_dim_mismatch(data):
    rnn = build_model("rnn", PHY, data)
    with pytest.raises(ConfigurationError):
        Model("pgrnn", PHY, rnn.params)


def test_normalization_statistics(data):
    norm = fit_normalization("pgrnn", data, 1.0)
    m = Model("pgrnn", PHY, build_model("pgrnn", PHY, data).params, norm)
    S = np.vstack([network_inputs(m, s) for s in data])
    np.testing.assert_allclose(S.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(S.std(axis=0), 1.0, rtol=1e-12)
    target = np.vstack([s.traj.derivs for s in data])
    np.testing.assert_allclose(norm.out_scale, np.sqrt(np.mean(target ** 2, axis=0)), rtol=1e-12)


def test_phy_teacher_forced_is_physics_model(data):
    m = build_model("phy", PHY)
    s = data.samples[0]
    np.testing.assert_array_equal(predict_derivs_teacher_forced(m, s), s.phys_derivs)


def test_zero_params_predict_zero(data):
    m = build_model("pgrnn", PHY, data)
    m = m.with_params(m.params.zeros_like())
    for s in data:
        assert np.all(predict_derivs_teacher_forced(m, s) == 0.0)
        assert predict_derivs_teacher_forced(m, s).shape == s.traj.derivs.shape


def test_teacher_forced_scales_readout(data):
    m = build_model("rnn", PHY, data, seed=2)
    s = data.samples[1]
    out = rnn_forward(m.params, network_inputs(m, s))[0]
    np.testing.assert_array_equal(predict_derivs_teacher_forced(m, s), out * m.norm.out_scale)


def test_phy_rollout_with_true_params_is_euler_simulation():
    m = build_model("phy", TRUTH)
    traj = rollout(m, [0.4, -0.2], SIG, GRID)
    np.testing.assert_allclose(traj.states, euler_reference(TRUTH, [0.4, -0.2], SIG, GRID), rtol=0, atol=1e-14)


def test_rollout_is_deterministic(data):
    m = build_model("mopgrnn", PHY, data, seed=4)
    a, b = rollout(m, [0.1, 0.0], SIG, GRID), rollout(m, [0.1, 0.0], SIG, GRID)
    assert a.states.tobytes() == b.states.tobytes()


def test_zero_param_rollout_keeps_state(data):
    m = build_model("pgrnn", PHY, data)
    m = m.with_params(m.params.zeros_like())
    traj = rollout(m, [0.7, 0.2], SIG, GRID)
    assert np.all(traj.states == [0.7, 0.2])


def test_rollout_matches_teacher_forcing_on_first_step(data):
    m = build_model("pgrnn", PHY, data, seed=1)
    s = data.samples[0]
    traj = rollout_sample(m, s)
    np.testing.assert_allclose(traj.derivs[0], predict_derivs_teacher_forced(m, s)[0], rtol=1e-12)


@pytest.mark.parametrize("system,kind", [("pendulum", "rnn"), ("pendulum", "pgrnn"), ("golf", "mopgrnn")])
def test_rollout_agrees_with_teacher_forcing_on_own_states(system, kind):
    # feeding the closed-loop states back in teacher-forced must reproduce every derivative
    phy = PHY if system == "pendulum" else OdeSystemSpec("golf", GOLF_PHYSICS)
    sig = SIG if system == "pendulum" else ExcitationSignal("sine", 0.4, 1.0)
    ds = attach_physics_channel(generate_dataset(phy, [sig], [np.array([0.2, 0.0])], GRID), phy)
    m = build_model(kind, phy, ds, hidden_size=5, seed=3)
    traj = rollout(m, [0.2, 0.0], sig, GRID)
    replay = Sample(traj, phy.dynamics(traj.states, traj.inputs))
    np.testing.assert_allclose(traj.derivs, predict_derivs_teacher_forced(m, replay), rtol=1e-10, atol=1e-12)


def test_rollout_divergence_reports_step(data):
    m = build_model("rnn", PHY, data)
    p = m.params.zeros_like()
    p.bout[:] = [1e308, 0.0]
    m = m.with_params(p)
    m.norm = Normalization(np.zeros(4), np.ones(4), np.array([10.0, 1.0]))
    with pytest.raises(DivergenceError) as info, np.errstate(over="ignore"):
        rollout(m, [0.0, 0.0], SIG, GRID)
    # the first non-finite state is the one after the overflowing derivative
    assert info.value.step == 1


def test_rollout_rejects_bad_x0(data):
    with pytest.raises(InvalidInputError):
        rollout(build_model("phy", PHY), [0.0], SIG, GRID)


def test_violation_trace_zero_for_identical_trajectories(data):
    s = data.samples[0]
    m = build_model("phy", PHY)
    trace = constraint_violation_trace(m, s.traj, s)
    assert np.all(trace == 0.0)


def test_violation_trace_nonnegative_and_grid_checked(data):
    s = data.samples[0]
    m = build_model("pgrnn", PHY, data)
    trace = constraint_violation_trace(m, rollout_sample(m, s), s)
    assert trace.shape == (GRID.n,) and np.all(trace >= 0)
    short = Trajectory(TimeGrid(0.0, 0.01, 5), s.traj.states[:5], s.traj.derivs[:5], s.traj.inputs[:5])
    with pytest.raises(InvalidInputError):
        constraint_violation_trace(m, short, s)


def test_violation_trace_known_value():
    grid = TimeGrid(0.0, 0.01, 3)
    states = np.array([[0.0, 1.0]] * 3)
    derivs = np.array([[1.0, 0.0]] * 3)
    ref_traj = Trajectory(grid, states, derivs, np.zeros(3))
    model_traj = Trajectory(grid, states, derivs + [0.0, 2.0], np.zeros(3))
    from mopgrnn.datagen import Sample
    trace = constraint_violation_trace(build_model("phy", TRUTH), model_traj, Sample(ref_traj))
    np.testing.assert_allclose(trace, 2 * TRUTH.inertia, rtol=1e-12)


@pytest.mark.parametrize("kind", ["phy", "rnn", "pgrnn", "mopgrnn"])
def test_checkpoint_round_trip(tmp_path, data, kind):
    m = build_model(kind, PHY, data, hidden_size=6, seed=8)
    path = tmp_path / "m.json"
    save_model(m, path, meta={"seed": 8})
    back = load_model(path)
    assert back.kind is ModelKind(kind)
    a = rollout(m, [0.2, 0.0], SIG, GRID)
    b = rollout(back, [0.2, 0.0], SIG, GRID)
    assert a.states.tobytes() == b.states.tobytes()


def test_checkpoint_errors(tmp_path, data):
    path = tmp_path / "m.json"
    save_model(build_model("pgrnn", PHY, data), path)
    d = json.loads(path.read_text())
    d["input_layout"] = d["input_layout"][:4]
    path.write_text(json.dumps(d))
    with pytest.raises(SchemaError):
        load_model(path)
    d["version"] = 2
    path.write_text(json.dumps(d))
    with pytest.raises(SchemaError):
        load_model(path)
    path.write_text("{not json")
    with pytest.raises(SchemaError):
        load_model(path)
