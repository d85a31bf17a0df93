import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mopgrnn.errors import InvalidInputError, SchemaError
from mopgrnn.rnn import BLOCKS, GruParams, gru_cell_forward, init_params, rnn_backward, rnn_forward


def zero_params(input_dim=3, z=2, out=2):
    return init_params(0, input_dim, z, out).zeros_like()


def finite_difference_grads(p, S, G, h=1e-6):
    """Central differences of sum(G * outputs) for every parameter entry."""
    out = {}
    for name, arr in p.items():
        g = np.zeros_like(arr)
        for i in range(arr.size):
            plus, minus = p.copy(), p.copy()
            getattr(plus, name).flat[i] += h
            getattr(minus, name).flat[i] -= h
            g.flat[i] = (np.sum(G * rnn_forward(plus, S)[0]) - np.sum(G * rnn_forward(minus, S)[0])) / (2 * h)
        out[name] = g
    return out


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_zero_cell_halves_previous_state():
    p = zero_params()
    h0 = np.array([0.4, -0.8])
    h, cache = gru_cell_forward(p, np.ones(3), h0)
    np.testing.assert_allclose(cache["z"], 0.5)
    np.testing.assert_allclose(cache["r"], 0.5)
    np.testing.assert_allclose(cache["hc"], 0.0)
    np.testing.assert_allclose(h, 0.5 * h0)
    h, _ = gru_cell_forward(p, np.ones(3), np.zeros(2))
    np.testing.assert_array_equal(h, 0.0)


def test_single_unit_hand_evaluation():
    p = init_params(0, 3, 1, 1).zeros_like()
    for name in ("Wz", "Wr", "Wh"):
        getattr(p, name)[0, 0] = 1.0
    h, cache = gru_cell_forward(p, np.array([1.0, 0.0, 0.0]), np.zeros(1))
    assert cache["z"][0] == pytest.approx(0.731059, abs=1e-6)
    assert cache["hc"][0] == pytest.approx(0.761594, abs=1e-6)
    # sigma(1) * tanh(1), evaluated independently of the cell
    expected = np.tanh(1.0) / (1.0 + np.exp(-1.0))
    assert h[0] == pytest.approx(expected, rel=1e-14)
    assert h[0] == pytest.approx(0.556770, abs=1e-6)


def test_readout_only_network_outputs_bias():
    p = init_params(4, 3, 5, 2)
    p.Wout[:] = 0.0
    p.bout[:] = [1.5, -2.0]
    out, _, _ = rnn_forward(p, np.random.default_rng(0).normal(size=(7, 3)))
    np.testing.assert_array_equal(out, np.tile([1.5, -2.0], (7, 1)))
    out, _, _ = rnn_forward(zero_params(), np.ones((4, 3)))
    np.testing.assert_array_equal(out, 0.0)


def test_one_step_sequence_matches_cell():
    p = init_params(2, 3, 4, 2)
    s = np.array([0.3, -1.0, 2.0])
    h, _ = gru_cell_forward(p, s, np.zeros(4))
    out, h_last, _ = rnn_forward(p, s[None, :])
    np.testing.assert_allclose(h_last, h, rtol=1e-14)
    np.testing.assert_allclose(out[0], p.Wout @ h + p.bout, rtol=1e-14)


def test_sequence_matches_repeated_cells_with_carried_state():
    p = init_params(5, 3, 4, 2)
    S = np.random.default_rng(1).normal(size=(6, 3))
    h0 = np.random.default_rng(2).uniform(-0.5, 0.5, 4)
    out, h_last, _ = rnn_forward(p, S, h0)
    h = h0
    for k in range(6):
        h, _ = gru_cell_forward(p, S[k], h)
        np.testing.assert_allclose(out[k], p.Wout @ h + p.bout, rtol=1e-12)
    np.testing.assert_allclose(h_last, h, rtol=1e-12)


def test_forward_is_deterministic():
    p = init_params(9, 4, 8, 2)
    S = np.random.default_rng(3).normal(size=(50, 4))
    a = rnn_forward(p, S)[0]
    b = rnn_forward(p, S)[0]
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 20.0))
def test_hidden_state_and_gates_stay_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    p = init_params(seed, 3, 6, 2)
    for name in ("bz", "br", "bh"):
        getattr(p, name)[:] = rng.normal(size=6)
    S = scale * rng.normal(size=(40, 3))
    _, _, cache = rnn_forward(p, S)
    # strict in exact arithmetic; tanh and the logistic round to +-1 / 0 / 1 in float64
    assert np.all(np.abs(cache.H) <= 1.0)
    assert np.all((cache.Z >= 0) & (cache.Z <= 1))
    assert np.all((cache.R >= 0) & (cache.R <= 1))
    if scale < 2:
        assert np.all(np.abs(cache.H) < 1.0)
        assert np.all((cache.Z > 0) & (cache.Z < 1))


def test_zero_output_gradient_gives_zero_gradients():
    p = init_params(1, 4, 4, 2)
    _, _, cache = rnn_forward(p, np.ones((5, 4)))
    g = rnn_backward(p, cache, np.zeros((5, 2)))
    for _, arr in g.items():
        assert np.all(arr == 0.0)


def test_output_bias_gradient_is_sum_of_output_grads():
    p = init_params(1, 4, 4, 2)
    G = np.random.default_rng(0).normal(size=(5, 2))
    _, _, cache = rnn_forward(p, np.ones((5, 4)))
    np.testing.assert_allclose(rnn_backward(p, cache, G).bout, G.sum(axis=0), rtol=1e-14)


def test_bptt_matches_finite_differences():
    rng = np.random.default_rng(42)
    p = init_params(42, 4, 4, 2)
    for name in ("bz", "br", "bh", "bout"):
        getattr(p, name)[:] = rng.normal(scale=0.5, size=getattr(p, name).shape)
    S = rng.normal(size=(10, 4))
    G = rng.normal(size=(10, 2))
    _, _, cache = rnn_forward(p, S)
    analytic = rnn_backward(p, cache, G)
    numeric = finite_difference_grads(p, S, G)
    for name in BLOCKS:
        assert relative_error(getattr(analytic, name), numeric[name]) <= 1e-5, name


def test_bptt_with_nonzero_initial_state():
    rng = np.random.default_rng(7)
    p = init_params(7, 3, 3, 2)
    S = rng.normal(size=(6, 3))
    G = rng.normal(size=(6, 2))
    h0 = rng.uniform(-0.9, 0.9, 3)
    _, _, cache = rnn_forward(p, S, h0)
    analytic = rnn_backward(p, cache, G)
    h = 1e-6
    for name, arr in p.items():
        for i in range(arr.size):
            plus, minus = p.copy(), p.copy()
            getattr(plus, name).flat[i] += h
            getattr(minus, name).flat[i] -= h
            num = (np.sum(G * rnn_forward(plus, S, h0)[0]) - np.sum(G * rnn_forward(minus, S, h0)[0])) / (2 * h)
            assert getattr(analytic, name).flat[i] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_init_params_deterministic_and_bounded():
    a, b, c = init_params(3, 4, 8, 2), init_params(3, 4, 8, 2), init_params(4, 4, 8, 2)
    for name in BLOCKS:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert any(not np.array_equal(getattr(a, n), getattr(c, n)) for n in BLOCKS)
    assert np.all(np.abs(a.Wz) <= np.sqrt(6 / (4 + 8)))
    assert np.all(np.abs(a.Rh) <= np.sqrt(6 / 16))
    assert np.all(a.bz == 0) and np.all(a.bout == 0)


def test_init_params_rejects_zero_dims():
    with pytest.raises(InvalidInputError):
        init_params(0, 0, 4, 2)


def test_shape_checks():
    p = init_params(0, 3, 4, 2)
    with pytest.raises(InvalidInputError):
        rnn_forward(p, np.ones((5, 2)))
    with pytest.raises(InvalidInputError):
        rnn_forward(p, np.ones((0, 3)))
    with pytest.raises(InvalidInputError):
        gru_cell_forward(p, np.ones(3), np.zeros(3))
    with pytest.raises(InvalidInputError):
        GruParams(**{**dict(p.items()), "Rz": np.zeros((3, 3))})


def test_checkpoint_round_trip_is_exact():
    p = init_params(11, 3, 5, 2)
    q = GruParams.from_dict(json.loads(json.dumps(p.to_dict())))
    for name in BLOCKS:
        assert getattr(p, name).tobytes() == getattr(q, name).tobytes()


def test_checkpoint_version_checked():
    d = init_params(0, 2, 2, 2).to_dict()
    d["version"] = 99
    with pytest.raises(SchemaError):
        GruParams.from_dict(d)
