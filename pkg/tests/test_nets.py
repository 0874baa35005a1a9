import numpy as np
import pytest

from subnet.autodiff import Tape
from subnet.nets import MlpParams, MlpSpec, init_xavier, mlp_forward, mlp_graph, xavier_bound


def test_xavier_bound_value():
    assert xavier_bound(3, 3) == 1.0


def test_param_count_matches_layout():
    for spec in (
        MlpSpec(3, 2),
        MlpSpec(5, 1, hidden_layers=0, bypass=False),
        MlpSpec(4, 4, hidden_layers=3, hidden_width=7, bypass=True),
    ):
        total = sum(int(np.prod(shape)) for _k, _off, shape in spec.layout())
        assert spec.param_count == total
        analytic = sum((fi + 1) * fo for fi, fo in spec.layer_dims())
        if spec.bypass:
            analytic += spec.in_dim * spec.out_dim
        assert spec.param_count == analytic


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        MlpSpec(0, 1)
    with pytest.raises(ValueError):
        MlpSpec(1, 1, hidden_layers=-1)
    with pytest.raises(ValueError):
        MlpSpec(1, 1, hidden_layers=1, hidden_width=0)
    with pytest.raises(ValueError):
        MlpSpec(1, 1, activation="softplus")


def test_zero_hidden_identity():
    spec = MlpSpec(3, 3, hidden_layers=0, bypass=False)
    params = MlpParams(spec, np.zeros(spec.param_count))
    params.view("w0")[:] = np.eye(3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.allclose(mlp_forward(spec, params, x), x)


def test_constant_output_bias():
    spec = MlpSpec(1, 1, hidden_layers=1, hidden_width=1, bypass=False)
    params = MlpParams(spec, np.zeros(spec.param_count))
    params.view("b1")[:] = 0.3
    for x in ([0.0], [5.0], [-2.0]):
        assert mlp_forward(spec, params, np.array(x)) == pytest.approx(0.3)


def test_zero_weights_output_equals_bias():
    spec = MlpSpec(4, 2, hidden_layers=2, hidden_width=8, activation="tanh", bypass=True)
    params = MlpParams(spec, np.zeros(spec.param_count))
    params.view("b2")[:] = [0.7, -0.2]
    x = np.random.default_rng(1).normal(size=(10, 4))
    out = mlp_forward(spec, params, x)
    assert np.allclose(out, np.array([0.7, -0.2]))


def test_duplicate_implementation_oracle():
    # straight-line reimplementation of the 2x2 tanh layer recurrence
    spec = MlpSpec(2, 1, hidden_layers=2, hidden_width=2, activation="tanh", bypass=True)
    params = init_xavier(spec, 7)
    x = np.array([1.0, -1.0])

    z = np.tanh(params.view("w0") @ x + params.view("b0"))
    z = np.tanh(params.view("w1") @ z + params.view("b1"))
    z = params.view("w2") @ z + params.view("b2")
    z = z + params.view("bypass") @ x

    assert np.allclose(mlp_forward(spec, params, x), z, rtol=0, atol=1e-15)


def test_init_xavier_bounds_and_zero_biases():
    spec = MlpSpec(6, 3, hidden_layers=2, hidden_width=10)
    params = init_xavier(spec, 0)
    for key, _off, shape in spec.layout():
        block = params.view(key)
        if key.startswith("b") and key != "bypass":
            assert np.all(block == 0.0)
        else:
            fan_out, fan_in = shape
            bound = xavier_bound(fan_in, fan_out)
            assert np.all(np.abs(block) <= bound)
            assert np.any(block != 0.0)


def test_init_xavier_deterministic():
    spec = MlpSpec(4, 2)
    a = init_xavier(spec, 11).flat
    b = init_xavier(spec, 11).flat
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_xavier(spec, 12).flat)


@pytest.mark.parametrize("activation", ["tanh", "relu", "sigmoid"])
@pytest.mark.parametrize("bypass", [True, False])
def test_graph_matches_numpy_forward(activation, bypass):
    spec = MlpSpec(3, 2, hidden_layers=2, hidden_width=5, activation=activation, bypass=bypass)
    params = init_xavier(spec, 5)
    x = np.random.default_rng(6).normal(size=(4, 3))
    tape = Tape()
    p_node = tape.parameter("p", params.flat)
    out = mlp_graph(tape, spec, p_node, tape.constant(x))
    assert np.allclose(out.value, mlp_forward(spec, params, x), rtol=0, atol=1e-14)


def test_forward_input_width_check():
    spec = MlpSpec(3, 1)
    params = init_xavier(spec, 0)
    with pytest.raises(ValueError):
        mlp_forward(spec, params, np.ones((2, 4)))


def test_flat_length_check():
    spec = MlpSpec(3, 1)
    with pytest.raises(ValueError):
        MlpParams(spec, np.zeros(spec.param_count + 1))


def test_lipschitz_on_bounded_box():
    # finite-difference slopes stay under the product-of-norms bound
    spec = MlpSpec(3, 2, hidden_layers=2, hidden_width=8, activation="tanh", bypass=True)
    params = init_xavier(spec, 3)
    bound = 1.0
    for i in range(spec.hidden_layers + 1):
        bound *= np.linalg.norm(params.view(f"w{i}"), 2)
    bound += np.linalg.norm(params.view("bypass"), 2)
    rng = np.random.default_rng(8)
    a = rng.uniform(-2, 2, size=(200, 3))
    b = rng.uniform(-2, 2, size=(200, 3))
    fa = mlp_forward(spec, params, a)
    fb = mlp_forward(spec, params, b)
    slopes = np.linalg.norm(fa - fb, axis=1) / np.linalg.norm(a - b, axis=1)
    assert np.all(np.isfinite(slopes))
    assert np.max(slopes) <= bound + 1e-9
