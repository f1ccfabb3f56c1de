import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relnet.netcore import (
    GeneratorNet,
    GradTape,
    LayerSpec,
    TapeConsumedError,
    default_architecture,
    init_params,
    layers_for,
    load_checkpoint,
    make_net,
    save_checkpoint,
)

from .helpers import central_difference_check


def _net(weights, regime="linear", biases=None, block_dim=1, blocks=None):
    widths = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    layers = layers_for(widths, regime)
    biases = biases or [None] * len(weights)
    in_b = blocks[0] if blocks else widths[0] // block_dim
    out_b = blocks[1] if blocks else widths[-1] // block_dim
    return GeneratorNet("f", block_dim, in_b, out_b, layers, list(zip(weights, biases)), regime)


def test_forward_identity_layer():
    net = _net([np.eye(2)])
    out = net.forward(np.array([[0.3, -0.2]]))
    assert out.tolist() == [[0.3, -0.2]]


def test_forward_linear_product_of_layers():
    target = np.array([[-0.7115346, 0.54249334], [-0.02051556, -0.54249316]])
    # split the published product into two factors
    w1 = np.array([[2.0, 1.0], [0.5, -1.0]])
    w2 = target @ np.linalg.inv(w1)
    net = _net([w1, w2])
    out = net.forward(np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(out, [[-0.7115346, -0.02051556]], atol=1e-12)


def test_forward_tanh_layer():
    net = GeneratorNet("t", 1, 1, 1, [LayerSpec(1, 1, "tanh"), LayerSpec(1, 1)], [(np.array([[2.0]]), None), (np.eye(1), None)], "nonlinear")
    out = net.forward(np.array([[0.5]]))
    assert out[0, 0] == pytest.approx(math.tanh(1.0), abs=1e-15)
    assert out[0, 0] == pytest.approx(0.7615941559557649)


def test_forward_dimension_mismatch():
    net = _net([np.eye(2)])
    with pytest.raises(ValueError, match="width"):
        net.forward(np.zeros((3, 3)))


def test_backward_hand_derivative():
    w = np.eye(2)
    x = np.array([[1.0, 2.0]])
    tape = GradTape()
    y = tape.linear(tape.constant(x), tape.param(w))
    loss = tape.mean_sq(y)
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads[id(w)], [[2.0, 4.0], [4.0, 8.0]])


def test_backward_constant_in_parameter_is_zero():
    w = np.ones((2, 2))
    unused = np.ones((3, 3))
    tape = GradTape()
    tape.param(unused)
    loss = tape.mean_sq(tape.linear(tape.constant(np.ones((1, 2))), tape.param(w)))
    grads = tape.backward(loss)
    assert grads[id(unused)].shape == unused.shape
    assert not grads[id(unused)].any()


def test_tape_single_use():
    w = np.eye(1)
    tape = GradTape()
    loss = tape.mean_sq(tape.linear(tape.constant(np.ones((1, 1))), tape.param(w)))
    tape.backward(loss)
    with pytest.raises(TapeConsumedError):
        tape.backward(loss)


def test_shared_parameter_accumulates():
    # f(f(x)) with f(x) = w x, loss = (w^2 x)^2 -> d/dw = 4 w^3 x^2
    w = np.array([[1.5]])
    tape = GradTape()
    x = tape.constant(np.array([[2.0]]))
    y = tape.linear(tape.linear(x, tape.param(w)), tape.param(w))
    grads = tape.backward(tape.mean_sq(y))
    assert grads[id(w)][0, 0] == pytest.approx(4 * 1.5**3 * 4.0)


@pytest.mark.parametrize("regime", ["linear", "affine", "nonlinear"])
@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(regime, seed):
    rng = np.random.default_rng(seed)
    net = make_net("f", 1, (2, 2), regime, rng)
    if regime == "affine":
        for _, b in net.params:
            b[...] = rng.normal(size=b.shape)
    x = rng.uniform(-1, 1, size=(16, 2))

    def loss_fn(ops):
        y = net.forward(ops.constant(x) if isinstance(ops, GradTape) else x, ops)
        return ops.mean_sq(y)

    err = central_difference_check(loss_fn, net.arrays(), rng, coords=15, directions=3)
    assert err < 1e-5


def test_default_architecture():
    assert default_architecture(2) == [2, 6, 6, 100, 50, 2]
    assert default_architecture(4) == [4, 10, 10, 100, 50, 4]
    assert default_architecture(1) == [1, 4, 4, 100, 50, 1]
    assert default_architecture(1, 4) == [1, 4, 4, 100, 50, 4]


def test_init_deterministic():
    layers = layers_for(default_architecture(4), "nonlinear")
    a = init_params(layers, 7)
    b = init_params(layers, 7)
    for (wa, ba), (wb, bb) in zip(a, b):
        assert wa.tobytes() == wb.tobytes()
        assert ba is None and bb is None


def test_init_linear_has_no_bias_and_affine_does():
    assert all(b is None for _, b in init_params(layers_for([2, 3, 2], "linear"), 0))
    assert all(b is not None and not b.any() for _, b in init_params(layers_for([2, 3, 2], "affine"), 0))


def test_init_bound():
    (w, _), = init_params([LayerSpec(4, 100)], 3)
    bound = math.sqrt(6 / 104)
    assert bound == pytest.approx(0.2402, abs=1e-4)
    assert np.abs(w).max() <= bound


def test_regime_invariants():
    with pytest.raises(ValueError):
        GeneratorNet("f", 1, 2, 2, [LayerSpec(2, 2, "tanh")], [], "linear")
    with pytest.raises(ValueError):
        GeneratorNet("f", 1, 2, 2, [LayerSpec(2, 2)], [], "affine")
    with pytest.raises(ValueError):
        # nonlinear output layer must be identity
        GeneratorNet("f", 1, 2, 2, [LayerSpec(2, 2, "tanh")], [], "nonlinear")
    with pytest.raises(ValueError):
        GeneratorNet("f", 1, 2, 2, [LayerSpec(2, 3)], [], "linear")


def test_nonlinear_layers():
    layers = layers_for(default_architecture(2), "nonlinear")
    assert [l.activation for l in layers] == ["tanh"] * 4 + ["identity"]
    assert not any(l.use_bias for l in layers)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_linear_net_is_matrix_multiplication(block_dim, depth, seed):
    rng = np.random.default_rng(seed)
    width = 2 * block_dim
    widths = [width] + list(rng.integers(1, 7, size=depth - 1)) + [width] if depth > 1 else [width, width]
    net = make_net("f", block_dim, (2, 2), "linear", rng, widths=[int(w) for w in widths])
    m = np.eye(width)
    for w, _ in net.params:
        m = w @ m
    x = rng.uniform(-1, 1, size=(20, width))
    np.testing.assert_allclose(net.forward(x), x @ m.T, atol=1e-12, rtol=0)


def test_composition_consistency():
    rng = np.random.default_rng(5)
    f = make_net("f", 1, (2, 2), "nonlinear", rng)
    g = make_net("g", 1, (2, 2), "nonlinear", rng)
    x = rng.uniform(-1, 1, size=(8, 2))
    two_pass = f.forward(g.forward(x))
    tape = GradTape()
    merged = f.forward(g.forward(tape.constant(x), tape), tape)
    assert np.array_equal(two_pass, merged.value)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    nets = {
        "f": make_net("f", 1, (2, 2), "affine", rng),
        "u": make_net("u", 2, (0, 2), "linear", rng, monoidal="tensor"),
    }
    nets["f"].params[0][1][...] = rng.normal(size=nets["f"].params[0][1].shape)
    path = tmp_path / "ckpt.json"
    save_checkpoint(nets, path)
    back = load_checkpoint(path)
    assert set(back) == {"f", "u"}
    for k in nets:
        for a, b in zip(nets[k].arrays(), back[k].arrays()):
            assert a.tobytes() == b.tobytes()
        assert back[k].regime == nets[k].regime and back[k].monoidal == nets[k].monoidal
