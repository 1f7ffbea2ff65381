import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decorgd.convops import (GeometryError, col2im, conv_output_size, im2col,
                             maxpool_backward, maxpool_forward)
from decorgd.decorrelation import DecorrelationState
from decorgd.network import (Conv, Dense, MaxPool, Network, ShapeError, forward,
                             init_weights, load_checkpoint, logits, relu, save_checkpoint)


def conv_loops(X, W, kernel, stride, padding):
    """Direct nested-loop convolution (cross-correlation), ``W`` is ``(C_out, C_in, k, k)``."""
    B, C, H, Wd = X.shape
    Xp = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (H + 2 * padding - kernel) // stride + 1
    ow = (Wd + 2 * padding - kernel) // stride + 1
    out = np.zeros((B, W.shape[0], oh, ow))
    for b in range(B):
        for o in range(W.shape[0]):
            for r in range(oh):
                for c in range(ow):
                    patch = Xp[b, :, r * stride:r * stride + kernel, c * stride:c * stride + kernel]
                    out[b, o, r, c] = np.sum(patch * W[o])
    return out


# -- im2col / col2im -----------------------------------------------------------

def test_single_patch_is_row_major():
    X = np.arange(9.0).reshape(1, 1, 3, 3)
    cols = im2col(X, 3)
    assert cols.shape == (9, 1)
    np.testing.assert_array_equal(cols[:, 0], np.arange(9.0))


def test_stride_two_gives_four_columns():
    cols = im2col(np.arange(16.0).reshape(1, 1, 4, 4), 2, stride=2)
    assert cols.shape == (4, 4)
    np.testing.assert_array_equal(cols[:, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(cols[:, 3], [10, 11, 14, 15])


def test_incompatible_geometry_reports_size():
    with pytest.raises(GeometryError, match="output"):
        im2col(np.zeros((1, 1, 2, 2)), 5)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (1, 2), (3, 0)])
def test_conv_through_im2col_matches_loops(stride, padding, rng):
    X = rng.standard_normal((2, 3, 8, 8))
    W = rng.standard_normal((4, 3, 3, 3))
    cols = im2col(X, 3, stride, padding)
    oh = conv_output_size(8, 3, stride, padding)
    out = (W.reshape(4, -1) @ cols).reshape(4, 2, oh, oh).transpose(1, 0, 2, 3)
    np.testing.assert_allclose(out, conv_loops(X, W, 3, stride, padding), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 10_000))
def test_col2im_is_the_adjoint_of_im2col(stride, padding, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2, 2, 7, 6))
    cols = im2col(X, 3, stride, padding)
    Y = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * Y)
    rhs = np.sum(X * col2im(Y, X.shape, 3, stride, padding))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


# -- max pooling ---------------------------------------------------------------

def test_maxpool_picks_bottom_right():
    pooled, idx = maxpool_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
    assert pooled.item() == 4.0
    assert idx.item() == 3


def test_maxpool_tie_goes_to_lowest_index():
    pooled, idx = maxpool_forward(np.full((1, 1, 2, 2), 7.0), 2, 2)
    assert pooled.item() == 7.0
    assert idx.item() == 0


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (2, 3)])
def test_maxpool_matches_brute_force(window, stride, rng):
    X = rng.standard_normal((2, 3, 8, 8))
    pooled, idx = maxpool_forward(X, window, stride)
    o = (8 - window) // stride + 1
    assert pooled.shape == (2, 3, o, o)
    for b in range(2):
        for c in range(3):
            for r in range(o):
                for q in range(o):
                    win = X[b, c, r * stride:r * stride + window, q * stride:q * stride + window]
                    assert pooled[b, c, r, q] == win.max()
                    flat = idx[b, c, r, q]
                    assert X[b, c, flat // 8, flat % 8] == win.max()


def test_maxpool_backward_routes_to_argmax(rng):
    X = rng.standard_normal((1, 2, 4, 4))
    pooled, idx = maxpool_forward(X, 2, 2)
    d = rng.standard_normal(pooled.shape)
    dX = maxpool_backward(d, idx, X.shape)
    assert np.count_nonzero(dX) == d.size
    # directional derivative of sum(d * pool(X)) by central differences
    V = rng.standard_normal(X.shape)
    h = 1e-6
    fd = (np.sum(d * maxpool_forward(X + h * V, 2, 2)[0])
          - np.sum(d * maxpool_forward(X - h * V, 2, 2)[0])) / (2 * h)
    assert np.sum(dX * V) == pytest.approx(fd, rel=1e-6)


# -- init ----------------------------------------------------------------------

def test_init_bounds_for_fan_in_four():
    W = init_weights(Dense(4, 50), seed=0)
    assert W.shape == (50, 4)
    assert np.all(np.abs(W) <= 0.5)


def test_init_is_deterministic():
    np.testing.assert_array_equal(init_weights(Dense(8, 8), 3), init_weights(Dense(8, 8), 3))
    assert not np.array_equal(init_weights(Dense(8, 8), 3), init_weights(Dense(8, 8), 4))


def test_init_mean_is_zero_within_three_sigma():
    W = init_weights(Dense(100, 100), seed=1)
    bound = 0.1
    sigma = bound / np.sqrt(3) / np.sqrt(W.size)
    assert abs(W.mean()) < 3 * sigma


def test_conv_init_shape_and_bound():
    W = init_weights(Conv(3, 2, 5), seed=0)
    assert W.shape == (5, 18)
    assert np.all(np.abs(W) <= 1 / np.sqrt(18))


# -- forward -------------------------------------------------------------------

def test_identity_pipeline():
    net = Network([Dense(2, 2, "identity")], (2,), loss="mse")
    net.layers[0].W = np.eye(2)
    np.testing.assert_allclose(forward(net, np.array([[3.0], [-1.0]])).output, [[3.0], [-1.0]])


def test_relu_definition():
    np.testing.assert_array_equal(relu(np.array([2.0, -2.0])), [2.0, 0.0])
    net = Network([Dense(2, 2, "relu")], (2,), loss="mse")
    net.layers[0].W = np.eye(2)
    np.testing.assert_array_equal(forward(net, np.array([[2.0], [-2.0]])).output, [[2.0], [0.0]])


def test_dense_chain_against_hand_rolled(rng):
    net = Network([Dense(5, 4), Dense(4, 3, "identity")], (5,), seed=2)
    for layer in net.layers:
        n = layer.decor.n
        layer.decor = DecorrelationState(M=np.eye(n) + 0.1 * rng.standard_normal((n, n)),
                                         mu=rng.standard_normal(n))
    X = rng.standard_normal((5, 6))
    l0, l1 = net.layers
    a = np.maximum(l0.W @ (l0.decor.M @ (X - l0.decor.mu[:, None])), 0)
    out = l1.W @ (l1.decor.M @ (a - l1.decor.mu[:, None]))
    np.testing.assert_allclose(logits(forward(net, X)), out, atol=1e-12)


def test_conv_pool_dense_against_loops(rng):
    net = Network([Conv(3, 2, 3, padding=1), MaxPool(2, 2), Dense(3 * 3 * 3, 4, "identity")],
                  (2, 6, 6), seed=1)
    X = rng.standard_normal((2, 2, 6, 6))
    W0 = net.layers[0].W.reshape(3, 2, 3, 3)
    a = np.maximum(conv_loops(X, W0, 3, 1, 1), 0)
    p = maxpool_forward(a, 2, 2)[0]
    out = net.layers[2].W @ p.reshape(2, -1).T
    np.testing.assert_allclose(logits(forward(net, X)), out, atol=1e-12)


def test_forward_leaves_parameters_untouched(rng):
    net = Network([Dense(3, 3), Dense(3, 2, "identity")], (3,))
    before = [layer.W.copy() for layer in net.layers]
    forward(net, rng.standard_normal((3, 4)))
    for b, layer in zip(before, net.layers):
        np.testing.assert_array_equal(b, layer.W)


def test_identity_decorrelation_matches_plain_network(rng):
    specs = [Dense(4, 6), Dense(6, 3, "identity")]
    X = rng.standard_normal((4, 5))
    with_decor = forward(Network(specs, (4,), seed=3), X).output
    without = forward(Network(specs, (4,), seed=3, decorrelate=False), X).output
    np.testing.assert_array_equal(with_decor, without)


def test_shape_errors():
    with pytest.raises(ShapeError, match="expects 5 inputs"):
        Network([Dense(4, 3), Dense(5, 2, "identity")], (4,))
    with pytest.raises(ShapeError, match="channels"):
        Network([Conv(3, 2, 4), Dense(4, 2, "identity")], (3, 5, 5))
    with pytest.raises(ShapeError):
        Network([Dense(4, 3, "relu")], (4,), loss="cce")
    net = Network([Dense(4, 2, "identity")], (4,))
    with pytest.raises(ShapeError):
        forward(net, np.zeros((3, 2)))


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    specs = [Conv(3, 1, 2), MaxPool(2, 2), Dense(2 * 3 * 3, 3, "identity")]
    net = Network(specs, (1, 8, 8), seed=5)
    for i in net.weighted_layers:
        n = net.layers[i].decor.n
        net.layers[i].decor = DecorrelationState(M=rng.standard_normal((n, n)),
                                                 mu=rng.standard_normal(n))
    path = tmp_path / "net.dcnw"
    save_checkpoint(net, path)
    other = load_checkpoint(Network(specs, (1, 8, 8), seed=99), path)
    for a, b in zip(net.layers, other.layers):
        if a.weighted:
            np.testing.assert_array_equal(a.W, b.W)
            np.testing.assert_array_equal(a.decor.M, b.decor.M)
            np.testing.assert_array_equal(a.decor.mu, b.decor.mu)
    assert path.read_bytes()[:4] == b"DCNW"


def test_checkpoint_rejects_foreign_files(tmp_path):
    net = Network([Dense(3, 2, "identity")], (3,))
    bad = tmp_path / "x.bin"
    bad.write_bytes(b"nope" + bytes(20))
    with pytest.raises(ValueError, match="not a network checkpoint"):
        load_checkpoint(net, bad)
    good = tmp_path / "net.dcnw"
    save_checkpoint(net, good)
    with pytest.raises(ShapeError):
        load_checkpoint(Network([Dense(3, 4, "identity")], (3,)), good)
