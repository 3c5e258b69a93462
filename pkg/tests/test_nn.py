import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rasl import tensor as T
from rasl.errors import LengthError, ShapeError
from rasl.nn import ConvAutoencoder, SelfAttention, decode, encode, encoder_lengths, self_attention

V = T.Value


def attention(d=6, seed=0):
    return SelfAttention(d, np.random.default_rng(seed))


def test_zero_output_projection_is_identity():
    p = attention()
    p.w_o.data[:] = 0
    x = V(np.random.default_rng(1).normal(size=(5, 6)))
    assert np.array_equal(self_attention(x, p).data, x.data)


def test_single_step_closed_form():
    p = attention()
    x = np.random.default_rng(2).normal(size=(1, 6))
    with T.precision(np.float64):
        out = self_attention(V(x), p).data
    ref = x + x @ p.w_v.data.astype(np.float64) @ p.w_o.data.astype(np.float64)
    assert np.allclose(out, ref, atol=1e-12)


def test_matches_direct_formula():
    p = attention(d=4)
    x = np.random.default_rng(3).normal(size=(7, 4))
    with T.precision(np.float64):
        out = self_attention(V(x), p).data
    wq, wk, wv, wo = (w.data.astype(np.float64) for w in (p.w_q, p.w_k, p.w_v, p.w_o))
    logits = (x @ wq) @ (x @ wk).T / 2.0
    attn = np.exp(logits - logits.max(1, keepdims=True))
    attn /= attn.sum(1, keepdims=True)
    assert np.allclose(out, x + attn @ x @ wv @ wo, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31))
def test_permutation_equivariance(n, seed):
    p = attention()
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 6))
    perm = rng.permutation(n)
    with T.precision(np.float64):
        a = self_attention(V(x), p).data[perm]
        b = self_attention(V(x[perm]), p).data
    assert np.allclose(a, b, atol=1e-12)


def test_attention_width_mismatch():
    with pytest.raises(ShapeError):
        self_attention(V(np.ones((3, 5))), attention())


def autoencoder(d=5, channels=(4, 4, 3), seed=0):
    return ConvAutoencoder(d, channels, np.random.default_rng(seed))


def test_encoder_lengths():
    assert encoder_lengths(150) == [150, 75, 38, 19]
    ae = autoencoder()
    assert encode(V(np.zeros((150, 5))), ae).shape == (19, 3)


def test_encode_zero_input_zero_bias():
    ae = autoencoder()
    for layer in ae.encoder:
        layer.bias.data[:] = 0
    assert np.all(encode(V(np.zeros((16, 5))), ae).data == 0)


def test_first_layer_is_linear_in_scale():
    ae = autoencoder()
    layer = ae.encoder[0]
    x = np.random.default_rng(4).normal(size=(1, 5, 16))
    with T.precision(np.float64):
        a = T.conv1d(V(x), layer.weight, None, stride=2, padding="same").data
        b = T.conv1d(V(2 * x), layer.weight, None, stride=2, padding="same").data
    assert np.allclose(b, 2 * a, atol=1e-12)


def test_encode_too_short():
    with pytest.raises(LengthError):
        encode(V(np.zeros((7, 5))), autoencoder())


@pytest.mark.parametrize("n", list(range(8, 80)) + [150, 151, 300, 1023, 4096])
def test_shape_round_trip(n):
    ae = autoencoder()
    x = V(np.random.default_rng(n).normal(size=(2, n, 5)))
    assert decode(encode(x, ae), ae, n).shape == (2, n, 5)


def test_decode_zero_input_zero_bias():
    ae = autoencoder()
    for layer in ae.decoder:
        layer.bias.data[:] = 0
    assert np.all(decode(V(np.zeros((19, 3))), ae, 150).data == 0)


def test_decoder_biases_only_give_constant_rows():
    ae = autoencoder()
    for layer in ae.encoder + ae.decoder:
        layer.weight.data[:] = 0
    for layer in ae.decoder[:2]:
        layer.bias.data[:] = 0
    out = decode(encode(V(np.random.default_rng(5).normal(size=(40, 5))), ae), ae, 40).data
    assert np.array_equal(out, np.broadcast_to(ae.decoder[2].bias.data, out.shape))


def test_decode_geometry_mismatch():
    ae = autoencoder()
    with pytest.raises(ShapeError):
        decode(V(np.zeros((18, 3))), ae, 150)
    with pytest.raises(ShapeError):
        decode(V(np.zeros((19, 4))), ae, 150)


def test_transposed_layers_are_adjoint_to_their_twin():
    rng = np.random.default_rng(6)
    ae = autoencoder()
    for layer in ae.decoder:
        w = layer.weight.data.astype(np.float64)
        x = rng.normal(size=(layer.c_out, 12))
        with T.precision(np.float64):
            y = T.conv1d(V(x), V(w), stride=2)
            yy = rng.normal(size=y.shape)
            back = T.transposed_conv1d(V(yy), V(w), stride=2).data
        assert np.isclose(np.sum(y.data * yy), np.sum(x[:, : back.shape[1]] * back), rtol=1e-10)


def test_parameter_names_are_ordered_and_unique():
    ae = autoencoder()
    names = [n for n, _ in ae.named_parameters()]
    assert names[:2] == ["encoder.0.weight", "encoder.0.bias"]
    assert len(names) == len(set(names)) == 12
