import math

import numpy as np
import pytest

from fpnetlab import nn
from fpnetlab.nn.gradcheck import check_layer, check_parameters

F64 = np.float64


def naive_conv(x, w, b):
    # direct zero-padded correlation, (B,H,W,Cin) x (Cout,Cin,k,k)
    bsz, h, wd, _ = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros((bsz, h, wd, cout))
    for i in range(h):
        for j in range(wd):
            patch = xp[:, i : i + k, j : j + k, :]
            out[:, i, j, :] = np.einsum("bhwc,ochw->bo", patch, w) + b
    return out


def layer_cases(seed):
    rng = np.random.default_rng(seed)
    return {
        "conv": (nn.Conv2d(2, 3, 3, rng=rng, dtype=F64), 0.1 * rng.standard_normal((2, 5, 3, 2))),
        "conv5": (nn.Conv2d(1, 2, 5, rng=rng, dtype=F64), 0.1 * rng.standard_normal((2, 4, 6, 1))),
        "dense": (nn.Dense(6, 4, rng=rng, dtype=F64), 0.1 * rng.standard_normal((3, 6))),
        "bn": (nn.BatchNorm(3, dtype=F64), 0.1 * rng.standard_normal((4, 2, 3))),
        "lrelu": (nn.LeakyReLU(0.3), 0.1 * rng.standard_normal((3, 5))),
        "tanh": (nn.Tanh(), 0.1 * rng.standard_normal((3, 5))),
        "resblock": (nn.ResBlock(2, (4, 3), rng=rng, dtype=F64), 0.1 * rng.standard_normal((2, 4, 3, 2))),
        "reshape": (nn.Sequential(nn.Flatten(), nn.Reshape((3, 4))), rng.standard_normal((2, 4, 3))),
    }


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", ["conv", "conv5", "dense", "bn", "lrelu", "tanh", "resblock", "reshape"])
def test_layer_gradients(name, seed):
    layer, x = layer_cases(seed)[name]
    assert check_layer(layer, x, seed=seed) < 1e-4


def test_batchnorm_inference_gradient():
    layer, x = layer_cases(0)["bn"]
    layer.running_mean = np.full(3, 0.2)
    layer.running_var = np.full(3, 0.5)
    assert check_layer(layer, x, training=False) < 1e-4


def test_conv_matches_direct_correlation():
    rng = np.random.default_rng(1)
    conv = nn.Conv2d(2, 3, 3, rng=rng, dtype=F64)
    conv.bias.data = rng.standard_normal(3)
    x = rng.standard_normal((2, 28, 3, 2))
    assert np.allclose(conv(x), naive_conv(x, conv.weight.data, conv.bias.data))


def test_conv_identity_kernel():
    conv = nn.Conv2d(2, 2, 3, dtype=F64)
    conv.weight.data[:] = 0
    conv.weight.data[0, 0, 1, 1] = conv.weight.data[1, 1, 1, 1] = 1
    x = np.random.default_rng(0).standard_normal((3, 28, 3, 2))
    assert np.array_equal(conv(x), x)


def test_conv_shape_errors():
    with pytest.raises(nn.ShapeError, match="Conv2d"):
        nn.Conv2d(2, 2)(np.zeros((1, 4, 4, 3), np.float32))
    with pytest.raises(ValueError):
        nn.Conv2d(2, 2, 4)


def test_dense_zero_weights_gives_bias():
    d = nn.Dense(4, 3)
    d.weight.data[:] = 0
    d.bias.data[:] = [1, 2, 3]
    assert np.array_equal(d(np.ones((5, 4), np.float32)), np.tile([1, 2, 3], (5, 1)))


def test_softmax_and_xent():
    logits = np.zeros((4, 20))
    loss, _ = nn.softmax_xent(logits, np.arange(4))
    assert loss == pytest.approx(math.log(20))
    p = nn.softmax(np.random.default_rng(0).standard_normal((6, 5)) * 50)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-9)
    with pytest.raises(nn.NonFiniteError):
        nn.softmax_xent(np.array([[np.nan, 0.0]]), np.array([0]))
    with pytest.raises(ValueError):
        nn.softmax_xent(np.zeros((1, 3)), np.array([3]))


def test_loss_gradients():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((4, 5))
    labels = rng.integers(0, 5, 4)
    _, g = nn.softmax_xent(logits, labels)
    num = np.zeros_like(logits)
    for i in np.ndindex(logits.shape):
        d = np.zeros_like(logits)
        d[i] = 1e-5
        num[i] = (nn.softmax_xent(logits + d, labels)[0] - nn.softmax_xent(logits - d, labels)[0]) / 2e-5
    assert np.allclose(g, num, rtol=1e-4, atol=1e-9)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert nn.mse(a, a)[0] == 0
    assert nn.mse(a, b)[0] == pytest.approx(nn.mse(b, a)[0])
    _, gm = nn.mse(a, b)
    assert np.allclose(gm, 2 * (a - b) / a.size)


def test_adam_first_step_and_zero_grad():
    p = nn.Parameter(np.zeros(5))
    opt = nn.Adam([p], lr=1e-3)
    opt.step([np.ones(5)])
    assert np.allclose(p.data, -1e-3, rtol=1e-4)
    q = nn.Parameter(np.ones(3))
    nn.adam_step(nn.Adam([q]), [q], [np.zeros(3)])
    assert np.array_equal(q.data, np.ones(3))
    with pytest.raises(ValueError):
        nn.adam_step(nn.Adam([q]), [p], [np.zeros(5)])


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(0)
        d = nn.Dense(3, 2, rng=rng)
        opt = nn.Adam(d.parameters(), lr=1e-2)
        x = rng.standard_normal((8, 3)).astype(np.float32)
        for _ in range(5):
            d.zero_grad()
            _, g = nn.mse(d(x, True), np.zeros((8, 2), np.float32))
            d.backward(g)
            opt.step()
        return d.weight.data.copy()

    assert np.array_equal(run(), run())


def test_quantizer_examples():
    assert nn.uniform_quantize(np.array([0.7]), 1)[0] == 0.5
    assert nn.uniform_quantize(np.array([-0.7]), 1)[0] == -0.5
    q = nn.uniform_quantize(np.array([0.0]), 5)
    assert abs(q[0]) <= 1 / 32
    x = np.linspace(-1, 1, 1001)
    q = nn.uniform_quantize(x, 5)
    assert np.array_equal(nn.uniform_quantize(q, 5), q)
    assert len(np.unique(q)) == 32
    assert np.max(np.abs(q - x)) <= 1 / 32 + 1e-12
    for bad in (0, 17):
        with pytest.raises(ValueError):
            nn.UniformQuantizerSTE(bad)


def test_quantizer_passes_gradient_straight_through():
    ste = nn.UniformQuantizerSTE(5)
    g = np.random.default_rng(0).standard_normal((4, 20))
    ste(np.zeros((4, 20)), True)
    assert np.array_equal(ste.backward(g), g)
    ste.bypass = True
    x = np.full((1, 3), 0.123)
    assert np.array_equal(ste(x), x)


def test_non_finite_values_are_rejected():
    with pytest.raises(nn.NonFiniteError):
        nn.check_finite(np.array([1.0, np.inf]), "test")


def test_batchnorm_train_infer_consistency():
    rng = np.random.default_rng(0)
    bn = nn.BatchNorm(2, dtype=F64)
    x = 3 + 2 * rng.standard_normal((64, 2))
    for _ in range(150):
        train_out = bn(x, True)
    assert np.allclose(bn(x, False), train_out, atol=1e-3)


def test_full_model_gradient_check():
    rng = np.random.default_rng(0)
    model = nn.Sequential(
        nn.Conv2d(2, 2, 3, rng=rng, dtype=F64), nn.BatchNorm(2, dtype=F64), nn.LeakyReLU(),
        nn.Flatten(), nn.Dense(24, 5, rng=rng, dtype=F64), nn.Tanh(),
        nn.UniformQuantizerSTE(5), nn.Dense(5, 4, rng=rng, dtype=F64),
    )
    model.layers[6].bypass = True
    x = 0.1 * rng.standard_normal((6, 4, 3, 2))
    y = rng.integers(0, 4, 6)

    def loss():
        return nn.softmax_xent(model(x, True), y)[0]

    def backward():
        model.zero_grad()
        _, g = nn.softmax_xent(model(x, True), y)
        model.backward(g)

    assert check_parameters(loss, backward, model.parameters(), n_checks=20) < 1e-3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a = nn.Sequential(nn.Conv2d(2, 2, rng=rng), nn.BatchNorm(2), nn.Flatten(), nn.Dense(8, 3, rng=rng))
    a(rng.standard_normal((4, 2, 2, 2)).astype(np.float32), True)
    h = nn.save_checkpoint(tmp_path / "m.tnck", a, {"epoch": 3})
    b = nn.Sequential(nn.Conv2d(2, 2, rng=np.random.default_rng(9)), nn.BatchNorm(2), nn.Flatten(), nn.Dense(8, 3))
    assert nn.load_checkpoint(tmp_path / "m.tnck", b) == {"epoch": 3}
    assert nn.state_hash(b) == h == nn.state_hash(a)
    x = rng.standard_normal((2, 2, 2, 2)).astype(np.float32)
    assert np.array_equal(a(x), b(x))
    assert nn.read_header(tmp_path / "m.tnck")["graph"]["type"] == "Sequential"


def test_checkpoint_rejects_mismatch_and_corruption(tmp_path):
    a = nn.Sequential(nn.Dense(4, 3))
    nn.save_checkpoint(tmp_path / "m.tnck", a)
    with pytest.raises(nn.CheckpointError, match="graph"):
        nn.load_checkpoint(tmp_path / "m.tnck", nn.Sequential(nn.Dense(4, 2)))
    data = (tmp_path / "m.tnck").read_bytes()
    (tmp_path / "t.tnck").write_bytes(data[:-4])
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(tmp_path / "t.tnck", a)
    (tmp_path / "x.tnck").write_bytes(b"JUNK" + data[4:])
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(tmp_path / "x.tnck", a)


def test_quantizer_rejects_nan():
    with pytest.raises(nn.NonFiniteError):
        nn.uniform_quantize(np.array([0.1, np.nan]), 5)
