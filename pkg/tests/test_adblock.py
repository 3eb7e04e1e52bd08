import numpy as np
import pytest

from fpnetlab import adblock as ad
from fpnetlab import channel as ch
from fpnetlab import fpnet, nn
from fpnetlab.fpnet import BfmData, EncoderConfig

SYS = ch.SystemConfig()
ENC = EncoderConfig.for_system(SYS)


@pytest.fixture(scope="module")
def images():
    env = ch.generate_environment(SYS, 20, 30, seed=0)
    normal = BfmData.from_batch(ch.sample_all_zones(env, 12, 25.0, seed=0))
    rng = np.random.default_rng(1)
    v = rng.standard_normal((120, 28, 3, 1)) + 1j * rng.standard_normal((120, 28, 3, 1))
    v /= np.linalg.norm(v, axis=-2, keepdims=True)
    idx = rng.permutation(len(normal))
    return normal.images[idx[:180]], normal.images[idx[180:]], fpnet.bfm_to_image(v)


@pytest.fixture(scope="module")
def detector(images):
    cfg = ad.AdConfig(epochs=40, lr=2e-3, batch=32)
    return ad.train_adblock_images(images[0], ENC, cfg)


def test_config_validation():
    assert ad.AdConfig().kernel == 3
    assert ad.AdConfig(kernel=5).kernel == 5
    with pytest.raises(ValueError):
        ad.AdConfig(kernel=4)
    with pytest.raises(ValueError):
        ad.AdConfig(lr=0)


def test_architecture_has_no_quantizer():
    model = ad.AdblockModel(ENC, ad.AdConfig(kernel=5))
    kinds = [type(l).__name__ for l in model.encoder.layers + model.decoder.layers]
    assert "UniformQuantizerSTE" not in kinds
    assert kinds.count("ResBlock") == 2
    assert model.encoder.layers[0].kernel == 5
    x = np.zeros((2, 28, 3, 2), np.float32)
    assert model(x).shape == x.shape


def test_normal_reconstructs_better_than_off_manifold(detector, images):
    _, held_out, anomalies = images
    normal = ad.anomaly_scores(detector, held_out)
    anom = ad.anomaly_scores(detector, anomalies)
    assert normal.mean() < anom.mean()
    assert np.median(anom) > np.median(normal)


def test_scores_are_nonnegative_and_deterministic(detector, images):
    s1 = ad.anomaly_scores(detector, images[1])
    s2 = ad.anomaly_scores(detector, images[1])
    assert np.all(s1 >= 0) and np.array_equal(s1, s2)
    assert ad.anomaly_score(detector, images[1][0]) == pytest.approx(s1[0])
    with pytest.raises(nn.ShapeError):
        ad.anomaly_scores(detector, np.zeros((1, 28, 2, 2)))


def test_score_is_mean_squared_error(detector, images):
    x = images[1][:3]
    d = detector(x).astype(np.float64) - x
    assert np.allclose(ad.anomaly_scores(detector, x), (d**2).reshape(3, -1).mean(axis=1))


def test_memorizes_a_single_sample(images):
    # constant-step Adam keeps jittering around the optimum, so the frozen
    # score sits above the best training loss
    x = np.repeat(images[0][:1], 8, axis=0)
    hist = fpnet.TrainHistory()
    model = ad.train_adblock_images(x, ENC, ad.AdConfig(epochs=2000, lr=3e-3, batch=8), hist)
    assert min(hist.column("loss")) < 1e-6
    assert ad.anomaly_scores(model, x[:1])[0] < 1e-3


def test_empty_normal_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        ad.train_adblock_images(np.zeros((0, 28, 3, 2), np.float32), ENC, ad.AdConfig(epochs=1))


def test_fpnet_untouched_by_detector_training(images):
    env = ch.generate_environment(SYS, 20, 30, seed=0)
    data = BfmData.from_batch(ch.sample_all_zones(env, 3, 25.0, seed=0))
    model = fpnet.build_model(SYS, ENC, 20)
    h = nn.state_hash(model)
    det = ad.train_adblock(model, data, ad.AdConfig(epochs=2, batch=16))
    ad.detect(det, ad.reconstruct_bfm(model, data), 0.1)
    assert nn.state_hash(model) == h


def test_sweep_endpoints_and_monotonicity():
    rng = np.random.default_rng(0)
    normal, anom = rng.gamma(2, 1, 300), rng.gamma(2, 1, 300) + 4
    curve = ad.sweep_threshold(normal, anom, grid=200)
    assert curve.tpr[0] == 1 and curve.fpr[0] == 1
    assert curve.tpr[-1] == 0 and curve.fpr[-1] == 0
    assert np.all(np.diff(curve.tpr) <= 0) and np.all(np.diff(curve.fpr) <= 0)
    assert np.all(np.diff(curve.thresholds) > 0)
    f1 = np.nan_to_num(curve.f1, nan=-1)
    assert f1[curve.best] == f1.max()
    ties = np.flatnonzero(f1 == f1.max())
    assert curve.fpr[curve.best] == curve.fpr[ties].min()
    with pytest.raises(ValueError):
        ad.sweep_threshold([], anom)


def test_sweep_csv(tmp_path):
    curve = ad.sweep_threshold([0.1, 0.2], [0.5, 0.9], grid=5)
    curve.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "threshold,tpr,fpr,precision,f1" and len(lines) == 6


def test_detect_is_strict(detector, images):
    x = images[1][:4]
    s0 = ad.anomaly_score(detector, x[0])
    assert not ad.detect(detector, x[0], s0)
    assert ad.detect(detector, x[0], np.nextafter(s0, -np.inf))
    with pytest.raises(ValueError, match="threshold"):
        ad.detect(ad.AdblockModel(ENC, ad.AdConfig()), x)


def test_detect_per_class_thresholds(detector, images):
    x = images[1][:4]
    s = ad.anomaly_scores(detector, x)
    lam = np.array([np.inf, -np.inf])
    assert ad.detect(detector, x, lam, classes=[0, 1, 0, 1]).tolist() == [False, True, False, True]
    with pytest.raises(ValueError):
        ad.detect(detector, x, lam)
    per = ad.per_class_thresholds(s, [0, 0, 1, 1], s + 1, [0, 0, 0, 0], 3)
    assert per.shape == (3,) and per[1] == per[2]


def test_zero_input_is_flagged(detector, images):
    normal = ad.anomaly_scores(detector, images[1])
    anom = ad.anomaly_scores(detector, images[2])
    lam = ad.sweep_threshold(normal, anom).threshold
    assert ad.detect(detector, np.zeros((28, 3, 2), np.float32), lam)


def test_misrouting_report(images):
    env = ch.generate_environment(SYS, 20, 30, seed=0)
    ood = BfmData.from_batch(ch.sample_csi(env, ch.OOD_LABEL, 40, 25.0, seed=0))
    frac = ad.misrouting_report(fpnet.build_model(SYS, ENC, 20), ood)
    assert frac.shape == (20,) and frac.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(ad.misrouting_report(fpnet.build_model(SYS, ENC, 20), ood.v[:0]) == 0)
