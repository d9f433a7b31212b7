import gzip
import struct
from dataclasses import replace

import numpy as np
import pytest

from xbarmit import CrossbarConfig, DefectMap, MethodCombo, Permutation
from xbarmit.ann import (
    MlpModel,
    TrainingError,
    accuracy_csv,
    crossbar_matmul,
    evaluate_on_crossbar,
    init_model,
    load_idx_dataset,
    loss_and_grads,
    make_blobs,
    prepare_layers,
    read_idx,
    train_toy,
    zero_parasitic_config,
)


@pytest.fixture(scope="module")
def trained():
    return train_toy(0)


def test_clean_accuracy_and_determinism(trained):
    model, data = trained
    assert model.accuracy(data.x_test, data.y_test) >= 0.95
    again, _ = train_toy(0)
    for a, b in zip(model.weights + model.biases, again.weights + again.biases):
        np.testing.assert_array_equal(a, b)
    assert [W.shape for W in model.weights] == [(16, 32), (32, 4)]


def test_separable_blobs_are_solved():
    data = make_blobs(1, separation=6.0, noise=0.3)
    model, _ = train_toy(1, data)
    assert model.accuracy(data.x_test, data.y_test) == 1.0


def test_training_failure_is_reported():
    data = make_blobs(2, separation=0.0)  # indistinguishable classes
    with pytest.raises(TrainingError):
        train_toy(2, data, epochs=2)


def test_gradient_check():
    rng = np.random.default_rng(0)
    model = init_model((5, 7, 3), seed=3)
    x = rng.normal(size=(9, 5))
    y = rng.integers(0, 3, 9)
    _, gW, gb = loss_and_grads(model, x, y)
    params = list(model.weights) + list(model.biases)
    grads = gW + gb
    h = 1e-6
    for _ in range(10):
        k = rng.integers(len(params))
        idx = tuple(rng.integers(s) for s in params[k].shape)
        orig = params[k][idx]
        params[k][idx] = orig + h
        lp, _, _ = loss_and_grads(model, x, y)
        params[k][idx] = orig - h
        lm, _, _ = loss_and_grads(model, x, y)
        params[k][idx] = orig
        fd = (lp - lm) / (2 * h)
        assert grads[k][idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_model_normalization(trained):
    model, _ = trained
    for W, A, s in zip(model.weights, model.normalized_weights, model.scales):
        assert s > 0 and np.abs(A).max() == pytest.approx(1.0)
        np.testing.assert_allclose(A * s, W)
    with pytest.raises(ValueError):
        MlpModel((np.ones((2, 2)),), (np.ones(3),))
    with pytest.raises(ValueError):
        MlpModel((np.full((2, 2), np.nan),), (np.ones(2),))


def test_defect_free_ideal_crossbar_matches_software(trained):
    model, data = trained
    cfg = zero_parasitic_config()
    rows = evaluate_on_crossbar(model, data, cfg, 0.0, ["Baseline", "RS+OC+PM"], [0, 1])
    clean = model.accuracy(data.x_test, data.y_test)
    assert all(r[3] == clean for r in rows)
    layers = prepare_layers(model, cfg, 0.0, MethodCombo(), 0)
    np.testing.assert_allclose(model.forward(data.x_test, crossbar_matmul(model, layers)),
                               model.forward(data.x_test), atol=1e-9)


def test_shuffle_invariance_on_ideal_crossbar(trained):
    model, data = trained
    cfg = zero_parasitic_config()
    layers = prepare_layers(model, cfg, 0.0, MethodCombo(), 0)
    shuffled = []
    for k, p in enumerate(layers):
        perm = Permutation(np.random.default_rng(k).permutation(p.cfg.rows))
        shuffled.append(replace(p, perm=perm, G_target=p.G_target[perm.order],
                                G_programmed=p.G_programmed[perm.order]))
    a = model.accuracy(data.x_test, data.y_test, crossbar_matmul(model, layers))
    b = model.accuracy(data.x_test, data.y_test, crossbar_matmul(model, shuffled))
    assert a == b


def test_independent_defects_per_layer(trained):
    model, _ = trained
    layers = prepare_layers(model, zero_parasitic_config(), 0.1, MethodCombo(), 0)
    assert [p.cfg.shape for p in layers] == [(16, 32), (32, 4)]
    assert len(layers[0].defects) == round(0.1 * 16 * 32)
    assert len(layers[1].defects) == round(0.1 * 32 * 4)


def test_layer_too_large():
    model = init_model((40, 8, 4))
    with pytest.raises(ValueError):
        prepare_layers(model, CrossbarConfig(32, 32), 0.0, MethodCombo(), 0)


def test_baseline_degrades_monotonically(trained):
    model, data = trained
    cfg = zero_parasitic_config()
    means = []
    for rate in (0.0, 0.05, 0.10, 0.20):
        rows = evaluate_on_crossbar(model, data, cfg, rate, ["Baseline"], range(5))
        means.append(np.mean([r[3] for r in rows]))
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_full_mitigation_dominates_at_ten_percent(trained):
    model, data = trained
    cfg = zero_parasitic_config()
    from xbarmit.pipeline import COMBO_NAMES
    rows = evaluate_on_crossbar(model, data, cfg, 0.1, COMBO_NAMES, range(5))
    mean = {c: np.mean([r[3] for r in rows if r[1] == c]) for c in COMBO_NAMES}
    assert all(mean["RS+OC+PM"] >= v for v in mean.values())


def test_accuracy_csv():
    text = accuracy_csv([(0.1, "RS", 3, 0.875)])
    assert text == "defect_rate,combo,seed,accuracy\n0.1,RS,3,0.875\n"


def write_idx(path, arr, code=0x08, compress=False):
    header = bytes([0, 0, code, arr.ndim]) + b"".join(struct.pack(">I", d) for d in arr.shape)
    payload = header + arr.astype(arr.dtype.newbyteorder(">")).tobytes()
    path.write_bytes(gzip.compress(payload) if compress else payload)


def test_idx_loader(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (5, 28, 28)).astype(np.uint8)
    labels = np.arange(5, dtype=np.uint8)
    write_idx(tmp_path / "ti", imgs)
    write_idx(tmp_path / "tl.gz", labels, compress=True)
    np.testing.assert_array_equal(read_idx(tmp_path / "ti"), imgs)
    np.testing.assert_array_equal(read_idx(tmp_path / "tl.gz"), labels)
    floats = np.linspace(0, 1, 6).reshape(2, 3)
    write_idx(tmp_path / "f", floats, code=0x0E)
    np.testing.assert_array_equal(read_idx(tmp_path / "f"), floats)
    ds = load_idx_dataset(tmp_path / "ti", tmp_path / "tl.gz", tmp_path / "ti", tmp_path / "tl.gz")
    assert ds.x_train.shape == (5, 784) and ds.x_train.max() <= 1.0
    (tmp_path / "bad").write_bytes(b"\x01\x02\x03")
    with pytest.raises(ValueError):
        read_idx(tmp_path / "bad")
    (tmp_path / "short").write_bytes(bytes([0, 0, 8, 1]) + struct.pack(">I", 10) + b"\x00")
    with pytest.raises(ValueError):
        read_idx(tmp_path / "short")


def test_empty_defect_map_type():
    assert len(DefectMap.empty((2, 2))) == 0
