import math

import numpy as np
import pytest

import pimforce


def test_forward_kinematics_zero_pose():
    j = pimforce.forward_kinematics(np.zeros(20))
    assert j.shape == (21, 3)
    assert np.allclose(j[0], 0.0)
    assert math.isclose(np.linalg.norm(j[1] - j[0]), 0.5134, abs_tol=1e-12)
    assert math.isclose(np.linalg.norm(j[9] - j[0]), 1.0, abs_tol=1e-12)
    assert pimforce.is_canonical(j)


def test_canonicalize_undoes_similarity():
    rng = np.random.default_rng(0)
    j = pimforce.forward_kinematics(rng.uniform(-0.5, 0.5, 20))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    moved = 4.2 * j @ q.T + np.array([3.0, -1.0, 7.0])
    assert not pimforce.is_canonical(moved)
    assert np.abs(pimforce.canonicalize(moved) - j).max() < 1e-6


def test_stft_matches_numpy():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(8, 1248))
    s = pimforce.stft(w)
    assert s.shape == (8, 32, 64)
    n = np.arange(256)
    hamming = 0.54 - 0.46 * np.cos(2 * np.pi * n / 256)
    frame = w[3, 32 * 5 : 32 * 5 + 256] * hamming
    ref = np.abs(np.fft.fft(frame))[:64]
    assert np.abs(s[3, 5] - ref).max() <= 1e-9 * ref.max()


def test_voxelize_peak():
    g = np.full((21, 3), 24.0)
    h = pimforce.voxelize(g)
    assert h.shape == (21, 48, 48, 48)
    assert h[0, 24, 24, 24] == 1.0
    assert math.isclose(h[0, 25, 24, 24], math.exp(-0.5), rel_tol=1e-12)


def test_metrics_perfect():
    rng = np.random.default_rng(2)
    p = rng.uniform(0, 20, size=(10, 9))
    c = (p > 5).astype(float)
    m = pimforce.metrics(p, p, c, c)
    assert m["pooled"]["accuracy"] == 1.0
    assert m["pooled"]["r2"] == 1.0
    assert m["pooled"]["nrmse"] == 0.0


def test_shape_errors():
    with pytest.raises(ValueError):
        pimforce.stft(np.zeros((8, 100)))
    with pytest.raises(ValueError):
        pimforce.forward_kinematics(np.zeros(19))


def test_parameter_counts():
    c = pimforce.parameter_counts("desk")
    assert c["total"] == c["emg"] + c["hand"] + c["fusion"]
    with pytest.raises(ValueError):
        pimforce.parameter_counts("huge")


def test_end_to_end(tmp_path):
    raw, ds, ck = tmp_path / "raw", tmp_path / "ds", tmp_path / "m.ckpt"
    cfg = pimforce.synth(str(raw), seed=4, postures=["I-Press", "Medium Wrap"], duration=2.0)
    assert cfg["seed"] == 4
    n = pimforce.preprocess(str(raw), str(ds))
    assert n > 0
    tiny = tmp_path / "tiny.json"
    tiny.write_text(
        '{"preset":"desk","emg_encoder":[4,4,4],"emg_decoder":[4,4,1],'
        '"resnet_layers":[1,1],"resnet_channels":[4,6],"feature_dim":8,"fusion_width":6}'
    )
    history = pimforce.train(str(ds), str(ck), seed=1, epochs=1, model=str(tiny))
    assert len(history) == 1 and history[0]["loss"] > 0
    report = pimforce.evaluate(str(ds), str(ck))
    assert report["pooled"]["frames"] == n
    tf = pimforce.evaluate(str(ds), str(ck), teacher_forced=True)
    assert tf["pooled"]["accuracy"] == 1.0
    r = pimforce.infer(str(ck), str(raw / "emg.csv"), str(raw / "pose.csv"))
    assert r["c_hat"].shape[1] == 9
    assert np.all((r["p_hat"] >= 0) & (r["p_hat"] <= 20))
    with pytest.raises(ValueError):
        pimforce.evaluate(str(ds), str(tmp_path / "missing.ckpt"))
