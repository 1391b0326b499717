"""Smoke tests for the Python bindings: every exposed surface is called
once with small inputs and cross-checked against easy identities."""

import math
import os
import tempfile

import numpy as np
import pytest

import permflow as pf


def test_render_and_permutation_invariance():
    k = 3
    x = pf.sample_params(k, "symmetric", seed=7)
    assert x.shape == (3 * k,)
    assert np.all(np.abs(x) <= 1.0)

    y = pf.render(x, k, "symmetric", n_samples=512)
    assert y.shape == (512,)
    assert np.max(np.abs(y)) <= 1.0 + 1e-6

    perm = [2, 0, 1]
    xp = x.copy()
    for f in range(3):
        for i in range(k):
            xp[f * k + i] = x[f * k + perm[i]]
    yp = pf.render(xp, k, "symmetric", n_samples=512)
    assert np.max(np.abs(y - yp)) <= 1e-9


def test_scale_frequencies_bands():
    w = pf.scale_frequencies(np.array([1.0, 1.0]), 2, "asymmetric")
    assert w[0] == pytest.approx(math.pi / 2)
    assert w[1] == pytest.approx(math.pi)


def test_dft_and_metrics_identities():
    x = pf.sample_params(4, "symmetric", seed=1)
    y = pf.render(x, 4, "symmetric", n_samples=2048)

    bins = pf.dft_mag(y)
    assert bins.shape == (1025,)

    assert pf.lsd(y, y) == 0.0
    assert pf.mss(y, y) == 0.0
    assert pf.wmfcc(y, y) == 0.0
    assert pf.sot(y, y) == 0.0
    assert pf.rms_cosine(y, 0.5 * y) == pytest.approx(1.0)

    x_hat = pf.sample_params(4, "symmetric", seed=2)
    assert pf.lac(x, x_hat, 4) <= pf.mse(x, x_hat) + 1e-15
    assert pf.lac(x, x, 4) == 0.0


def test_hungarian_against_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = rng.integers(1, 7)
        cost = rng.uniform(-1, 1, size=(n, n))
        perm_h, cost_h = pf.hungarian(cost)
        perm_b, cost_b = pf.brute_force_assignment(cost)
        assert cost_h == pytest.approx(cost_b, abs=0)
        assert sorted(perm_h) == list(range(n))


def test_ot_pairing_recovers_identity():
    rng = np.random.default_rng(4)
    src = rng.normal(size=(6, 3))
    assert pf.ot_pair_minibatch(src, src) == list(range(6))


def test_dtw_and_w1():
    a = np.array([[0.0], [1.0], [2.0]])
    assert pf.dtw_l1(a, a) == 0.0
    u = np.array([1.0, 0.0, 0.0])
    v = np.array([0.0, 0.0, 1.0])
    assert pf.w1_spectrum(u, v) == pytest.approx(1.0, rel=1e-6)


def test_param2tok_round_trip_shapes():
    p = pf.p2t_init(6, 2, 8, seed=5)
    assert p.A.shape == (2, 6)
    tokens = pf.p2t_forward(np.linspace(-1, 1, 6), p)
    assert tokens.shape == (2, 8)
    back = pf.p2t_inverse(tokens, p)
    assert back.shape == (6,)
    assert p.Z.shape == p.Zp.shape == (6, 8)
    assert np.array_equal(p.Z, p.Zp)

    fx = pf.conditional_symmetry_fixture()
    assert fx["passed"]


def test_flow_path_and_guidance():
    x0 = np.zeros((2, 3))
    x1 = np.ones((2, 3))
    x_t, u = pf.sample_path(x0, x1, [0.25, 0.75])
    assert np.allclose(x_t[0], 0.25)
    assert np.allclose(x_t[1], 0.75)
    assert np.allclose(u, 1.0)

    vc = np.full((1, 3), 2.0)
    vu = np.zeros((1, 3))
    g = pf.guided_field(vc, vu, 2.0)
    assert np.allclose(g, 4.0)


def test_dataset_train_evaluate_round_trip():
    with tempfile.TemporaryDirectory() as td:
        ds = os.path.join(td, "ds")
        pf.generate_dataset(2, "symmetric", count=24, seed=9, n_samples=64, out_dir=ds)
        assert os.path.exists(os.path.join(ds, "meta.json"))
        assert os.path.getsize(os.path.join(ds, "params.f32")) == 24 * 6 * 4

        ckpt = os.path.join(td, "model.ckpt")
        res = pf.train(
            "",
            ckpt,
            {
                "model": "ffn-mse",
                "k": "2",
                "task": "symmetric",
                "steps": "5",
                "batch": "8",
                "train_data": ds,
                "val_every": "0",
            },
        )
        assert res["steps_run"] == 5
        assert os.path.exists(ckpt)

        rep = pf.evaluate(ckpt, ds, out_csv=os.path.join(td, "eval.csv"), max_items=6)
        assert len(rep["lsd"]) == 6
        assert "lac_mean" in rep
        assert os.path.exists(os.path.join(td, "eval.csv"))


def test_check_suite_fixture():
    results = pf.run_check_suite("fixture", "unused")
    assert all(r["passed"] for r in results)
