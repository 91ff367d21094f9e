import math

import numpy as np
import pytest

import ngpt

CORPUS = ("the model learns a small corpus of plain text and every step moves its weights " * 60).strip()


def test_schemes_and_plan_point():
    assert set(ngpt.schemes()) >= {"nugpt", "completep", "baseline"}
    p = ngpt.plan("nugpt", (2, 16, 100), (16, 64, 800), 2.0**-6)
    assert p["scheme"] == "nugpt"
    values = {k: v for k, v in p.items() if k != "scheme"}
    assert math.isclose(min(values.values(), key=lambda v: abs(v - 2.0**-7)), 2.0**-7, rel_tol=1e-12)
    assert any(math.isclose(v, 2.0**-7 * 4.0**-0.75, rel_tol=1e-12) for v in values.values())


def test_plan_rejects_unknown_scheme():
    with pytest.raises(ngpt.ConfigError):
        ngpt.plan("adamw", (1, 16, 10), (1, 16, 10), 0.01)
    with pytest.raises(ValueError):
        ngpt.plan("adamw", (1, 16, 10), (1, 16, 10), 0.01)


def test_schedule_endpoints():
    assert ngpt.lr_at(0, 10, 0.5) == 0.5
    assert math.isclose(ngpt.lr_at(10, 10, 0.5), 0.05)


def test_alignment_exponents():
    rng = np.random.default_rng(0)
    h = rng.standard_normal(256)
    u = rng.standard_normal(64)
    assert ngpt.pair_exponent(np.outer(u, h), h) == pytest.approx(1.0, abs=1e-9)
    g = rng.standard_normal((128, 512))
    assert ngpt.pair_exponent(g, rng.standard_normal(512)) == pytest.approx(0.5, abs=0.1)
    assert ngpt.pair_exponent(np.zeros((3, 4)), np.ones(4)) is None


def test_power_law_fit():
    xs = [2.0**i for i in range(6)]
    fit = ngpt.fit_power_law(xs, [3.0 * x**-0.5 for x in xs])
    assert fit["exponent"] == pytest.approx(-0.5, abs=1e-12)
    assert fit["coefficient"] == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(ngpt.ConfigError):
        ngpt.fit_power_law([1.0, 2.0], [1.0, 2.0])


def test_model_forward_and_checkpoint(tmp_path):
    m = ngpt.Model(n_layers=2, n_heads=2, d_key=8, vocab=32, seq_len=8, seed=3)
    assert m.d_model == 16
    assert m.max_norm_deviation() < 1e-12
    z = m.logits([1, 2, 3, 4])
    assert z.shape == (4, 32)
    assert np.isfinite(z).all()
    e = m.parameter("E_input")
    assert np.allclose(np.linalg.norm(e, axis=0), 1.0)
    path = tmp_path / "m.ckpt"
    m.save(path)
    again = ngpt.Model.load(path)
    assert np.array_equal(again.logits([1, 2, 3, 4]), z)
    with pytest.raises(OSError):
        ngpt.Model.load(tmp_path / "missing.ckpt")


def test_training_is_deterministic_and_learns():
    settings = {"train.batch_size": 4, "model.seq_len": 32, "train.val_batches": 1}
    a = ngpt.train(CORPUS, shape="1x2x40", eta_global=2.0**-5, seed=1, settings=settings)
    b = ngpt.train(CORPUS, shape="1x2x40", eta_global=2.0**-5, seed=1, settings=settings)
    assert np.array_equal(np.array(a["history"]), np.array(b["history"]), equal_nan=True)
    assert not a["diverged"]
    assert a["final_val_loss_ema"] < a["initial_val_loss"]
    assert a["model"].max_norm_deviation() < 1e-12


def test_depth_scaling_grid():
    r = ngpt.depth_scaling(widths=[16], depths=[2, 4, 8], alphas=[1.0], trials=2, workers=2)
    assert len(r["cells"]) == 3
    assert r["slopes"][0]["axis"] == "depth"
    assert r["csv"].startswith("N,L,alpha_depth")


def test_sweep_writes_outputs(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text(CORPUS)
    cfg = f"""
[sweep]
lrs = 2^-7, 2^-6
corpus = {corpus}
output_dir = {tmp_path / 'out'}
[shape]
base = 1x2x5
targets = 1x2x5
[train]
batch_size = 2
val_batches = 1
[model]
seq_len = 16
"""
    r = ngpt.sweep(cfg)
    assert len(r["results"]) == 2
    assert r["optima"][0]["lr"] in (2.0**-7, 2.0**-6)
    for name in ("sweep.csv", "optima.csv", "sweep.svg"):
        assert (tmp_path / "out" / name).exists()
    with pytest.raises(ngpt.ConfigError):
        ngpt.sweep(cfg, {"sweep.bogus": "1"})
