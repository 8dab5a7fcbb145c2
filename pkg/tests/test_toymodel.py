from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy.special import softmax

from radpretrain import corpus
from radpretrain.toymodel import Discriminator, Generator, TrainConfig, Trainer, TrainingError, train
from radpretrain.toymodel import checkpoint
from radpretrain.toymodel.model import mean_pool, parameter_count
from radpretrain.toymodel.optim import AdamW, Schedule
from radpretrain.toymodel.train import rtd_auc

from conftest import QUOTED


@pytest.fixture(scope="module")
def tiny_corpus(rules, headers):
    text = f"FINDINGS: {QUOTED[0]} {QUOTED[1]}\nIMPRESSION: {QUOTED[2]}"
    return [corpus.preprocess(corpus.RawReport(f"r{i}", text), rules, headers) for i in range(20)]


@pytest.fixture(scope="module")
def overfit_runs(tiny_corpus, tax, base):
    runs = {}
    for objective in ("mlm", "ss", "kg"):
        cfg = TrainConfig(objective=objective, steps=500, batch_size=8, holdout_frac=0.0, eval_every=1000)
        tr = Trainer(cfg, tiny_corpus, tax, base)
        runs[objective] = (tr, tr.run())
    return runs


def _inputs(rng, V, B=3, T=10):
    x = rng.integers(5, V, size=(B, T))
    valid = np.ones((B, T), dtype=bool)
    valid[0, 7:] = False
    return x, valid


def test_parameter_budget(vocab):
    rng = np.random.default_rng(0)
    for d in (8, 32, 64):
        g = Generator.create(rng, len(vocab), d, 128)
        disc = Discriminator.create(rng, len(vocab), d, 128)
        assert parameter_count(g.params) < 10**6
        assert parameter_count(disc.params) < 10**6


def test_untrained_generator_is_near_uniform_and_normalized(vocab):
    rng = np.random.default_rng(1)
    g = Generator.create(rng, len(vocab), 32, 128)
    x, valid = _inputs(rng, len(vocab))
    rows, cols = np.array([0, 1, 2, 2]), np.array([1, 4, 0, 9])
    p = g.probs(x, valid, rows, cols)
    assert np.all(np.isfinite(p))
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-9
    assert p.max(axis=1).max() / p.min(axis=1).min() < 1.5


def test_row_sums_on_random_inputs(vocab):
    rng = np.random.default_rng(2)
    for _ in range(10):
        g = Generator.create(rng, len(vocab), 16, 64, head_scale=1.0)
        x, valid = _inputs(rng, len(vocab), B=2, T=12)
        p = g.probs(x, valid, np.array([0, 1]), np.array([3, 11]))
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-9


def test_padding_does_not_leak(vocab):
    rng = np.random.default_rng(3)
    disc = Discriminator.create(rng, len(vocab), 16, 64)
    x, valid = _inputs(rng, len(vocab))
    z, sec, pooled, _ = disc.forward(x, valid)
    x2 = x.copy()
    x2[0, 7:] = 5
    z2, sec2, pooled2, _ = disc.forward(x2, valid)
    assert np.array_equal(z[0, :7], z2[0, :7]) and np.array_equal(sec, sec2)
    assert sec.shape == (3, 5) and pooled.shape == (3, 16)


def test_overfit_three_sentences(overfit_runs):
    tr, _rep = overfit_runs["mlm"]
    b = tr._batch(tr._examples(tr.train_chunks, 0)[:8])
    logits, _h, _s = tr.gen.forward(b.x_masked, b.valid, b.rows, b.cols)
    p_true = softmax(logits, axis=1)[np.arange(len(b.rows)), b.x[b.rows, b.cols]]
    assert p_true.mean() > 0.9


@pytest.mark.parametrize("objective", ["mlm", "ss", "kg"])
def test_loss_falls_for_every_objective(overfit_runs, objective):
    _tr, rep = overfit_runs[objective]
    total = rep.component("total")
    assert len(total) == 500
    assert total[-1] < total[0]
    assert all(math.isfinite(v) for row in rep.curve for v in row.values())


def _trainer(fixture, **kw):
    cfg = TrainConfig(**{"steps": 20, "d_model": 8, "eval_every": 10, **kw})
    return Trainer(cfg, fixture.reports[:40], fixture.tax, fixture.vocab)


def test_sample_corrupt(fixture):
    tr = _trainer(fixture)
    b = tr._batch(tr._examples(tr.train_chunks, 0)[:2])
    k = len(b.rows)
    V = len(fixture.vocab)
    onehot = np.zeros((k, V))
    onehot[np.arange(k), b.x[b.rows, b.cols]] = 1.0
    assert np.array_equal(tr.sample_corrupt(onehot, b, np.random.default_rng(0)), b.x)
    p = softmax(np.random.default_rng(1).normal(size=(k, V)), axis=1)
    a = tr.sample_corrupt(p, b, np.random.default_rng(5))
    assert np.array_equal(a, tr.sample_corrupt(p, b, np.random.default_rng(5)))
    outside = np.ones_like(b.valid)
    outside[b.rows, b.cols] = False
    assert np.array_equal(a[outside], b.x[outside])


def test_sample_frequencies(fixture):
    tr = _trainer(fixture)
    b = tr._batch(tr._examples(tr.train_chunks, 0)[:1])
    b.rows, b.cols = b.rows[:1], b.cols[:1]
    p = np.array([[0.5, 0.3, 0.15, 0.05] + [0.0] * 6])
    n = 10_000
    rng = np.random.default_rng(11)
    draws = np.array([tr.sample_corrupt(p, b, rng)[0, b.cols[0]] for _ in range(n)])
    for tok, q in enumerate(p[0]):
        hits = int((draws == tok).sum())
        assert abs(hits - n * q) <= 3 * math.sqrt(n * q * (1 - q)) + (0 if q else 0.5)


def _numeric(f, p, idx, eps=1e-6):
    old = p[idx]
    p[idx] = old + eps
    hi = f()
    p[idx] = old - eps
    lo = f()
    p[idx] = old
    return (hi - lo) / (2 * eps)


@pytest.mark.parametrize("objective", ["mlm", "kg", "ss"])
def test_full_step_gradient(fixture, objective):
    tr = _trainer(fixture, objective=objective, d_model=4)
    batch = tr._batch(tr._examples(tr.train_chunks, 0)[:1])
    res = tr.compute(batch, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for model, grads, key in ((tr.gen, res.grads_gen, "gen"), (tr.disc, res.grads_disc, "disc")):
        used = np.unique(batch.x_masked if key == "gen" else res.x_corrupt)
        for name, p in sorted(model.params.items()):
            if name.endswith(".E"):
                idxs = [(int(t), j) for t in rng.choice(used, 2) for j in range(p.shape[1])]
            elif name.endswith(".P"):
                idxs = [(t, j) for t in range(2) for j in range(p.shape[1])]
            else:
                idxs = list(np.ndindex(p.shape))[:24]
            for idx in idxs:
                num = _numeric(lambda: tr.compute(batch, x_corrupt=res.x_corrupt).losses[key], p, idx)
                ana = grads[name][idx]
                # the floor absorbs round-off: losses are O(100), so differences carry ~1e-9 noise
                assert abs(ana - num) <= 1e-3 * max(abs(ana), abs(num), 1e-4), (name, idx, ana, num)


def test_checkpoint_round_trip(tmp_path, vocab):
    rng = np.random.default_rng(4)
    disc = Discriminator.create(rng, len(vocab), 16, 64)
    checkpoint.save(tmp_path / "d.ckpt", disc.params, {"model": "discriminator"})
    params, meta = checkpoint.load(tmp_path / "d.ckpt")
    assert meta["model"] == "discriminator"
    x, valid = _inputs(rng, len(vocab))
    a = disc.forward(x, valid)
    b = Discriminator(params).forward(x, valid)
    for u, v in zip(a[:3], b[:3]):
        assert np.array_equal(u, v)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(path)


def test_seeded_runs_are_byte_identical(fixture, tmp_path):
    cfg = dict(objective="kg", steps=30, d_model=8, eval_every=15)
    a = train(TrainConfig(**cfg), fixture.reports[:40], fixture.tax, fixture.vocab, tmp_path / "a")
    b = train(TrainConfig(**cfg), fixture.reports[:40], fixture.tax, fixture.vocab, tmp_path / "b")
    assert a.to_json() == b.to_json()
    assert (tmp_path / "a" / "train_report.json").read_bytes() == (tmp_path / "b" / "train_report.json").read_bytes()
    for name in ("generator-final.ckpt", "discriminator-final.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = train(TrainConfig(**{**cfg, "run_seed": 1}), fixture.reports[:40], fixture.tax, fixture.vocab)
    assert c.component("total") != a.component("total")


def test_report_logs_components(fixture):
    rep = train(TrainConfig(objective="kg", steps=5, d_model=8, eval_every=5), fixture.reports[:30],
                fixture.tax, fixture.vocab)
    keys = {"gen", "disc", "reg_gen", "reg_disc", "kg", "ss", "total", "lr", "step"}
    assert keys <= set(rep.curve[0])
    assert json.loads(rep.to_json())["steps_run"] == 5


def test_degenerate_kg_weight_matches_plain_run(fixture):
    common = dict(steps=25, d_model=8, eval_every=25, mask_strategy="kg")
    kg = train(TrainConfig(objective="kg", lambda_kg=0.0, **common), fixture.reports[:40], fixture.tax, fixture.vocab)
    mlm = train(TrainConfig(objective="mlm", **common), fixture.reports[:40], fixture.tax, fixture.vocab)
    assert kg.component("disc") == mlm.component("disc")
    assert kg.component("gen") == mlm.component("gen")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_dump(fixture, tmp_path):
    tr = _trainer(fixture)
    tr.disc.params["disc.w"][:] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        tr.run(tmp_path)
    dumps = list(tmp_path.glob("nan_batch_step*.json"))
    assert len(dumps) == 1
    assert "batch" in json.loads(dumps[0].read_text())


def test_early_stopping(fixture, monkeypatch):
    tr = _trainer(fixture, steps=100, eval_every=5, patience=3)
    monkeypatch.setattr(tr, "evaluate", lambda: {"total": 1.0, "gen": 0, "disc": 0, "kg": 0, "ss": 0,
                                                 "rtd_auc": 0.5, "section_accuracy": None})
    rep = tr.run()
    # first eval sets the best, three flat evals exhaust the patience
    assert rep.stopped_early and rep.steps_run == 20


@pytest.mark.parametrize(
    "bad",
    [{"objective": "x"}, {"steps": 0}, {"lr": -1.0}, {"d_model": 65}, {"max_len": 256},
     {"schedule": "cosine"}, {"lambda_kg": -1.0}, {"mask_strategy": "y"}],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig.from_mapping(bad)


def test_config_from_mapping_coerces():
    cfg = TrainConfig.from_mapping({"steps": "12", "lr": 1, "early_stopping": "false"})
    assert cfg.steps == 12 and cfg.lr == 1.0 and cfg.early_stopping is False


def test_schedule_shape():
    s = Schedule("polynomial", 1.0, 100, 0.1)
    lrs = [s(t) for t in range(100)]
    assert lrs[9] == 1.0 and lrs[0] == pytest.approx(0.1)
    assert all(a <= b for a, b in zip(lrs[:10], lrs[1:10]))
    assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))
    assert s(100) == 0.0
    assert Schedule("constant", 0.3)(57) == 0.3


def test_adamw_decays_matrices_only():
    params = {"W": np.ones((2, 2)), "b": np.ones(2)}
    opt = AdamW(params, Schedule("constant", 0.1), weight_decay=0.5)
    opt.step({"W": np.zeros((2, 2)), "b": np.zeros(2)})
    assert np.allclose(params["W"], 0.95) and np.array_equal(params["b"], np.ones(2))


def test_adamw_first_step_moves_by_lr():
    params = {"w": np.array([0.0, 0.0])}
    AdamW(params, Schedule("constant", 0.01), weight_decay=0.0).step({"w": np.array([3.0, -0.2])})
    assert np.allclose(params["w"], [-0.01, 0.01], atol=1e-8)


def test_rtd_auc_matches_pairwise_count():
    rng = np.random.default_rng(12)
    for _ in range(50):
        s = rng.integers(0, 5, 30).astype(float)
        y = rng.random(30) < 0.4
        if y.all() or not y.any():
            continue
        pos, neg = s[y], s[~y]
        want = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg) / (len(pos) * len(neg))
        assert rtd_auc(s, y) == pytest.approx(want, abs=1e-12)
    assert rtd_auc(np.ones(3), np.zeros(3, dtype=bool)) is None


def test_mean_pool_ignores_padding():
    h = np.arange(24, dtype=float).reshape(2, 3, 4)
    valid = np.array([[True, True, False], [True, True, True]])
    got = mean_pool(h, valid)
    assert np.array_equal(got[0], h[0, :2].mean(axis=0)) and np.array_equal(got[1], h[1].mean(axis=0))
