from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radpretrain import losses
from radpretrain.losses import LossWeights, RtdBatch

TRIALS = 1000


# -- independent loop references -------------------------------------------


def ref_reg(ha, hp, tau=1.0):
    B = len(ha)

    def sim(u, v):
        return sum(a * b for a, b in zip(u, v)) / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))

    total = 0.0
    for i in range(B):
        num = math.exp(sim(ha[i], hp[i]) / tau)
        den = sum(math.exp(sim(ha[i], hp[j]) / tau) for j in range(B))
        total += num / den
    return math.log(total) / B


def ref_mlm(x, m, p_g, reg, lam):
    return lam * reg + sum(-math.log(p_g[k][x[i]]) for k, i in enumerate(m))


def ref_bce(d, real):
    return sum(-math.log(dt) if r else -math.log(1 - dt) for dt, r in zip(d, real))


def ref_disc(x, xc, d, reg, lam):
    return lam * reg + ref_bce(d, [a == b for a, b in zip(x, xc)])


def ref_kg(x, xc, d, sites_x, sites_c):
    real = []
    for t in range(len(x)):
        if sites_x[t] is None or sites_c[t] is None:
            real.append(x[t] == xc[t])
        else:
            real.append(any(s in sites_x[t] for s in sites_c[t]))
    return ref_bce(d, real)


def random_batch(rng, V=12, n=None):
    n = n or int(rng.integers(2, 15))
    x = rng.integers(5, V, n)
    k = int(rng.integers(1, n + 1))
    m = np.sort(rng.choice(n, k, replace=False))
    logits = rng.normal(size=(k, V))
    p_g = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    xc = x.copy()
    xc[m] = rng.integers(5, V, k)
    xm = x.copy()
    xm[m] = 4
    d = rng.uniform(0.02, 0.98, n)
    sites = [["lungs"], ["heart"], ["lungs", "pleura"], None]
    sx = [sites[i] for i in rng.integers(0, 4, n)]
    sc = [sites[i] for i in rng.integers(0, 4, n)]
    return RtdBatch(x, xm, xc, p_g, d, m, {"sites_x": sx, "sites_c": sc})


# -- pinned scalar cases --------------------------------------------------------


def test_reg_single_row_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert losses.l_reg(rng.normal(size=(1, 5)), rng.normal(size=(1, 5))) == 0.0


def test_reg_orthonormal_pair():
    e = np.eye(2)
    want = 0.5 * math.log(2 * math.e / (math.e + 1))
    assert abs(losses.l_reg(e, e) - want) < 1e-9
    assert abs(want - 0.18994) < 1e-5
    assert losses.l_reg(e, e, sign=-1) == -losses.l_reg(e, e)


def test_reg_uses_final_layer_of_stacked_encodings():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(4, 3, 6))
    g = rng.normal(size=(4, 3, 6))
    assert losses.l_reg(h, g) == losses.l_reg(h[:, -1], g[:, -1])
    assert losses.l_reg(h, g, layer=0) == losses.l_reg(h[:, 0], g[:, 0])


def test_reg_zero_norm_rejected():
    with pytest.raises(losses.LossInputError):
        losses.l_reg(np.zeros((2, 3)), np.ones((2, 3)))


def _pair(d, x=(5, 6), xc=(5, 7)):
    return RtdBatch(list(x), list(x), list(xc), np.full((1, 8), 1 / 8), d, [1])


def test_mlm_pinned():
    perfect = RtdBatch([5, 6], [5, 4], [5, 6], [[0, 0, 0, 0, 0, 0, 1.0]], [0.5, 0.5], [1])
    assert losses.l_mlm(perfect) == 0.0
    half = RtdBatch([5, 6], [5, 4], [5, 6], [[0, 0, 0, 0, 0, 0.5, 0.5]], [0.5, 0.5], [1])
    assert abs(losses.l_mlm(half, lambda_a=0.0) - math.log(2)) < 1e-12
    assert abs(math.log(2) - 0.6931) < 1e-4
    assert losses.l_mlm(perfect, reg=0.19, lambda_a=1.0) == 0.19


def test_disc_pinned():
    eps = 1e-12
    clean = RtdBatch([5, 6], [5, 6], [5, 6], np.zeros((0, 8)), [1 - eps, 1 - eps], [])
    assert losses.l_disc(clean) < 1e-10
    b = _pair([0.9, 0.3])
    want = -math.log(0.9) - math.log(0.7)
    assert abs(losses.l_disc(b) - want) < 1e-12
    assert abs(want - 0.4620) < 1e-4


def test_kg_pinned():
    b = RtdBatch([5], [4], [7], np.full((1, 8), 1 / 8), [0.2], [0])
    shared = losses.site_set_relation([["lungs"]], [["lungs", "pleura"]])
    disjoint = losses.site_set_relation([["lungs"]], [["heart"]])
    assert abs(losses.l_kg(b, shared) - (-math.log(0.2))) < 1e-12
    assert abs(losses.l_kg(b, disjoint) - (-math.log(0.8))) < 1e-12
    assert abs(-math.log(0.2) - 1.609) < 1e-3 and abs(-math.log(0.8) - 0.2231) < 1e-4


def test_kg_without_replacements_is_matching_branch():
    rng = np.random.default_rng(3)
    d = rng.uniform(0.1, 0.9, 6)
    x = [5, 6, 7, 8, 9, 10]
    b = RtdBatch(x, x, x, np.zeros((0, 12)), d, [])
    sites = [["lungs"]] * 6
    assert losses.l_kg(b, losses.site_set_relation(sites, sites)) == pytest.approx(-np.log(d).sum(), abs=1e-12)


def test_kg_site_relation_on_taxonomy(tax):
    (pneu,) = tax.lookup("pneumonia")
    (atel,) = tax.lookup("atelectasis")
    (frac,) = tax.lookup("fracture")
    ids = {1: pneu.id, 2: atel.id, 3: frac.id, 4: None}
    rel = losses.site_relation([pneu.id], ids.get, tax)
    assert rel(0, 1, 1) is True
    assert rel(0, 1, 2) is True
    assert rel(0, 1, 3) is False
    assert rel(0, 1, 4) is None


def test_degenerate_kg_weight():
    rng = np.random.default_rng(4)
    for _ in range(50):
        b = random_batch(rng)
        rel = losses.batch_relation(b)
        assert losses.l_disc_kg(b, rel, 0.3, LossWeights(1.0, 0.0)) == losses.l_disc(b, 0.3)
        both = losses.l_disc_kg(b, rel, 0.3, LossWeights(1.0, 1.0))
        assert both == pytest.approx(losses.l_disc(b, 0.3) + losses.l_kg(b, rel), abs=1e-12)


# -- oracle agreement over many random batches ---------------------------------


def test_kernels_match_loop_references():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(TRIALS):
        B, dim = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        ha, hp = rng.normal(size=(B, dim)), rng.normal(size=(B, dim))
        tau = float(rng.uniform(0.2, 2.0))
        reg = losses.l_reg(ha, hp, tau)
        worst = max(worst, abs(reg - ref_reg(ha.tolist(), hp.tolist(), tau)))
        b = random_batch(rng)
        lam = float(rng.uniform(0, 2))
        x, xc, d = b.x.tolist(), b.x_corrupt.tolist(), b.d.tolist()
        rel = losses.batch_relation(b)
        pairs = [
            (losses.l_mlm(b, reg, lam), ref_mlm(x, b.m.tolist(), b.p_g.tolist(), reg, lam)),
            (losses.l_disc(b, reg, lam), ref_disc(x, xc, d, reg, lam)),
            (losses.l_kg(b, rel), ref_kg(x, xc, d, b.extra["sites_x"], b.extra["sites_c"])),
            (losses.l_disc_kg(b, rel, reg, LossWeights(lam, 0.7)),
             ref_disc(x, xc, d, reg, lam) + 0.7 * ref_kg(x, xc, d, b.extra["sites_x"], b.extra["sites_c"])),
        ]
        for got, want in pairs:
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    assert worst < 1e-12


# -- properties -------------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_raw_sums_are_non_negative(seed):
    b = random_batch(np.random.default_rng(seed))
    assert losses.mlm_term(b) >= 0
    assert losses.disc_term(b) >= 0
    assert losses.l_kg(b, losses.batch_relation(b)) >= 0


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_reg_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    B = int(rng.integers(1, 8))
    ha, hp = rng.normal(size=(B, 4)), rng.normal(size=(B, 4))
    perm = rng.permutation(B)
    assert losses.l_reg(ha[perm], hp[perm]) == pytest.approx(losses.l_reg(ha, hp), abs=1e-12)


def _concat(a, b):
    off = len(a.x)
    return RtdBatch(
        np.concatenate([a.x, b.x]), np.concatenate([a.x_masked, b.x_masked]),
        np.concatenate([a.x_corrupt, b.x_corrupt]), np.vstack([a.p_g, b.p_g]),
        np.concatenate([a.d, b.d]), np.concatenate([a.m, b.m + off]),
        {k: a.extra[k] + b.extra[k] for k in a.extra},
    )


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_sum_reduction_is_additive_and_order_free(seed):
    rng = np.random.default_rng(seed)
    a, b = random_batch(rng), random_batch(rng)
    ab, ba = _concat(a, b), _concat(b, a)
    for kernel in (losses.disc_term, losses.mlm_term, lambda z: losses.l_kg(z, losses.batch_relation(z))):
        want = kernel(a) + kernel(b)
        assert kernel(ab) == pytest.approx(want, abs=1e-10)
        assert kernel(ba) == pytest.approx(want, abs=1e-10)


def test_mean_reduction():
    rng = np.random.default_rng(5)
    b = random_batch(rng, n=9)
    assert losses.disc_term(b, "mean") == pytest.approx(losses.disc_term(b) / 9, abs=1e-12)
    with pytest.raises(losses.LossInputError):
        losses.disc_term(b, "max")


def test_clamping_is_counted():
    stats = losses.ClampStats()
    b = RtdBatch([5, 6], [5, 4], [5, 7], [[0.0] * 8], [1.0, 0.0], [1])
    assert math.isfinite(losses.l_mlm(b, stats=stats)) and stats.generator == 1
    assert math.isfinite(losses.l_disc(b, stats=stats)) and stats.discriminator == 2


def test_validate_rejects_bad_batches():
    with pytest.raises(losses.LossInputError):
        RtdBatch([5, 6], [5, 4], [7, 7], [[1 / 8] * 8], [0.5, 0.5], [1]).validate()
    with pytest.raises(losses.LossInputError):
        RtdBatch([5, 6], [5, 4], [5, 7], [[0.5] * 8], [0.5, 0.5], [1]).validate()


# -- gradients ------------------------------------------------------------------------


def test_reg_gradients():
    rng = np.random.default_rng(6)
    ha, hp = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    _v, ga, gp = losses.l_reg_grad(ha, hp, 0.7)
    assert losses.grad_check(lambda h: losses.l_reg(h, hp, 0.7), ha, ga) < 1e-4
    assert losses.grad_check(lambda h: losses.l_reg(ha, h, 0.7), hp, gp) < 1e-4


def test_logit_gradients():
    rng = np.random.default_rng(7)
    z = rng.normal(size=12)
    real = rng.random(12) < 0.5
    _v, g = losses.bce_logit_grad(z, real)
    assert losses.grad_check(lambda q: losses.bce_logit_grad(q, real)[0], z, g) < 1e-4
    logits = rng.normal(size=(5, 9))
    targets = rng.integers(0, 9, 5)
    _v, g = losses.mlm_logit_grad(logits, targets)
    assert losses.grad_check(lambda q: losses.mlm_logit_grad(q, targets)[0], logits, g) < 1e-4


def test_logit_kernels_agree_with_probability_kernels():
    rng = np.random.default_rng(8)
    z = rng.normal(size=10)
    real = rng.random(10) < 0.5
    d = 1 / (1 + np.exp(-z))
    assert losses.bce_logit_grad(z, real)[0] == pytest.approx(losses.bce_term(d, real), abs=1e-12)


def test_constant_input_gives_zero_gradient():
    h = np.ones((3, 4))
    _v, ga, gp = losses.l_reg_grad(h, h)
    assert np.all(ga == 0) and np.all(gp == 0)


# -- JSON batches ------------------------------------------------------------------------


def test_batch_json_round_trip(tmp_path):
    b = random_batch(np.random.default_rng(9))
    path = tmp_path / "b.json"
    path.write_text(json.dumps(b.to_json()))
    back = RtdBatch.load(path)
    assert losses.evaluate_all(back, 0.1) == losses.evaluate_all(b, 0.1)
