"""Self-check suite behind ``radpretrain verify``.

Every check is seeded, so two runs on one machine produce byte-identical
reports. Nothing here records wall-clock time.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, softmax

from radpretrain import losses, pipeline, syngen
from radpretrain.corpus import load_headers, load_rules
from radpretrain.masking import QuotaError, check_example, mask_random, quota
from radpretrain.taxonomy import Taxonomy, load_taxonomy
from radpretrain.tokenizer import Provenance, load_base_vocab, strip_prefix, tokenize

logger = logging.getLogger(__name__)

VERIFY_SEED = 20240101


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)


@dataclass
class VerifyReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        body = {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}
        return json.dumps(body, sort_keys=True, indent=1) + "\n"


# --------------------------------------------------------------------------
# naive references: plain Python loops, no shared code with the kernels


def _cos(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def naive_l_reg(h_a, h_p, tau: float) -> float:
    B = len(h_a)
    total = 0.0
    for i in range(B):
        sims = [_cos(h_a[i], h_p[j]) / tau for j in range(B)]
        top = max(sims)
        denom = sum(math.exp(s - top) for s in sims)
        total += math.exp(sims[i] - top) / denom
    return math.log(total) / B


def _nlog(p: float) -> float:
    return -math.log(min(max(p, losses.EPS), 1 - losses.EPS))


def naive_l_mlm(batch: losses.RtdBatch, reg: float, lam: float) -> float:
    out = lam * reg
    for k, pos in enumerate(batch.m):
        out += -math.log(max(float(batch.p_g[k][int(batch.x[pos])]), losses.EPS))
    return out


def naive_l_disc(batch: losses.RtdBatch, reg: float, lam: float) -> float:
    out = lam * reg
    for t in range(len(batch.x)):
        d = float(batch.d[t])
        out += _nlog(d) if batch.x_corrupt[t] == batch.x[t] else _nlog(1 - d)
    return out


def naive_l_kg(batch: losses.RtdBatch, related) -> float:
    out = 0.0
    for t in range(len(batch.x)):
        real = batch.x_corrupt[t] == batch.x[t] if related[t] is None else related[t]
        d = float(batch.d[t])
        out += _nlog(d) if real else _nlog(1 - d)
    return out


def random_batch(rng: np.random.Generator):
    n = int(rng.integers(2, 24))
    V = int(rng.integers(3, 30))
    x = rng.integers(0, V, size=n)
    k = int(rng.integers(1, n + 1))
    m = np.sort(rng.choice(n, size=k, replace=False))
    p_g = rng.dirichlet(np.ones(V), size=k)
    x_corrupt = x.copy()
    swap = rng.random(k) < 0.5
    x_corrupt[m[swap]] = rng.integers(0, V, size=int(swap.sum()))
    x_masked = x.copy()
    x_masked[m] = V  # stand-in [MASK]
    d = rng.uniform(0.01, 0.99, size=n)
    related = [None if r < 1 / 3 else bool(r < 2 / 3) for r in rng.random(n)]
    return losses.RtdBatch(x, x_masked, x_corrupt, p_g, d, m, {"related": related}), related


# --------------------------------------------------------------------------
# checks


def check_loss_kernels(trials: int = 1000, seed: int = VERIFY_SEED) -> CheckResult:
    rng = np.random.default_rng([seed, 1])
    worst = dict.fromkeys(("l_reg", "l_mlm", "l_disc", "l_kg", "l_disc_kg"), 0.0)

    def rel(a, b):
        return abs(a - b) / max(1.0, abs(b))

    for _ in range(trials):
        B, d = int(rng.integers(1, 9)), int(rng.integers(2, 10))
        tau = float(rng.uniform(0.05, 2.0))
        ha, hp = rng.normal(size=(B, d)), rng.normal(size=(B, d))
        worst["l_reg"] = max(worst["l_reg"], rel(losses.l_reg(ha, hp, tau), naive_l_reg(ha.tolist(), hp.tolist(), tau)))
        batch, related = random_batch(rng)
        reg, lam, lam_kg = float(rng.normal()), float(rng.uniform(0, 2)), float(rng.uniform(0, 2))
        relate = losses.table_relation(related)
        w = losses.LossWeights(lam, lam_kg)
        worst["l_mlm"] = max(worst["l_mlm"], rel(losses.l_mlm(batch, reg, lam), naive_l_mlm(batch, reg, lam)))
        worst["l_disc"] = max(worst["l_disc"], rel(losses.l_disc(batch, reg, lam), naive_l_disc(batch, reg, lam)))
        worst["l_kg"] = max(worst["l_kg"], rel(losses.l_kg(batch, relate), naive_l_kg(batch, related)))
        ref = naive_l_disc(batch, reg, lam) + lam_kg * naive_l_kg(batch, related)
        worst["l_disc_kg"] = max(worst["l_disc_kg"], rel(losses.l_disc_kg(batch, relate, reg, w), ref))
    b1 = losses.l_reg(rng.normal(size=(1, 5)), rng.normal(size=(1, 5)))
    b2 = losses.l_reg(np.eye(2), np.eye(2), 1.0)
    expected = 0.5 * math.log(2 * math.e / (math.e + 1))
    ok = all(v <= 1e-12 for v in worst.values()) and b1 == 0.0 and abs(b2 - expected) <= 1e-9
    return CheckResult("loss_kernels", ok, {"trials": trials, "max_rel_diff": worst, "l_reg_b1": b1,
                                            "l_reg_b2_orthonormal": b2, "l_reg_b2_expected": expected})


def check_gradients(seed: int = VERIFY_SEED) -> CheckResult:
    rng = np.random.default_rng([seed, 2])
    errs: dict[str, float] = {}
    B, d = 4, 8
    ha, hp = rng.normal(size=(B, d)), rng.normal(size=(B, d))
    _v, ga, gp = losses.l_reg_grad(ha, hp, 0.7)
    errs["l_reg/h_a"] = losses.grad_check(lambda a: losses.l_reg(a, hp, 0.7), ha, ga)
    errs["l_reg/h_p"] = losses.grad_check(lambda p: losses.l_reg(ha, p, 0.7), hp, gp)

    logits = rng.normal(size=(5, 11))
    targets = rng.integers(0, 11, size=5)
    _v, g = losses.mlm_logit_grad(logits, targets)

    def mlm_of(lg):
        b = losses.RtdBatch(targets, targets, targets, softmax(lg, axis=1), np.full(5, 0.5), np.arange(5))
        return losses.l_mlm(b, 0.0, 0.0)

    errs["l_mlm/logits"] = losses.grad_check(mlm_of, logits, g)

    n = 12
    z = rng.normal(size=n)
    x = rng.integers(0, 9, size=n)
    xc = x.copy()
    xc[::3] = (x[::3] + 1) % 9
    related = [None if r < 1 / 3 else bool(r < 2 / 3) for r in rng.random(n)]
    relate = losses.table_relation(related)

    def mk(zz):
        return losses.RtdBatch(x, x, xc, np.zeros((n, 9)) + 1 / 9, expit(zz), np.arange(n))

    real = xc == x
    _v, gd = losses.bce_logit_grad(z, real)
    errs["l_disc/logits"] = losses.grad_check(lambda zz: losses.l_disc(mk(zz), 0.0, 0.0), z, gd)
    kg_real = losses.kg_targets(mk(z), relate)
    _v, gk = losses.bce_logit_grad(z, kg_real)
    errs["l_kg/logits"] = losses.grad_check(lambda zz: losses.l_kg(mk(zz), relate), z, gk)
    errs["l_disc_kg/logits"] = losses.grad_check(
        lambda zz: losses.l_disc_kg(mk(zz), relate, 0.0, losses.LossWeights(0.0, 1.0)), z, gd + gk
    )
    const = losses.numeric_grad(lambda a: 3.0, ha)
    ok = all(e < 1e-4 for e in errs.values()) and not np.any(const)
    return CheckResult("gradients", ok, {"max_rel_err": errs, "constant_grad_zero": not np.any(const)})


@dataclass
class Fixture:
    tax: Taxonomy
    generated: list
    reports: list
    base: object
    vocab: object


def build_fixture(n_reports: int = 200, seed: int = VERIFY_SEED, target_size: int = 2000) -> Fixture:
    tax = load_taxonomy()
    gen = syngen.generate(n_reports, tax, seed)
    reports, _dropped = pipeline.preprocess_corpus([g.raw for g in gen], load_rules(), load_headers())
    base = load_base_vocab()
    vocab, _toks = pipeline.build_vocab(base, reports, tax, target_size)
    return Fixture(tax, gen, reports, base, vocab)


def check_vocabulary(fx: Fixture) -> CheckResult:
    new = fx.vocab.tokens_with(Provenance.NEW)
    gate = all(fx.tax.lookup(strip_prefix(t)) for t in new)
    preserved = all(fx.vocab.index[t] == i for i, t in enumerate(fx.base.tokens))
    specials = sum(t in fx.vocab.index for t in ("[date]", "[person]", "[location]", "[time]", "[removed]")) == 5
    before = len(tokenize(fx.base, "thalamus"))
    after = len(tokenize(fx.vocab, "thalamus"))
    ok = gate and preserved and specials and after == 1 and before >= 3
    return CheckResult("vocabulary", ok, {"n_new": len(new), "gate": gate, "base_preserved": preserved,
                                          "specials": specials, "thalamus_base": before, "thalamus_extended": after})


def check_annotator(fx: Fixture) -> CheckResult:
    chunks, spans = pipeline.annotate_corpus(fx.reports, fx.vocab, fx.tax)
    by_report: dict[str, set] = {}
    for c in chunks:
        for s in spans[(c.report_id, c.index)]:
            by_report.setdefault(c.report_id, set()).add((s.char_start, s.char_end, s.category))
    gold = hit = 0
    for g in fx.generated:
        want = {(e.char_start, e.char_end, e.category) for e in g.entities}
        gold += len(want)
        hit += len(want & by_report.get(g.raw.id, set()))
    recall = hit / gold if gold else 1.0
    return CheckResult("annotator_closure", recall >= 0.95, {"gold": gold, "recovered": hit, "recall": recall})


def check_masking(fx: Fixture, seed: int = VERIFY_SEED, epochs: int = 3) -> CheckResult:
    counts = {"examples": 0, "violations": 0, "below_quota": 0, "with_option": 0}
    for epoch in range(epochs):
        examples, _chunks, spans = pipeline.mask_corpus("kg", fx.reports, fx.vocab, fx.tax, seed, epoch=epoch)
        for ex in examples:
            counts["examples"] += 1
            counts["with_option"] += ex.option is not None
            probs = check_example(ex, spans.get((ex.report_id, ex.chunk_idx), ()), fx.vocab.special_ids)
            counts["violations"] += bool(probs)
            counts["below_quota"] += len(ex.masks) < quota(len(ex))
    try:
        mask_random([0, 2, 3], {0, 2, 3}, 4, 0)
        raised = False
    except QuotaError:
        raised = True
    ok = counts["violations"] == 0 and raised and counts["examples"] > 0
    return CheckResult("masking", ok, {**counts, "all_special_rejected": raised})


def check_toy_step(fx: Fixture, seed: int = VERIFY_SEED) -> CheckResult:
    from radpretrain.toymodel import TrainConfig, Trainer

    worst = 0.0
    rng = np.random.default_rng([seed, 3])
    for objective in ("mlm", "kg", "ss"):
        tr = Trainer(TrainConfig(objective=objective, steps=1, d_model=8, run_seed=seed), fx.reports[:20],
                     fx.tax, fx.vocab)
        batch = tr._batch(tr._examples(tr.train_chunks, 0)[:1])
        res = tr.compute(batch, np.random.default_rng(0))
        for model, grads, key in ((tr.gen, res.grads_gen, "gen"), (tr.disc, res.grads_disc, "disc")):
            for name in sorted(model.params):
                p = model.params[name]
                for _ in range(3):
                    if name.endswith("E"):
                        ids = np.unique(batch.x_masked if key == "gen" else res.x_corrupt)
                        idx = (int(rng.choice(ids)), int(rng.integers(p.shape[1])))
                    else:
                        idx = tuple(int(rng.integers(s)) for s in p.shape)
                    old = p[idx]
                    p[idx] = old + 1e-5
                    hi = tr.compute(batch, x_corrupt=res.x_corrupt).losses[key]
                    p[idx] = old - 1e-5
                    lo = tr.compute(batch, x_corrupt=res.x_corrupt).losses[key]
                    p[idx] = old
                    num = (hi - lo) / 2e-5
                    worst = max(worst, losses.relative_error(np.array([grads[name][idx]]), np.array([num])))
    return CheckResult("train_step_gradient", worst < 1e-3, {"max_rel_err": worst})


def check_degenerate_weight(fx: Fixture, seed: int = VERIFY_SEED, steps: int = 40) -> CheckResult:
    from radpretrain.toymodel import TrainConfig, train

    common = dict(steps=steps, d_model=16, run_seed=seed, eval_every=steps, mask_strategy="kg")
    kg = train(TrainConfig(objective="kg", lambda_kg=0.0, **common), fx.reports[:60], fx.tax, fx.vocab)
    mlm = train(TrainConfig(objective="mlm", **common), fx.reports[:60], fx.tax, fx.vocab)
    same = kg.component("disc") == mlm.component("disc")
    finite = all(math.isfinite(v) for v in kg.component("kg"))
    return CheckResult("degenerate_weight", same and finite, {"steps": steps, "identical_disc_curve": same,
                                                              "kg_finite": finite})


CHECKS: list[tuple[str, Callable]] = [
    ("loss_kernels", lambda fx: check_loss_kernels()),
    ("gradients", lambda fx: check_gradients()),
    ("vocabulary", check_vocabulary),
    ("annotator_closure", check_annotator),
    ("masking", check_masking),
    ("train_step_gradient", check_toy_step),
    ("degenerate_weight", check_degenerate_weight),
]


def run_verify(n_reports: int = 200, seed: int = VERIFY_SEED) -> VerifyReport:
    fx = build_fixture(n_reports, seed)
    report = VerifyReport()
    for name, fn in CHECKS:
        try:
            result = fn(fx)
        except Exception as exc:  # a crashing check is a failing check
            logger.exception("check %s crashed", name)
            result = CheckResult(name, False, {"error": f"{type(exc).__name__}: {exc}"})
        logger.info("%s: %s", result.name, "pass" if result.passed else "FAIL")
        report.checks.append(result)
    return report

