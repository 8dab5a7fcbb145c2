"""Desk-scale ELECTRA-style training loop for the tiny encoder pair."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax
from scipy.stats import rankdata

from radpretrain import losses
from radpretrain.annotator import annotate, resolve
from radpretrain.corpus import SectionedReport, chunk_corpus
from radpretrain.masking import MaskedExample, build_examples
from radpretrain.taxonomy import Taxonomy
from radpretrain.tokenizer import CONTINUATION, Vocabulary, tokenize
from radpretrain.toymodel import checkpoint
from radpretrain.toymodel.model import Discriminator, Generator, mean_pool, mean_pool_backward, parameter_count
from radpretrain.toymodel.optim import AdamW, Schedule

logger = logging.getLogger(__name__)

OBJECTIVES = ("mlm", "ss", "kg")
MASK_STRATEGIES = ("auto", "random", "kg")


class TrainingError(RuntimeError):
    pass


@dataclass(slots=True)
class TrainConfig:
    objective: str = "mlm"
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-2
    schedule: str = "polynomial"
    warmup_frac: float = 0.05
    weight_decay: float = 0.01
    run_seed: int = 0
    d_model: int = 32
    max_len: int = 128
    lambda_a: float = 1.0
    lambda_kg: float = 1.0
    tau: float = 1.0
    reg_sign: float = 1.0
    reduction: str = "sum"
    mask_strategy: str = "auto"  # "kg" gives an mlm run the knowledge-aware masks
    eval_every: int = 200
    patience: int = 3
    early_stopping: bool = True
    holdout_frac: float = 0.1
    checkpoint_every: int = 0

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.mask_strategy not in MASK_STRATEGIES:
            raise ValueError(f"mask_strategy must be one of {MASK_STRATEGIES}")
        for name in ("steps", "batch_size", "d_model", "max_len", "eval_every", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.tau <= 0:
            raise ValueError("lr and tau must be positive")
        if not 0 <= self.warmup_frac < 1 or not 0 <= self.holdout_frac < 1:
            raise ValueError("warmup_frac and holdout_frac must lie in [0, 1)")
        if self.d_model > 64 or self.max_len > 128:
            raise ValueError("toy encoder is limited to d_model <= 64 and max_len <= 128")
        losses.LossWeights(self.lambda_a, self.lambda_kg)
        Schedule(self.schedule)

    @property
    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda_a, self.lambda_kg)

    @property
    def masking(self) -> str:
        if self.mask_strategy != "auto":
            return self.mask_strategy
        return "kg" if self.objective == "kg" else "random"

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ValueError(f"unknown training option {key!r}")
            default = getattr(cls(), key)
            kwargs[key] = type(default)(value) if not isinstance(default, bool) else _as_bool(value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class Batch:
    x: np.ndarray
    x_masked: np.ndarray
    valid: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    sections: np.ndarray
    concepts: list[list[str | None]]
    texts: list[str]
    special: np.ndarray

    def to_json(self) -> dict:
        return {
            "x": self.x.tolist(),
            "x_masked": self.x_masked.tolist(),
            "valid": self.valid.tolist(),
            "sections": self.sections.tolist(),
            "texts": self.texts,
        }


@dataclass
class StepResult:
    losses: dict[str, float]
    grads_gen: dict[str, np.ndarray]
    grads_disc: dict[str, np.ndarray]
    x_corrupt: np.ndarray
    z: np.ndarray
    sec_logits: np.ndarray


@dataclass
class TrainReport:
    config: dict
    curve: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    rtd_auc: float | None = None
    section_accuracy: float | None = None
    steps_run: int = 0
    stopped_early: bool = False
    checkpoints: list[str] = field(default_factory=list)
    n_train_examples: int = 0
    n_heldout_examples: int = 0
    parameters: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    def component(self, name: str) -> list[float]:
        return [row[name] for row in self.curve]


def rtd_auc(scores: np.ndarray, replaced: np.ndarray) -> float | None:
    """Mann-Whitney AUC of *scores* for the replaced class."""
    replaced = np.asarray(replaced, dtype=bool)
    n_pos = int(replaced.sum())
    n_neg = len(replaced) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[replaced].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def token_concepts(vocab: Vocabulary, tax: Taxonomy) -> list[str | None]:
    """Concept linked to each whole-word vocabulary token, if any."""
    out: list[str | None] = []
    for i, tok in enumerate(vocab.tokens):
        if i in vocab.special_ids or tok.startswith(CONTINUATION):
            out.append(None)
            continue
        hit = resolve(tax, tok)
        out.append(hit[0].id if hit else None)
    return out


class Trainer:
    def __init__(self, config: TrainConfig, corpus: Sequence[SectionedReport], tax: Taxonomy, vocab: Vocabulary):
        config.validate()
        self.cfg = config
        self.tax = tax
        self.vocab = vocab
        self.base_vocab = vocab.base_only()
        seed = config.run_seed
        rng = np.random.default_rng([seed, 0])
        self.gen = Generator.create(rng, len(vocab), config.d_model, config.max_len)
        self.disc = Discriminator.create(rng, len(vocab), config.d_model, config.max_len)
        # frozen pre-adaptation encoders: the regularizer's reference side
        self.frozen_gen = Generator({k: v.copy() for k, v in self.gen.params.items()})
        self.frozen_disc = Discriminator({k: v.copy() for k, v in self.disc.params.items()})
        self._frozen_cache: dict[tuple[str, str], np.ndarray] = {}
        total = config.steps
        self.opt_gen = AdamW(self.gen.params, Schedule(config.schedule, config.lr, total, config.warmup_frac),
                             weight_decay=config.weight_decay)
        self.opt_disc = AdamW(self.disc.params, Schedule(config.schedule, config.lr, total, config.warmup_frac),
                              weight_decay=config.weight_decay)
        self.token_concept = token_concepts(vocab, tax)
        self._split(corpus)

    # -- data ---------------------------------------------------------------

    def _split(self, corpus: Sequence[SectionedReport]) -> None:
        n = len(corpus)
        order = np.random.default_rng([self.cfg.run_seed, 7]).permutation(n)
        n_held = int(math.floor(self.cfg.holdout_frac * n))
        if self.cfg.holdout_frac > 0 and n >= 2:
            n_held = max(n_held, 1)
        held_idx = set(order[:n_held].tolist())
        train = [r for i, r in enumerate(corpus) if i not in held_idx]
        held = [r for i, r in enumerate(corpus) if i in held_idx]
        budget = self.cfg.max_len
        self.train_chunks, _ = chunk_corpus(train, self.vocab, budget)
        self.held_chunks, _ = chunk_corpus(held, self.vocab, budget)
        if not self.train_chunks:
            raise TrainingError("no training chunks")
        self.spans = {}
        if self.cfg.masking == "kg" or self.cfg.objective == "kg":
            for c in self.train_chunks + self.held_chunks:
                self.spans[(c.report_id, c.index)] = annotate(c, self.vocab, self.tax)
        held_examples = self._examples(self.held_chunks, 0)
        self.held_batches = [self._batch(held_examples[i : i + 64]) for i in range(0, len(held_examples), 64)]
        self.n_held = len(held_examples)

    def _examples(self, chunks, epoch: int) -> list[MaskedExample]:
        if self.cfg.objective == "ss":
            return build_examples("ss", chunks, self.vocab, self.cfg.run_seed, epoch=epoch)
        return build_examples(self.cfg.masking, chunks, self.vocab, self.cfg.run_seed, self.spans, epoch)

    def _batch(self, examples: Sequence[MaskedExample]) -> Batch:
        T = max(len(e) for e in examples)
        B = len(examples)
        pad = self.vocab.pad_id
        x = np.full((B, T), pad, dtype=np.int64)
        xm = np.full((B, T), pad, dtype=np.int64)
        valid = np.zeros((B, T), dtype=bool)
        rows, cols, sections, concepts, texts = [], [], [], [], []
        for b, ex in enumerate(examples):
            n = len(ex)
            x[b, :n] = ex.original()
            xm[b, :n] = ex.ids
            valid[b, :n] = True
            rows.extend([b] * len(ex.masks))
            cols.extend(ex.masks)
            sections.append(ex.sections[0].index)
            cpos: list[str | None] = [None] * T
            for s in self.spans.get((ex.report_id, ex.chunk_idx), ()):
                if self.cfg.objective != "ss":
                    for t in range(s.start, min(s.end, n)):
                        cpos[t] = s.concept_id
            concepts.append(cpos)
            texts.append(ex.extra.get("text", ""))
        special = np.isin(x, list(self.vocab.special_ids))
        return Batch(x, xm, valid, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                     np.array(sections, dtype=np.int64), concepts, texts, special)

    def _frozen(self, which: str, texts: Sequence[str]) -> np.ndarray:
        """Pooled final-layer encodings of the frozen encoder over the base
        tokenization of *texts* (cached; the frozen weights never change)."""
        missing = [t for t in dict.fromkeys(texts) if (which, t) not in self._frozen_cache]
        if missing:
            model = self.frozen_gen if which == "gen" else self.frozen_disc
            seqs = []
            for t in missing:
                ids = [self.base_vocab.cls_id, *tokenize(self.base_vocab, t), self.base_vocab.sep_id]
                seqs.append(ids[: self.cfg.max_len])
            T = max(len(s) for s in seqs)
            x = np.full((len(seqs), T), self.base_vocab.pad_id, dtype=np.int64)
            valid = np.zeros_like(x, dtype=bool)
            for i, s in enumerate(seqs):
                x[i, : len(s)] = s
                valid[i, : len(s)] = True
            h, _cache = model.encoder.forward(x, valid)
            pooled = mean_pool(h, valid)
            for t, row in zip(missing, pooled):
                self._frozen_cache[(which, t)] = row
        return np.stack([self._frozen_cache[(which, t)] for t in texts])

    # -- one step -------------------------------------------------------------

    def sample_corrupt(self, probs: np.ndarray, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        x_corrupt = batch.x.copy()
        if len(batch.rows):
            u = rng.random(len(batch.rows))
            cdf = np.cumsum(probs, axis=1)
            picks = np.minimum((cdf <= u[:, None]).sum(axis=1), probs.shape[1] - 1)
            x_corrupt[batch.rows, batch.cols] = picks
        return x_corrupt

    def kg_real(self, batch: Batch, x_corrupt: np.ndarray) -> np.ndarray:
        """Per-position targets of the knowledge-graph term over valid positions."""
        out = []
        for b in range(batch.x.shape[0]):
            n = int(batch.valid[b].sum())
            relate = losses.site_relation(batch.concepts[b], self.token_concept.__getitem__, self.tax)
            rb = losses.RtdBatch(batch.x[b, :n], batch.x_masked[b, :n], x_corrupt[b, :n], np.zeros((0, 1)),
                                 np.full(n, 0.5), np.zeros(0))
            out.append(losses.kg_targets(rb, relate))
        return np.concatenate(out)

    def compute(self, batch: Batch, rng: np.random.Generator | None = None,
                x_corrupt: np.ndarray | None = None) -> StepResult:
        cfg = self.cfg
        red = cfg.reduction
        # generator
        logits, hg, gstate = self.gen.forward(batch.x_masked, batch.valid, batch.rows, batch.cols)
        targets = batch.x[batch.rows, batch.cols]
        gen_nll, dlogits = losses.mlm_logit_grad(logits, targets, red)
        reg_g, ga, _ = losses.l_reg_grad(mean_pool(hg, batch.valid), self._frozen("gen", batch.texts),
                                         cfg.tau, sign=cfg.reg_sign)
        grads_gen = self.gen.backward(gstate, dlogits, mean_pool_backward(cfg.lambda_a * ga, batch.valid))
        if x_corrupt is None:
            probs = np.exp(log_softmax(logits, axis=1))
            x_corrupt = self.sample_corrupt(probs, batch, rng)
        # discriminator
        z, sec, pooled, dstate = self.disc.forward(x_corrupt, batch.valid)
        zf = z[batch.valid]
        real = (x_corrupt == batch.x)[batch.valid]
        disc_val, dzf = losses.bce_logit_grad(zf, real, red)
        reg_d, gd, _ = losses.l_reg_grad(pooled, self._frozen("disc", batch.texts), cfg.tau, sign=cfg.reg_sign)
        out = {
            "gen": cfg.lambda_a * reg_g + gen_nll,
            "disc": cfg.lambda_a * reg_d + disc_val,
            "reg_gen": reg_g,
            "reg_disc": reg_d,
            "kg": 0.0,
            "ss": 0.0,
        }
        dsec = None
        if cfg.objective == "kg":
            kg_val, dzk = losses.bce_logit_grad(zf, self.kg_real(batch, x_corrupt), red)
            out["kg"] = kg_val
            out["disc"] = out["disc"] + cfg.lambda_kg * kg_val
            dzf = dzf + cfg.lambda_kg * dzk
        elif cfg.objective == "ss":
            lp = log_softmax(sec, axis=1)
            rows = np.arange(len(batch.sections))
            out["ss"] = float(-lp[rows, batch.sections].sum())
            dsec = softmax(sec, axis=1)
            dsec[rows, batch.sections] -= 1.0
            if red == "mean":
                out["ss"] /= len(rows)
                dsec /= len(rows)
            out["disc"] = out["disc"] + out["ss"]
        dz = np.zeros_like(z)
        dz[batch.valid] = dzf
        grads_disc = self.disc.backward(dstate, dz, dsec, cfg.lambda_a * gd)
        out["total"] = out["gen"] + out["disc"]
        return StepResult(out, grads_gen, grads_disc, x_corrupt, z, sec)

    # -- evaluation ---------------------------------------------------------------

    def evaluate(self) -> dict:
        rng = np.random.default_rng([self.cfg.run_seed, 5])
        totals = dict.fromkeys(("gen", "disc", "kg", "ss", "total"), 0.0)
        scores, labels = [], []
        correct = 0
        count = 0
        for batch in self.held_batches:
            res = self.compute(batch, rng)
            for k in totals:
                totals[k] += res.losses[k]
            keep = batch.valid & ~batch.special
            scores.append(-res.z[keep])  # higher means "replaced"
            labels.append((res.x_corrupt != batch.x)[keep])
            if self.cfg.objective == "ss":
                _z, sec, _p, _s = self.disc.forward(batch.x, batch.valid)
                correct += int((sec.argmax(axis=1) == batch.sections).sum())
                count += len(batch.sections)
        n = max(self.n_held, 1)
        result = {k: v / n for k, v in totals.items()}
        result["rtd_auc"] = rtd_auc(np.concatenate(scores), np.concatenate(labels)) if scores else None
        result["section_accuracy"] = correct / count if count else None
        return result

    # -- loop ----------------------------------------------------------------------

    def _dump(self, batch: Batch, step: int, out_dir: Path | None, values: dict) -> str:
        payload = {"step": step, "losses": {k: repr(v) for k, v in values.items()}, "batch": batch.to_json()}
        if out_dir is None:
            return json.dumps(payload)[:2000]
        path = Path(out_dir) / f"nan_batch_step{step}.json"
        path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        return str(path)

    def _epoch_batches(self, epoch: int) -> list[list[MaskedExample]]:
        examples = self._examples(self.train_chunks, epoch)
        order = np.random.default_rng([self.cfg.run_seed, 4, epoch]).permutation(len(examples))
        bs = self.cfg.batch_size
        return [[examples[i] for i in order[k : k + bs]] for k in range(0, len(order), bs)]

    def run(self, out_dir: str | Path | None = None) -> TrainReport:
        cfg = self.cfg
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        report = TrainReport(config=asdict(cfg))
        report.parameters = {"generator": parameter_count(self.gen.params),
                             "discriminator": parameter_count(self.disc.params)}
        report.n_heldout_examples = self.n_held
        best = math.inf
        bad_evals = 0
        step = 0
        epoch = 0
        batches: list = []
        last_eval = None
        while step < cfg.steps:
            if not batches:
                batches = self._epoch_batches(epoch)
                if epoch == 0:
                    report.n_train_examples = sum(len(b) for b in batches)
                epoch += 1
            batch = self._batch(batches.pop(0))
            res = self.compute(batch, np.random.default_rng([cfg.run_seed, 3, step]))
            if not all(math.isfinite(v) for v in res.losses.values()):
                where = self._dump(batch, step, out, res.losses)
                raise TrainingError(f"non-finite loss at step {step}: {res.losses}; batch dumped to {where}")
            lr = self.opt_gen.step(res.grads_gen)
            self.opt_disc.step(res.grads_disc)
            report.curve.append({"step": step, "lr": lr, **res.losses})
            step += 1
            if cfg.checkpoint_every and out is not None and step % cfg.checkpoint_every == 0:
                report.checkpoints.extend(self.save(out, f"step{step}"))
            if self.held_batches and (step % cfg.eval_every == 0 or step == cfg.steps):
                last_eval = {"step": step, **self.evaluate()}
                report.evals.append(last_eval)
                logger.info("step %d: held-out %s", step, {k: v for k, v in last_eval.items() if v is not None})
                if last_eval["total"] < best - 1e-12:
                    best = last_eval["total"]
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if cfg.early_stopping and bad_evals >= cfg.patience:
                        report.stopped_early = True
                        logger.info("early stop at step %d (patience %d)", step, cfg.patience)
                        break
        if self.held_batches and (last_eval is None or last_eval["step"] != step):
            last_eval = {"step": step, **self.evaluate()}
            report.evals.append(last_eval)
        report.steps_run = step
        if last_eval is not None:
            report.rtd_auc = last_eval["rtd_auc"]
            report.section_accuracy = last_eval["section_accuracy"]
        if out is not None:
            report.checkpoints.extend(self.save(out, "final"))
            (out / "train_report.json").write_text(report.to_json(), encoding="utf-8")
        return report

    def save(self, out: Path, tag: str) -> list[str]:
        names = []
        for which, params in (("generator", self.gen.params), ("discriminator", self.disc.params)):
            name = f"{which}-{tag}.ckpt"
            checkpoint.save(out / name, params, {"model": which, "objective": self.cfg.objective,
                                                 "vocab_size": len(self.vocab)})
            names.append(name)
        return names


def train(config: TrainConfig, corpus: Sequence[SectionedReport], tax: Taxonomy, vocab: Vocabulary,
          out_dir: str | Path | None = None) -> TrainReport:
    return Trainer(config, corpus, tax, vocab).run(out_dir)
