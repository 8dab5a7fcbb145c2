"""Loss kernels for vocabulary-adapted ELECTRA pretraining.

All kernels work in float64 on flat position arrays; a batch of sequences is
the concatenation of their valid positions. Each kernel has a companion
that returns the analytic gradient with respect to its natural inputs
(encodings, generator logits, discriminator logits).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_softmax, logsumexp

EPS = 1e-12


class LossInputError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class LossWeights:
    lambda_a: float = 1.0
    lambda_kg: float = 1.0

    def __post_init__(self):
        if self.lambda_a < 0 or self.lambda_kg < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class ClampStats:
    """Counts probabilities that had to be clamped away from 0 or 1."""

    generator: int = 0
    discriminator: int = 0


@dataclass
class RtdBatch:
    """Flattened replaced-token-detection batch.

    ``p_g`` has one row per entry of ``m`` (in the same order).
    """

    x: np.ndarray
    x_masked: np.ndarray
    x_corrupt: np.ndarray
    p_g: np.ndarray
    d: np.ndarray
    m: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.x_masked = np.asarray(self.x_masked, dtype=np.int64)
        self.x_corrupt = np.asarray(self.x_corrupt, dtype=np.int64)
        self.m = np.asarray(self.m, dtype=np.int64).reshape(-1)
        self.d = np.asarray(self.d, dtype=np.float64)
        p_g = np.asarray(self.p_g, dtype=np.float64)
        if p_g.ndim != 2:
            p_g = p_g.reshape(len(self.m), -1) if p_g.size else np.zeros((len(self.m), 0))
        self.p_g = p_g

    def validate(self, tol: float = 1e-9) -> None:
        n = len(self.x)
        if not (len(self.x_masked) == len(self.x_corrupt) == len(self.d) == n):
            raise LossInputError("x, x_masked, x_corrupt and d must have equal length")
        if np.any((self.m < 0) | (self.m >= n)):
            raise LossInputError("masked position out of range")
        outside = np.ones(n, dtype=bool)
        outside[self.m] = False
        if np.any(self.x_corrupt[outside] != self.x[outside]):
            raise LossInputError("x_corrupt differs from x outside the masked positions")
        if np.any((self.d < 0) | (self.d > 1)) or not np.all(np.isfinite(self.d)):
            raise LossInputError("discriminator outputs must lie in [0, 1]")
        if len(self.m) and np.max(np.abs(self.p_g.sum(axis=1) - 1.0)) > tol:
            raise LossInputError("generator rows must sum to 1")

    @property
    def replaced(self) -> np.ndarray:
        return self.x_corrupt != self.x

    def to_json(self) -> dict:
        return {
            "x": self.x.tolist(),
            "x_masked": self.x_masked.tolist(),
            "x_corrupt": self.x_corrupt.tolist(),
            "p_g": self.p_g.tolist(),
            "d": self.d.tolist(),
            "m": self.m.tolist(),
            **self.extra,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RtdBatch":
        known = {"x", "x_masked", "x_corrupt", "p_g", "d", "m"}
        missing = known - obj.keys()
        if missing:
            raise LossInputError(f"batch is missing {sorted(missing)}")
        extra = {k: v for k, v in obj.items() if k not in known}
        return cls(obj["x"], obj["x_masked"], obj["x_corrupt"], obj["p_g"], obj["d"], obj["m"], extra)

    @classmethod
    def load(cls, path: str | Path) -> "RtdBatch":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# --------------------------------------------------------------------------
# contrastive regularizer


def _pick_layer(h: np.ndarray, layer: int) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 3:
        return h[:, layer, :]
    if h.ndim == 2:
        return h
    raise LossInputError(f"encodings must be B x d or B x L x d, got shape {h.shape}")


def _cosine_parts(a: np.ndarray, p: np.ndarray):
    na = np.linalg.norm(a, axis=1)
    npp = np.linalg.norm(p, axis=1)
    if np.any(na == 0) or np.any(npp == 0):
        raise LossInputError("zero-norm encoding: cosine similarity undefined")
    cos = (a @ p.T) / np.outer(na, npp)
    return cos, na, npp


def l_reg(h_a, h_p, tau: float = 1.0, layer: int = -1, sign: float = 1.0) -> float:
    """sign * (1/B) * log sum_i softmax_j(sim(a_i, p_j)/tau)[i]."""
    val, _ga, _gp = l_reg_grad(h_a, h_p, tau, layer, sign, need_grad=False)
    return val


def l_reg_grad(h_a, h_p, tau: float = 1.0, layer: int = -1, sign: float = 1.0, need_grad: bool = True):
    """Value and gradients w.r.t. the selected-layer encodings of both sides."""
    if tau <= 0:
        raise LossInputError("temperature must be positive")
    a = _pick_layer(h_a, layer)
    p = _pick_layer(h_p, layer)
    if a.shape != p.shape:
        raise LossInputError(f"encoding shapes differ: {a.shape} vs {p.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
        raise LossInputError("encodings must be finite")
    B = a.shape[0]
    cos, na, npp = _cosine_parts(a, p)
    s = cos / tau
    log_p = log_softmax(s, axis=1)
    r = np.diag(log_p)
    value = sign * float(logsumexp(r)) / B
    if not need_grad:
        return value, None, None
    w = np.exp(r - logsumexp(r))
    # dL/ds_ij = sign * w_i / B * (delta_ij - P_ij)
    g = (sign / B) * w[:, None] * (np.eye(B) - np.exp(log_p))
    gc = g / tau
    inv = 1.0 / np.outer(na, npp)
    ga = (gc * inv) @ p - (gc * cos).sum(axis=1)[:, None] * a / (na**2)[:, None]
    gp = (gc * inv).T @ a - (gc * cos).sum(axis=0)[:, None] * p / (npp**2)[:, None]
    return value, ga, gp


# --------------------------------------------------------------------------
# generator and discriminator terms


def _check_reduction(reduction: str) -> None:
    if reduction not in ("sum", "mean"):
        raise LossInputError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def mlm_term(batch: RtdBatch, reduction: str = "sum", stats: ClampStats | None = None) -> float:
    _check_reduction(reduction)
    if len(batch.m) == 0:
        raise LossInputError("generator loss needs at least one masked position")
    probs = batch.p_g[np.arange(len(batch.m)), batch.x[batch.m]]
    clamped = probs < EPS
    if stats is not None:
        stats.generator += int(clamped.sum())
    nll = -np.log(np.maximum(probs, EPS))
    return float(nll.sum() if reduction == "sum" else nll.mean())


def l_mlm(
    batch: RtdBatch, reg: float = 0.0, lambda_a: float = 1.0, reduction: str = "sum", stats: ClampStats | None = None
) -> float:
    return lambda_a * reg + mlm_term(batch, reduction, stats)


def mlm_logit_grad(logits: np.ndarray, targets: np.ndarray, reduction: str = "sum"):
    """Value and gradient of the generator term w.r.t. its logits."""
    _check_reduction(reduction)
    logits = np.asarray(logits, dtype=np.float64)
    lp = log_softmax(logits, axis=1)
    rows = np.arange(len(targets))
    value = -lp[rows, targets].sum()
    grad = np.exp(lp)
    grad[rows, targets] -= 1.0
    if reduction == "mean":
        value /= len(targets)
        grad /= len(targets)
    return float(value), grad


def bce_term(d: np.ndarray, real: np.ndarray, reduction: str = "sum", stats: ClampStats | None = None) -> float:
    """sum_t -real_t log D_t - (1 - real_t) log(1 - D_t), clamped at EPS."""
    _check_reduction(reduction)
    d = np.asarray(d, dtype=np.float64)
    real = np.asarray(real, dtype=bool)
    dc = np.clip(d, EPS, 1.0 - EPS)
    if stats is not None:
        stats.discriminator += int(np.count_nonzero(dc != d))
    per = np.where(real, -np.log(dc), -np.log1p(-dc))
    return float(per.sum() if reduction == "sum" else per.mean()) if len(per) else 0.0


def disc_term(batch: RtdBatch, reduction: str = "sum", stats: ClampStats | None = None) -> float:
    return bce_term(batch.d, ~batch.replaced, reduction, stats)


def l_disc(
    batch: RtdBatch, reg: float = 0.0, lambda_a: float = 1.0, reduction: str = "sum", stats: ClampStats | None = None
) -> float:
    return lambda_a * reg + disc_term(batch, reduction, stats)


def bce_logit_grad(z: np.ndarray, real: np.ndarray, reduction: str = "sum"):
    """Value and gradient of the detection term w.r.t. pre-sigmoid logits."""
    _check_reduction(reduction)
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(real, dtype=np.float64)
    # -y log s(z) - (1-y) log(1 - s(z)) == softplus(z) - y z
    per = np.logaddexp(0.0, z) - y * z
    grad = expit(z) - y
    if reduction == "mean" and len(z):
        return float(per.mean()), grad / len(z)
    return float(per.sum()), grad


# --------------------------------------------------------------------------
# knowledge-graph term

Relation = Callable[[int, int, int], "bool | None"]


def kg_targets(batch: RtdBatch, relate: Relation) -> np.ndarray:
    """Per-position "counts as real" targets for the knowledge-graph term.

    ``relate(t, original_id, corrupt_id)`` answers whether the token at
    position t is related to the original through the taxonomy, or None when
    either side is unlinked; unlinked positions fall back to the plain
    original/replaced indicator.
    """
    real = ~batch.replaced
    out = real.copy()
    for t in range(len(batch.x)):
        r = relate(t, int(batch.x[t]), int(batch.x_corrupt[t]))
        if r is not None:
            out[t] = bool(r)
    return out


def l_kg(batch: RtdBatch, relate: Relation, reduction: str = "sum", stats: ClampStats | None = None) -> float:
    return bce_term(batch.d, kg_targets(batch, relate), reduction, stats)


def l_disc_kg(
    batch: RtdBatch,
    relate: Relation,
    reg: float = 0.0,
    weights: LossWeights = LossWeights(),
    reduction: str = "sum",
    stats: ClampStats | None = None,
) -> float:
    disc = l_disc(batch, reg, weights.lambda_a, reduction, stats)
    return disc + weights.lambda_kg * l_kg(batch, relate, reduction, stats)


def site_relation(
    concepts: Sequence[str | None],
    concept_of_token: Callable[[int], "str | None"],
    tax,
) -> Relation:
    """Build a relation from per-position linked concepts of the original
    sequence and a token-level linker for replacements.

    Two concepts are related when their anatomical site sets intersect or
    they fall under the same body-system disorder subclass. A position whose
    token is unchanged reuses the original's link, so it relates reflexively.
    """

    def linked(cid: str | None) -> bool:
        return cid is not None and bool(tax.anatomical_sites(cid) or tax.body_systems(cid))

    def relate(t: int, orig: int, corrupt: int):
        a = concepts[t]
        b = a if corrupt == orig else concept_of_token(corrupt)
        if not (linked(a) and linked(b)):
            return None
        if a == b:
            return True
        return bool(tax.anatomical_sites(a) & tax.anatomical_sites(b)) or tax.same_body_system(a, b)

    return relate


def table_relation(related: Sequence[bool | None]) -> Relation:
    """Relation given explicitly per position (used by loss-eval batches)."""
    return lambda t, _o, _c: related[t]


def site_set_relation(sites_x: Sequence[Sequence[str] | None], sites_c: Sequence[Sequence[str] | None]) -> Relation:
    """Relation from explicit per-position site sets; None marks unlinked."""

    def relate(t: int, _o: int, _c: int):
        a, b = sites_x[t], sites_c[t]
        if a is None or b is None:
            return None
        return bool(set(a) & set(b))

    return relate


def batch_relation(batch: RtdBatch) -> Relation:
    """Relation carried in a JSON batch: ``related`` or ``sites_x``/``sites_c``."""
    if "related" in batch.extra:
        return table_relation(batch.extra["related"])
    if "sites_x" in batch.extra and "sites_c" in batch.extra:
        return site_set_relation(batch.extra["sites_x"], batch.extra["sites_c"])
    return lambda _t, _o, _c: None


def evaluate_all(batch: RtdBatch, reg: float = 0.0, weights: LossWeights = LossWeights(),
                 reduction: str = "sum") -> dict[str, float]:
    """All four values for one batch, with the batch's own relation."""
    batch.validate()
    relate = batch_relation(batch)
    out = {
        "l_mlm": l_mlm(batch, reg, weights.lambda_a, reduction),
        "l_disc": l_disc(batch, reg, weights.lambda_a, reduction),
        "l_kg": l_kg(batch, relate, reduction),
    }
    out["l_disc_kg"] = out["l_disc"] + weights.lambda_kg * out["l_kg"]
    return out


# --------------------------------------------------------------------------
# finite differences


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        hi = f(x)
        x[idx] = old - eps
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(f: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray, eps: float = 1e-5) -> float:
    """Max elementwise relative error between *analytic* and central
    differences of *f* at *x*."""
    return relative_error(analytic, numeric_grad(f, x, eps))
