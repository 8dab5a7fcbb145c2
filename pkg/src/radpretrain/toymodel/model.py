"""A one-block single-head encoder with hand-written backpropagation, plus
the generator and discriminator heads built on it."""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, softmax

NEG_INF = -1e9
N_SECTIONS = 5


def _normal(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return rng.normal(0.0, scale, size=shape)


class TinyEncoder:
    """``h2 = h1 + tanh(h1 W1 + b1)`` with ``h1 = h0 + Attn(h0) Wo`` and
    ``h0 = E[x] + P``. Parameters live in ``params`` under ``prefix``."""

    def __init__(self, params: dict[str, np.ndarray], prefix: str = "enc."):
        self.params = params
        self.prefix = prefix

    @staticmethod
    def init(rng: np.random.Generator, vocab_size: int, d: int, max_len: int, prefix: str = "enc.") -> dict:
        s = 1.0 / np.sqrt(d)
        return {
            prefix + "E": _normal(rng, (vocab_size, d), 0.5),
            prefix + "P": _normal(rng, (max_len, d), 0.1),
            prefix + "Wq": _normal(rng, (d, d), s),
            prefix + "Wk": _normal(rng, (d, d), s),
            prefix + "Wv": _normal(rng, (d, d), s),
            prefix + "Wo": _normal(rng, (d, d), s),
            prefix + "W1": _normal(rng, (d, d), s),
            prefix + "b1": np.zeros(d),
        }

    def p(self, name: str) -> np.ndarray:
        return self.params[self.prefix + name]

    def forward(self, x: np.ndarray, valid: np.ndarray):
        B, T = x.shape
        d = self.p("E").shape[1]
        if T > self.p("P").shape[0]:
            raise ValueError(f"sequence length {T} exceeds context {self.p('P').shape[0]}")
        h0 = self.p("E")[x] + self.p("P")[:T]
        q, k, v = h0 @ self.p("Wq"), h0 @ self.p("Wk"), h0 @ self.p("Wv")
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(d) + np.where(valid[:, None, :], 0.0, NEG_INF)
        a = softmax(scores, axis=-1)
        c = a @ v
        h1 = h0 + c @ self.p("Wo")
        f = np.tanh(h1 @ self.p("W1") + self.p("b1"))
        h2 = h1 + f
        cache = (x, h0, q, k, v, a, c, h1, f)
        return h2, cache

    def backward(self, cache, dh2: np.ndarray) -> dict[str, np.ndarray]:
        x, h0, q, k, v, a, c, h1, f = cache
        d = h0.shape[-1]
        P = self.prefix
        g: dict[str, np.ndarray] = {}
        du = dh2 * (1.0 - f * f)
        g[P + "W1"] = np.einsum("btd,bte->de", h1, du)
        g[P + "b1"] = du.sum(axis=(0, 1))
        dh1 = dh2 + du @ self.p("W1").T
        g[P + "Wo"] = np.einsum("btd,bte->de", c, dh1)
        dc = dh1 @ self.p("Wo").T
        da = dc @ v.transpose(0, 2, 1)
        dv = a.transpose(0, 2, 1) @ dc
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) / np.sqrt(d)
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        g[P + "Wq"] = np.einsum("btd,bte->de", h0, dq)
        g[P + "Wk"] = np.einsum("btd,bte->de", h0, dk)
        g[P + "Wv"] = np.einsum("btd,bte->de", h0, dv)
        dh0 = dh1 + dq @ self.p("Wq").T + dk @ self.p("Wk").T + dv @ self.p("Wv").T
        dE = np.zeros_like(self.p("E"))
        np.add.at(dE, x.reshape(-1), dh0.reshape(-1, d))
        g[P + "E"] = dE
        dP = np.zeros_like(self.p("P"))
        dP[: x.shape[1]] = dh0.sum(axis=0)
        g[P + "P"] = dP
        return g


def mean_pool(h: np.ndarray, valid: np.ndarray) -> np.ndarray:
    w = valid.astype(np.float64)
    return (h * w[..., None]).sum(axis=1) / w.sum(axis=1, keepdims=True)


def mean_pool_backward(dpooled: np.ndarray, valid: np.ndarray) -> np.ndarray:
    w = valid.astype(np.float64)
    return dpooled[:, None, :] * (w / w.sum(axis=1, keepdims=True))[..., None]


class Generator:
    """Encoder plus a vocabulary head evaluated at masked positions only."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params
        self.encoder = TinyEncoder(params, "enc.")

    @classmethod
    def create(cls, rng: np.random.Generator, vocab_size: int, d: int, max_len: int, head_scale: float = 1e-3):
        params = TinyEncoder.init(rng, vocab_size, d, max_len)
        params["gen.W"] = _normal(rng, (d, vocab_size), head_scale)
        params["gen.b"] = np.zeros(vocab_size)
        return cls(params)

    def forward(self, x: np.ndarray, valid: np.ndarray, rows: np.ndarray, cols: np.ndarray):
        h, cache = self.encoder.forward(x, valid)
        hm = h[rows, cols]
        logits = hm @ self.params["gen.W"] + self.params["gen.b"]
        return logits, h, (cache, hm, rows, cols, h.shape)

    def probs(self, x, valid, rows, cols) -> np.ndarray:
        logits, _h, _c = self.forward(x, valid, rows, cols)
        return np.exp(log_softmax(logits, axis=1))

    def backward(self, state, dlogits: np.ndarray, dh_extra: np.ndarray | None = None) -> dict[str, np.ndarray]:
        cache, hm, rows, cols, shape = state
        g = {"gen.W": hm.T @ dlogits, "gen.b": dlogits.sum(axis=0)}
        dh = np.zeros(shape) if dh_extra is None else dh_extra.copy()
        np.add.at(dh, (rows, cols), dlogits @ self.params["gen.W"].T)
        g.update(self.encoder.backward(cache, dh))
        return g


class Discriminator:
    """Encoder plus a per-token replaced/original logit and a 5-way
    section head over the mean-pooled sequence."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params
        self.encoder = TinyEncoder(params, "enc.")

    @classmethod
    def create(cls, rng: np.random.Generator, vocab_size: int, d: int, max_len: int, head_scale: float = 1e-3):
        params = TinyEncoder.init(rng, vocab_size, d, max_len)
        params["disc.w"] = _normal(rng, (d,), head_scale)
        params["disc.b"] = np.zeros(1)
        params["sec.W"] = _normal(rng, (d, N_SECTIONS), head_scale)
        params["sec.b"] = np.zeros(N_SECTIONS)
        return cls(params)

    def forward(self, x: np.ndarray, valid: np.ndarray):
        h, cache = self.encoder.forward(x, valid)
        z = h @ self.params["disc.w"] + self.params["disc.b"][0]
        pooled = mean_pool(h, valid)
        sec = pooled @ self.params["sec.W"] + self.params["sec.b"]
        return z, sec, pooled, (cache, h, pooled, valid)

    def backward(self, state, dz: np.ndarray, dsec: np.ndarray | None = None, dpooled: np.ndarray | None = None):
        cache, h, pooled, valid = state
        g = {
            "disc.w": np.einsum("btd,bt->d", h, dz),
            "disc.b": np.array([dz.sum()]),
        }
        dh = dz[..., None] * self.params["disc.w"]
        dp = np.zeros_like(pooled) if dpooled is None else dpooled.copy()
        if dsec is not None:
            g["sec.W"] = pooled.T @ dsec
            g["sec.b"] = dsec.sum(axis=0)
            dp = dp + dsec @ self.params["sec.W"].T
        else:
            g["sec.W"] = np.zeros_like(self.params["sec.W"])
            g["sec.b"] = np.zeros_like(self.params["sec.b"])
        dh = dh + mean_pool_backward(dp, valid)
        g.update(self.encoder.backward(cache, dh))
        return g


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))
