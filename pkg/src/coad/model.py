"""Decoder-only network with a symptom head and a disease head.

Token, status, and position embeddings are summed, layer-normed, and passed
through pre-norm transformer blocks whose attention is gated by an arbitrary
boolean visibility matrix. Two linear heads read every position: one over the
symptom token space (next inquiry / end token) and one over diseases.

Positions follow the chain scheme: the explicit prefix counts 0..N-2, all
copies within repeated group g share position N-1+g, and the final position is
N-1+M. Anchors therefore carry exactly the positions of the plain causal
sequence, which is what makes plain-transcript inference equivalent to
anchor-position training activations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import engine
from .checkpoint import load_checkpoint, save_checkpoint
from .engine import Tensor

__all__ = ["ModelConfig", "CoadModel", "chain_positions", "causal_mask"]


@dataclass(frozen=True)
class ModelConfig:
    n_symptom_tokens: int
    n_diseases: int
    n_statuses: int = 3
    layers: int = 2
    hidden: int = 64
    heads: int = 2
    ff: int = 256
    dropout: float = 0.1
    max_len: int = 64
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if min(self.n_symptom_tokens, self.n_diseases, self.layers, self.hidden, self.ff, self.max_len) < 1:
            raise ValueError("all size fields must be positive")


def chain_positions(n_explicit: int, n_implicit: int) -> np.ndarray:
    """Position ids for the repeated layout of one record."""
    if n_explicit < 1 or n_implicit < 0:
        raise ValueError(f"bad (n_explicit, n_implicit) = ({n_explicit}, {n_implicit})")
    ids = list(range(n_explicit - 1))
    for g in range(n_implicit):
        ids.extend([n_explicit - 1 + g] * (n_implicit - g))
    ids.append(n_explicit - 1 + n_implicit)
    return np.asarray(ids, dtype=np.int64)


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


class CoadModel:
    """Parameter container plus the forward pass."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = self._init_params(config)
        self.params: dict[str, Tensor] = {
            name: Tensor(np.asarray(arr, dtype=config.dtype), requires_grad=True)
            for name, arr in params.items()
        }

    @staticmethod
    def _init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(cfg.seed)
        dt = cfg.dtype

        def normal(*shape):
            return rng.normal(0.0, 0.02, size=shape).astype(dt)

        p: dict[str, np.ndarray] = {
            "emb.symptom": normal(cfg.n_symptom_tokens, cfg.hidden),
            "emb.status": normal(cfg.n_statuses, cfg.hidden),
            "emb.position": normal(cfg.max_len, cfg.hidden),
            "emb.ln.g": np.ones(cfg.hidden, dtype=dt),
            "emb.ln.b": np.zeros(cfg.hidden, dtype=dt),
        }
        for i in range(cfg.layers):
            b = f"block{i}"
            p[f"{b}.ln1.g"] = np.ones(cfg.hidden, dtype=dt)
            p[f"{b}.ln1.b"] = np.zeros(cfg.hidden, dtype=dt)
            for proj in ("wq", "wk", "wv", "wo"):
                p[f"{b}.attn.{proj}"] = normal(cfg.hidden, cfg.hidden)
                p[f"{b}.attn.{proj}_b"] = np.zeros(cfg.hidden, dtype=dt)
            p[f"{b}.ln2.g"] = np.ones(cfg.hidden, dtype=dt)
            p[f"{b}.ln2.b"] = np.zeros(cfg.hidden, dtype=dt)
            p[f"{b}.ff.w1"] = normal(cfg.hidden, cfg.ff)
            p[f"{b}.ff.b1"] = np.zeros(cfg.ff, dtype=dt)
            p[f"{b}.ff.w2"] = normal(cfg.ff, cfg.hidden)
            p[f"{b}.ff.b2"] = np.zeros(cfg.hidden, dtype=dt)
        p["final_ln.g"] = np.ones(cfg.hidden, dtype=dt)
        p["final_ln.b"] = np.zeros(cfg.hidden, dtype=dt)
        p["head.symptom.w"] = normal(cfg.hidden, cfg.n_symptom_tokens)
        p["head.symptom.b"] = np.zeros(cfg.n_symptom_tokens, dtype=dt)
        p["head.disease.w"] = normal(cfg.hidden, cfg.n_diseases)
        p["head.disease.b"] = np.zeros(cfg.n_diseases, dtype=dt)
        return p

    def _linear(self, x: Tensor, weight: str, bias: str) -> Tensor:
        return engine.add(engine.matmul(x, self.params[weight]), self.params[bias])

    def forward(
        self,
        tokens: np.ndarray,
        statuses: np.ndarray,
        positions: np.ndarray,
        mask: np.ndarray,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Per-position hidden states and both heads' logits.

        ``tokens``/``statuses``/``positions`` are int arrays of shape (T,) or
        (B, T); ``mask`` is boolean (T, T) or (B, T, T). Dropout fires only in
        train mode and then requires ``rng``.
        """
        cfg = self.config
        tokens = np.atleast_2d(np.asarray(tokens))
        statuses = np.atleast_2d(np.asarray(statuses))
        positions = np.atleast_2d(np.asarray(positions))
        b, t = tokens.shape
        if statuses.shape != (b, t) or positions.shape != (b, t):
            raise engine.EngineError(
                f"input shapes disagree: tokens {tokens.shape}, statuses {statuses.shape}, "
                f"positions {positions.shape}"
            )
        if t > cfg.max_len:
            raise engine.EngineError(f"sequence length {t} exceeds max_len {cfg.max_len}")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape == (t, t):
            mask = np.broadcast_to(mask, (b, t, t))
        if mask.shape != (b, t, t):
            raise engine.EngineError(f"mask shape {mask.shape} does not fit input ({b}, {t})")
        head_mask = mask[:, None, :, :]  # broadcast over attention heads
        use_dropout = train_mode and cfg.dropout > 0.0
        if use_dropout and rng is None:
            raise engine.EngineError("train-mode forward with dropout needs an rng")

        def drop(x: Tensor) -> Tensor:
            return engine.dropout(x, cfg.dropout, rng) if use_dropout else x

        p = self.params
        x = engine.add(
            engine.add(engine.embedding(p["emb.symptom"], tokens), engine.embedding(p["emb.status"], statuses)),
            engine.embedding(p["emb.position"], positions),
        )
        x = drop(engine.layer_norm(x, p["emb.ln.g"], p["emb.ln.b"]))

        head_dim = cfg.hidden // cfg.heads
        for i in range(cfg.layers):
            blk = f"block{i}"
            h = engine.layer_norm(x, p[f"{blk}.ln1.g"], p[f"{blk}.ln1.b"])

            def split_heads(z: Tensor) -> Tensor:
                z = engine.reshape(z, (b, t, cfg.heads, head_dim))
                return engine.transpose(z, (0, 2, 1, 3))

            q = split_heads(self._linear(h, f"{blk}.attn.wq", f"{blk}.attn.wq_b"))
            k = split_heads(self._linear(h, f"{blk}.attn.wk", f"{blk}.attn.wk_b"))
            v = split_heads(self._linear(h, f"{blk}.attn.wv", f"{blk}.attn.wv_b"))
            scores = engine.scale(engine.matmul(q, engine.transpose(k, (0, 1, 3, 2))), 1.0 / float(np.sqrt(head_dim)))
            att = drop(engine.masked_softmax(scores, head_mask))
            ctx = engine.transpose(engine.matmul(att, v), (0, 2, 1, 3))
            ctx = engine.reshape(ctx, (b, t, cfg.hidden))
            x = engine.add(x, drop(self._linear(ctx, f"{blk}.attn.wo", f"{blk}.attn.wo_b")))

            h2 = engine.layer_norm(x, p[f"{blk}.ln2.g"], p[f"{blk}.ln2.b"])
            f = self._linear(engine.gelu(self._linear(h2, f"{blk}.ff.w1", f"{blk}.ff.b1")), f"{blk}.ff.w2", f"{blk}.ff.b2")
            x = engine.add(x, drop(f))

        hidden = engine.layer_norm(x, p["final_ln.g"], p["final_ln.b"])
        sym_logits = self._linear(hidden, "head.symptom.w", "head.symptom.b")
        dis_logits = self._linear(hidden, "head.disease.w", "head.disease.b")
        return hidden, sym_logits, dis_logits

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def save(self, path: str | Path, extra_config: dict | None = None) -> None:
        config = {"model": asdict(self.config)}
        if extra_config:
            config.update(extra_config)
        save_checkpoint(path, self.to_arrays(), config)

    @classmethod
    def load(cls, path: str | Path) -> tuple["CoadModel", dict]:
        params, config = load_checkpoint(path)
        model_cfg = ModelConfig(**config["model"])
        expected = set(cls._init_params(model_cfg))
        if set(params) != expected:
            missing = expected - set(params)
            surplus = set(params) - expected
            raise ValueError(f"checkpoint parameters do not match config: missing={missing}, surplus={surplus}")
        return cls(model_cfg, params), config
