"""The three learned components: context encoder, noise-prediction transformer,
and the attention-based candidate scorer.

All parameters live in a :class:`~trajdiff.optim.ParameterStore` and are
fetched by name at call time, so optimizer updates and checkpoint loads are
visible without rebuilding the networks.  Dropout is driven entirely by a
caller-supplied generator; with no generator the forward pass is
deterministic (eval mode).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import engine as E
from .optim import ParameterStore


@dataclass(frozen=True)
class Arch:
    """Architecture hyperparameters shared by the three networks."""

    t_p: int = 8
    t_f: int = 12
    d_c: int = 128            # context embedding width
    width: int = 128          # transformer width
    heads: int = 4
    head_dim: int = 32
    denoiser_layers: int = 5
    encoder_layers: int = 2
    ffn_width: int = 256
    scorer_dim: int = 128     # post-attention width d in the scorer
    lane_dim: int = 8
    dropout: float = 0.1

    def manifest(self) -> dict:
        return asdict(self)

    @classmethod
    def from_manifest(cls, manifest: dict) -> "Arch":
        fields = {k: manifest[k] for k in cls.__dataclass_fields__ if k in manifest}
        return cls(**fields)


def sinusoidal_table(n_positions: int, width: int) -> np.ndarray:
    """Fixed sin/cos positional features, one row per position."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    return sinusoidal_features(pos, width)


def sinusoidal_features(values: np.ndarray, width: int) -> np.ndarray:
    """Sin/cos features of arbitrary positive scalars (diffusion steps etc.)."""
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if values.ndim == 1:
        values = values[:, None]
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / max(1, half))
    angles = values * freqs[None, :]
    feats = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    if feats.shape[-1] < width:
        feats = np.concatenate([feats, np.zeros((feats.shape[0], width - feats.shape[-1]))], axis=-1)
    return feats


def dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


def _maybe_dropout(x, rng, rate):
    if rng is None or rate <= 0.0:
        return x
    return E.dropout_apply(x, dropout_mask(rng, x.shape, rate))


class Linear:
    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int, bias: bool = True):
        self.store = store
        self.w_name = f"{name}.w"
        self.b_name = f"{name}.b" if bias else None
        store.parameter(self.w_name, (n_in, n_out))
        if bias:
            store.parameter(self.b_name, (n_out,), init="zeros")

    def __call__(self, x):
        out = E.matmul(x, self.store[self.w_name])
        if self.b_name is not None:
            out = E.add(out, self.store[self.b_name])
        return out


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, width: int):
        self.store = store
        self.g_name = f"{name}.gain"
        self.b_name = f"{name}.bias"
        store.parameter(self.g_name, (width,), init="ones")
        store.parameter(self.b_name, (width,), init="zeros")

    def __call__(self, x):
        return E.add(E.mul(E.layer_norm_last(x), self.store[self.g_name]), self.store[self.b_name])


class MultiHeadSelfAttention:
    """Self-attention with per-head projection matrices, as in the scorer."""

    def __init__(self, store: ParameterStore, name: str, width_in: int, heads: int,
                 head_dim: int, width_out: int):
        self.store = store
        self.heads = heads
        self.inv_sqrt_dk = 1.0 / np.sqrt(head_dim)
        self.wq = [f"{name}.h{i}.wq" for i in range(heads)]
        self.wk = [f"{name}.h{i}.wk" for i in range(heads)]
        self.wv = [f"{name}.h{i}.wv" for i in range(heads)]
        for i in range(heads):
            store.parameter(self.wq[i], (width_in, head_dim))
            store.parameter(self.wk[i], (width_in, head_dim))
            store.parameter(self.wv[i], (width_in, head_dim))
        self.wo = f"{name}.wo"
        store.parameter(self.wo, (heads * head_dim, width_out))

    def __call__(self, x):
        outs = []
        for i in range(self.heads):
            q = E.matmul(x, self.store[self.wq[i]])
            k = E.matmul(x, self.store[self.wk[i]])
            v = E.matmul(x, self.store[self.wv[i]])
            att = E.softmax_last(E.scale(E.matmul(q, k, transpose_b=True), self.inv_sqrt_dk))
            outs.append(E.matmul(att, v))
        return E.matmul(E.concat_last(outs), self.store[self.wo])


class CrossAttention:
    """Queries from one token set, keys/values from another (lane features)."""

    def __init__(self, store: ParameterStore, name: str, width: int, heads: int, head_dim: int):
        self.store = store
        self.heads = heads
        self.inv_sqrt_dk = 1.0 / np.sqrt(head_dim)
        self.names = [(f"{name}.h{i}.wq", f"{name}.h{i}.wk", f"{name}.h{i}.wv") for i in range(heads)]
        for wq, wk, wv in self.names:
            store.parameter(wq, (width, head_dim))
            store.parameter(wk, (width, head_dim))
            store.parameter(wv, (width, head_dim))
        self.wo = f"{name}.wo"
        store.parameter(self.wo, (heads * head_dim, width))

    def __call__(self, x, memory):
        outs = []
        for wq, wk, wv in self.names:
            q = E.matmul(x, self.store[wq])
            k = E.matmul(memory, self.store[wk])
            v = E.matmul(memory, self.store[wv])
            att = E.softmax_last(E.scale(E.matmul(q, k, transpose_b=True), self.inv_sqrt_dk))
            outs.append(E.matmul(att, v))
        return E.matmul(E.concat_last(outs), self.store[self.wo])


class FeedForward:
    def __init__(self, store: ParameterStore, name: str, width: int, hidden: int):
        self.lin1 = Linear(store, f"{name}.lin1", width, hidden)
        self.lin2 = Linear(store, f"{name}.lin2", hidden, width)

    def __call__(self, x, rng=None, rate=0.0):
        return self.lin2(_maybe_dropout(E.gelu(self.lin1(x)), rng, rate))


class TransformerLayer:
    """Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, store: ParameterStore, name: str, width: int, heads: int,
                 head_dim: int, ffn_width: int):
        self.ln1 = LayerNorm(store, f"{name}.ln1", width)
        self.attn = MultiHeadSelfAttention(store, f"{name}.attn", width, heads, head_dim, width)
        self.ln2 = LayerNorm(store, f"{name}.ln2", width)
        self.ffn = FeedForward(store, f"{name}.ffn", width, ffn_width)

    def __call__(self, x, rng=None, rate=0.0):
        x = E.add(x, _maybe_dropout(self.attn(self.ln1(x)), rng, rate))
        return E.add(x, self.ffn(self.ln2(x), rng, rate))


class Encoder:
    """Per-agent temporal self-attention plus one agent-agent attention layer.

    Consumes heading-aligned displacement histories, so its output inherits
    the representation's translation/rotation invariance; with no positional
    features over agents it is permutation-equivariant by construction.
    Optional generic lane features enter through one cross-attention layer.
    """

    def __init__(self, store: ParameterStore, arch: Arch, prefix: str = "enc"):
        self.store = store
        self.arch = arch
        a = arch
        self.embed = Linear(store, f"{prefix}.embed", 2, a.width)
        self.pos = sinusoidal_table(a.t_p, a.width)
        self.temporal = [
            TransformerLayer(store, f"{prefix}.temporal{i}", a.width, a.heads, a.head_dim, a.ffn_width)
            for i in range(a.encoder_layers)
        ]
        self.last_sel = np.zeros((1, a.t_p))
        self.last_sel[0, -1] = 1.0
        self.agent_layer = TransformerLayer(store, f"{prefix}.agents", a.width, a.heads, a.head_dim, a.ffn_width)
        self.lane_proj = Linear(store, f"{prefix}.lane_proj", a.lane_dim, a.width)
        self.lane_attn = CrossAttention(store, f"{prefix}.lanes", a.width, a.heads, a.head_dim)
        self.out_proj = Linear(store, f"{prefix}.out", a.width, a.d_c)

    def __call__(self, histories: np.ndarray, lane_features: np.ndarray | None = None,
                 rng=None) -> np.ndarray:
        """Histories (N, T_p, 2) or (B, N, T_p, 2) -> context (N, d_c) / (B, N, d_c)."""
        a = self.arch
        histories = np.asarray(histories, dtype=np.float64)
        batched = histories.ndim == 4
        if not batched:
            histories = histories[None]
        b, n = histories.shape[0], histories.shape[1]
        if n == 0:
            raise E.ShapeError("encoder needs at least one agent")
        if histories.shape[2:] != (a.t_p, 2):
            raise E.ShapeError(f"histories must end in ({a.t_p}, 2), got {histories.shape}")
        rate = a.dropout

        x = E.reshape(histories, (b * n, a.t_p, 2))
        x = E.add(self.embed(x), self.pos)
        for layer in self.temporal:
            x = layer(x, rng, rate)
        agents = E.reshape(E.matmul(self.last_sel, x), (b, n, a.width))
        agents = self.agent_layer(agents, rng, rate)
        if lane_features is not None:
            lanes = np.asarray(lane_features, dtype=np.float64)
            if lanes.ndim == 2:
                lanes = np.broadcast_to(lanes[None], (b, *lanes.shape)).copy()
            memory = self.lane_proj(lanes)
            agents = E.add(agents, self.lane_attn(agents, memory))
        out = self.out_proj(agents)
        return out if batched else E.reshape(out, (n, a.d_c))


class Denoiser:
    """Transformer over the T_f displacement tokens predicting source noise.

    The diffusion step enters as a sinusoidal feature through a learned
    linear layer; the context vector and the step embedding are concatenated
    onto every token before the transformer stack.
    """

    def __init__(self, store: ParameterStore, arch: Arch, prefix: str = "den"):
        self.store = store
        self.arch = arch
        a = arch
        self.embed = Linear(store, f"{prefix}.embed", 2, a.width)
        self.pos = sinusoidal_table(a.t_f, a.width)
        self.step_proj = Linear(store, f"{prefix}.step", a.width, a.width)
        self.cond_proj = Linear(store, f"{prefix}.cond", a.width + a.d_c + a.width, a.width)
        self.layers = [
            TransformerLayer(store, f"{prefix}.layer{i}", a.width, a.heads, a.head_dim, a.ffn_width)
            for i in range(a.denoiser_layers)
        ]
        self.head_norm = LayerNorm(store, f"{prefix}.head_norm", a.width)
        self.head = Linear(store, f"{prefix}.head", a.width, 2)

    def __call__(self, y: np.ndarray, eta, context: np.ndarray, rng=None) -> np.ndarray:
        """y (B, T_f, 2), eta int or (B,), context (B, d_c) -> noise (B, T_f, 2)."""
        a = self.arch
        y = np.asarray(y, dtype=np.float64)
        context = np.asarray(context, dtype=np.float64)
        if y.ndim != 3 or y.shape[1:] != (a.t_f, 2):
            raise E.ShapeError(f"noisy input must be (B, {a.t_f}, 2), got {y.shape}")
        b = y.shape[0]
        if context.shape != (b, a.d_c):
            raise E.ShapeError(f"context must be ({b}, {a.d_c}), got {context.shape}")
        rate = a.dropout

        tok = E.add(self.embed(y), self.pos)
        eta_arr = np.full(b, eta, dtype=np.float64) if np.ndim(eta) == 0 else np.asarray(eta, dtype=np.float64)
        step = self.step_proj(sinusoidal_features(eta_arr, a.width))
        cexp = E.expand(E.reshape(context, (b, 1, a.d_c)), (b, a.t_f, a.d_c))
        sexp = E.expand(E.reshape(step, (b, 1, a.width)), (b, a.t_f, a.width))
        h = self.cond_proj(E.concat_last([tok, cexp, sexp]))
        for layer in self.layers:
            h = layer(h, rng, rate)
        return self.head(self.head_norm(h))


class Scorer:
    """Relative plausibility scores for a candidate set, one scalar each.

    Every candidate trajectory (flattened, then linearly mapped to width
    T_f) is concatenated with the shared context vector; candidates attend
    to each other through per-head projections, then a residual MLP and a
    down-projection produce raw scores.  Softmax normalization is left to
    the caller.
    """

    def __init__(self, store: ParameterStore, arch: Arch, prefix: str = "scorer"):
        self.store = store
        self.arch = arch
        a = arch
        self.traj_embed = f"{prefix}.traj_embed"
        store.parameter(self.traj_embed, (2 * a.t_f, a.t_f))
        self.attn = MultiHeadSelfAttention(
            store, f"{prefix}.attn", a.t_f + a.d_c, a.heads, a.head_dim, a.scorer_dim
        )
        self.mlp1 = Linear(store, f"{prefix}.mlp1", a.scorer_dim, a.scorer_dim)
        self.mlp2 = Linear(store, f"{prefix}.mlp2", a.scorer_dim, a.scorer_dim)
        self.w_down = f"{prefix}.down"
        store.parameter(self.w_down, (a.scorer_dim, 1))

    def __call__(self, candidates: np.ndarray, context: np.ndarray, rng=None) -> np.ndarray:
        """Candidates (M, T_f, 2) or (B, M, T_f, 2) -> raw scores (M,) / (B, M)."""
        a = self.arch
        candidates = np.asarray(candidates, dtype=np.float64)
        context = np.asarray(context, dtype=np.float64)
        batched = candidates.ndim == 4
        if not batched:
            candidates = candidates[None]
            context = context[None]
        b, m = candidates.shape[0], candidates.shape[1]
        if m == 0:
            raise E.ShapeError("scorer needs at least one candidate")
        if candidates.shape[2:] != (a.t_f, 2):
            raise E.ShapeError(f"candidates must end in ({a.t_f}, 2), got {candidates.shape}")
        if context.shape != (b, a.d_c):
            raise E.ShapeError(f"context must be ({b}, {a.d_c}), got {context.shape}")
        rate = a.dropout

        flat = E.reshape(candidates, (b, m, 2 * a.t_f))
        emb = E.matmul(flat, self.store[self.traj_embed])
        cexp = E.expand(E.reshape(context, (b, 1, a.d_c)), (b, m, a.d_c))
        s = E.concat_last([emb, cexp])
        att = self.attn(s)
        h = _maybe_dropout(E.gelu(self.mlp1(att)), rng, rate)
        out = E.add(att, self.mlp2(h))
        raw = E.reshape(E.matmul(out, self.store[self.w_down]), (b, m))
        return raw if batched else E.reshape(raw, (m,))
