"""From-scratch transformer cross-encoders with manual backpropagation.

Two attention patterns cover both scoring heads: a dense pattern for the
`[cls] context [sep] description [sep]` pair encoder and a sliding-window
pattern with a global first position for the auxiliary-text layout
`<s> <d> D </d> </s> <q>t1</q> ... <q>tk</q> </s>`.  The network itself is
a standard pre-layer-norm transformer (learned absolute positions, two
segment embeddings, GELU feed-forward); the score is a learned vector
dotted with the final hidden state of the first token.

Everything is plain numpy so gradients can be checked against finite
differences.  Forward/backward run batched over padded sequences; padded
rows attend only to themselves, so padding cannot leak into valid
positions and their gradients vanish identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from . import tokenizer as tok
from .corpus import CqaText, Mention

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    heads: int = 4
    layers: int = 2
    ff_dim: int = 256
    max_positions: int = 128
    window: int | None = None  # None = dense; 64 means 32 on each side
    global_positions: tuple[int, ...] = (0,)
    dropout: float = 0.1

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.window is not None and self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "dim": self.dim,
            "heads": self.heads,
            "layers": self.layers,
            "ff_dim": self.ff_dim,
            "max_positions": self.max_positions,
            "window": self.window,
            "global_positions": list(self.global_positions),
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["global_positions"] = tuple(d.get("global_positions", (0,)))
        return cls(**d)


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Parameter shapes in the fixed serialization order."""
    d, ff = config.dim, config.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_positions, d),
        "seg_emb": (2, d),
    }
    for i in range(config.layers):
        p = f"layer{i}."
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.bq"] = (d,)
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.bk"] = (d,)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.bv"] = (d,)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "attn.bo"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        shapes[p + "ffn.w1"] = (d, ff)
        shapes[p + "ffn.b1"] = (ff,)
        shapes[p + "ffn.w2"] = (ff, d)
        shapes[p + "ffn.b2"] = (d,)
    shapes["ln_f.gamma"] = (d,)
    shapes["ln_f.beta"] = (d,)
    shapes["w_score"] = (d,)
    return shapes


def param_order(config: EncoderConfig) -> list[str]:
    return list(param_shapes(config))


def init_params(
    config: EncoderConfig, seed: int, dtype: np.dtype = np.float32
) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(d) weights; zero biases/betas; unit gammas."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(config.dim)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith((".beta", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def attention_pattern(
    T: int, window: int | None, global_positions: Sequence[int] = (0,)
) -> np.ndarray:
    """(T, T) boolean pattern; True where attention is allowed."""
    if window is None:
        return np.ones((T, T), dtype=bool)
    half = window // 2
    idx = np.arange(T)
    pattern = np.abs(idx[:, None] - idx[None, :]) <= half
    for g in global_positions:
        if 0 <= g < T:
            pattern[g, :] = True
            pattern[:, g] = True
    return pattern


def attention_mask(pattern: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """(B, T, T) mask: pattern restricted to valid tokens of each row.

    Rows past a sequence's length attend only to themselves, keeping the
    softmax well-defined without letting padding reach valid positions.
    """
    T = pattern.shape[0]
    valid = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
    mask = pattern[None, :, :] & valid[:, None, :] & valid[:, :, None]
    eye = np.eye(T, dtype=bool)
    return np.where(valid[:, :, None], mask, eye[None, :, :])


def pad_batch(
    id_arrays: Sequence[np.ndarray],
    seg_arrays: Sequence[np.ndarray],
    pad_id: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack variable-length id/segment arrays into padded (B, T) blocks."""
    lengths = np.array([len(a) for a in id_arrays], dtype=np.int64)
    T = max(1, int(lengths.max()) if len(lengths) else 1)
    ids = np.full((len(id_arrays), T), pad_id, dtype=np.int32)
    segs = np.zeros((len(id_arrays), T), dtype=np.int32)
    for b, (ia, sa) in enumerate(zip(id_arrays, seg_arrays)):
        ids[b, : len(ia)] = ia
        segs[b, : len(sa)] = sa
    return ids, segs, lengths


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _layernorm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def _layernorm_backward(dy, cache):
    xhat, inv, gamma = cache
    dgamma = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbeta = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _linear(x, w, b):
    return x @ w + b


def _linear_backward(dy, x, w):
    # x: (B, T, in), dy: (B, T, out)
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


@dataclass
class EncodeResult:
    scores: np.ndarray  # (B,)
    pooled: np.ndarray  # (B, dim)
    tape: dict | None = None
    attentions: list[np.ndarray] | None = None  # per layer, (B, heads, T, T)


class Encoder:
    """A transformer scorer: params are a flat name->array dict so the
    optimizer and checkpoint code can treat them uniformly."""

    def __init__(self, config: EncoderConfig, params: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(f"parameter mismatch: missing {missing}, extra {extra}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ValueError(f"{name}: shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, seed: int, dtype: np.dtype = np.float32) -> "Encoder":
        return cls(config, init_params(config, seed, dtype))

    @property
    def dtype(self) -> np.dtype:
        return self.params["tok_emb"].dtype

    def forward(
        self,
        ids: np.ndarray,
        segs: np.ndarray,
        lengths: np.ndarray,
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
        keep_tape: bool = False,
        collect_attention: bool = False,
    ) -> EncodeResult:
        cfg = self.config
        p = self.params
        B, T = ids.shape
        if T > cfg.max_positions:
            raise ValueError(f"sequence length {T} exceeds max_positions {cfg.max_positions}")
        if train and rng is None:
            raise ValueError("training forward needs an rng for dropout")
        keep = 1.0 - cfg.dropout if train and cfg.dropout > 0 else 1.0

        def dropout_mask(shape):
            if keep >= 1.0:
                return None
            return (rng.random(shape) < keep).astype(self.dtype) / keep

        pattern = attention_pattern(T, cfg.window, cfg.global_positions)
        mask = attention_mask(pattern, lengths)

        x = p["tok_emb"][ids] + p["pos_emb"][:T][None, :, :] + p["seg_emb"][segs]
        emb_drop = dropout_mask(x.shape)
        if emb_drop is not None:
            x = x * emb_drop

        nh, dh = cfg.heads, cfg.dim // cfg.heads
        scale = 1.0 / math.sqrt(dh)
        layers_tape = []
        attentions = [] if collect_attention else None
        for i in range(cfg.layers):
            lp = f"layer{i}."
            x_in = x
            h, ln1_cache = _layernorm(x, p[lp + "ln1.gamma"], p[lp + "ln1.beta"])
            q = _linear(h, p[lp + "attn.wq"], p[lp + "attn.bq"])
            k = _linear(h, p[lp + "attn.wk"], p[lp + "attn.bk"])
            v = _linear(h, p[lp + "attn.wv"], p[lp + "attn.bv"])
            q = q.reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
            k = k.reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
            v = v.reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
            raw = (q @ k.transpose(0, 1, 3, 2)) * scale
            masked = np.where(mask[:, None, :, :], raw, -np.inf)
            shifted = masked - masked.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            a = e / e.sum(axis=-1, keepdims=True)
            if collect_attention:
                attentions.append(a.copy())
            ctx = (a @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.dim)
            o = _linear(ctx, p[lp + "attn.wo"], p[lp + "attn.bo"])
            o_drop = dropout_mask(o.shape)
            if o_drop is not None:
                o = o * o_drop
            x = x_in + o
            x_mid = x
            h2, ln2_cache = _layernorm(x, p[lp + "ln2.gamma"], p[lp + "ln2.beta"])
            u = _linear(h2, p[lp + "ffn.w1"], p[lp + "ffn.b1"])
            g = gelu(u)
            f = _linear(g, p[lp + "ffn.w2"], p[lp + "ffn.b2"])
            x = x_mid + f
            if keep_tape:
                layers_tape.append(
                    dict(
                        ln1=ln1_cache, h=h, q=q, k=k, v=v, a=a, ctx=ctx,
                        o_drop=o_drop, ln2=ln2_cache, h2=h2, u=u, g=g,
                    )
                )
        xf, lnf_cache = _layernorm(x, p["ln_f.gamma"], p["ln_f.beta"])
        pooled = xf[:, 0, :]
        scores = pooled @ p["w_score"]
        tape = None
        if keep_tape:
            tape = dict(
                ids=ids, segs=segs, T=T, emb_drop=emb_drop,
                layers=layers_tape, lnf=lnf_cache, pooled=pooled, scale=scale,
            )
        return EncodeResult(scores=scores, pooled=pooled, tape=tape, attentions=attentions)

    def backward(self, tape: dict, dscores: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(dscores * scores) w.r.t. every parameter."""
        cfg = self.config
        p = self.params
        ids, segs, T = tape["ids"], tape["segs"], tape["T"]
        B = ids.shape[0]
        nh, dh = cfg.heads, cfg.dim // cfg.heads
        scale = tape["scale"]
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}

        grads["w_score"] += dscores @ tape["pooled"]
        dxf = np.zeros((B, T, cfg.dim), dtype=self.dtype)
        dxf[:, 0, :] = dscores[:, None] * p["w_score"][None, :]
        dx, dgamma, dbeta = _layernorm_backward(dxf, tape["lnf"])
        grads["ln_f.gamma"] += dgamma
        grads["ln_f.beta"] += dbeta

        for i in reversed(range(cfg.layers)):
            lp = f"layer{i}."
            lt = tape["layers"][i]
            # feed-forward sublayer
            df = dx
            dg, dw2, db2 = _linear_backward(df, lt["g"], p[lp + "ffn.w2"])
            grads[lp + "ffn.w2"] += dw2
            grads[lp + "ffn.b2"] += db2
            du = dg * gelu_grad(lt["u"])
            dh2, dw1, db1 = _linear_backward(du, lt["h2"], p[lp + "ffn.w1"])
            grads[lp + "ffn.w1"] += dw1
            grads[lp + "ffn.b1"] += db1
            dx_mid, dgamma, dbeta = _layernorm_backward(dh2, lt["ln2"])
            grads[lp + "ln2.gamma"] += dgamma
            grads[lp + "ln2.beta"] += dbeta
            dx = dx + dx_mid
            # attention sublayer
            do = dx
            if lt["o_drop"] is not None:
                do = do * lt["o_drop"]
            dctx, dwo, dbo = _linear_backward(do, lt["ctx"], p[lp + "attn.wo"])
            grads[lp + "attn.wo"] += dwo
            grads[lp + "attn.bo"] += dbo
            dctx = dctx.reshape(B, T, nh, dh).transpose(0, 2, 1, 3)
            a, q, k, v = lt["a"], lt["q"], lt["k"], lt["v"]
            da = dctx @ v.transpose(0, 1, 3, 2)
            dv = a.transpose(0, 1, 3, 2) @ dctx
            ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
            draw = ds * scale
            dq = draw @ k
            dk = draw.transpose(0, 1, 3, 2) @ q
            dq = dq.transpose(0, 2, 1, 3).reshape(B, T, cfg.dim)
            dk = dk.transpose(0, 2, 1, 3).reshape(B, T, cfg.dim)
            dv = dv.transpose(0, 2, 1, 3).reshape(B, T, cfg.dim)
            h = lt["h"]
            dh_q, dwq, dbq = _linear_backward(dq, h, p[lp + "attn.wq"])
            dh_k, dwk, dbk = _linear_backward(dk, h, p[lp + "attn.wk"])
            dh_v, dwv, dbv = _linear_backward(dv, h, p[lp + "attn.wv"])
            grads[lp + "attn.wq"] += dwq
            grads[lp + "attn.bq"] += dbq
            grads[lp + "attn.wk"] += dwk
            grads[lp + "attn.bk"] += dbk
            grads[lp + "attn.wv"] += dwv
            grads[lp + "attn.bv"] += dbv
            dh_sum = dh_q + dh_k + dh_v
            dx_in, dgamma, dbeta = _layernorm_backward(dh_sum, lt["ln1"])
            grads[lp + "ln1.gamma"] += dgamma
            grads[lp + "ln1.beta"] += dbeta
            dx = dx + dx_in

        if tape["emb_drop"] is not None:
            dx = dx * tape["emb_drop"]
        np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, cfg.dim))
        grads["pos_emb"][:T] += dx.sum(axis=0)
        np.add.at(grads["seg_emb"], segs.reshape(-1), dx.reshape(-1, cfg.dim))
        return grads


# --- input layouts ---------------------------------------------------------


def build_pair_tokens(
    context_tokens: list[str],
    desc_tokens: list[str],
    total_budget: int = 128,
    context_reserve: int | None = None,
) -> tuple[list[str], list[int]]:
    """`[cls] C [sep] D [sep]` with segment ids 0 for the context half and
    1 for the description half.

    When the pair exceeds the budget, the context keeps up to half the
    budget (the reserve) and the description takes the remainder, so the
    longer side is cut first and nothing is cut when both fit.
    """
    if total_budget < 8:
        raise ValueError(f"total_budget must be >= 8, got {total_budget}")
    if context_reserve is None:
        context_reserve = total_budget // 2
    available = total_budget - 3
    c_len = min(len(context_tokens), max(context_reserve, available - len(desc_tokens)))
    c_len = min(c_len, available)
    d_len = min(len(desc_tokens), available - c_len)
    c = context_tokens[:c_len]
    d = desc_tokens[:d_len]
    tokens = [tok.CLS, *c, tok.SEP, *d, tok.SEP]
    segs = [0] * (len(c) + 2) + [1] * (len(d) + 1)
    return tokens, segs


def build_aux_tokens(
    desc_tokens: list[str],
    text_token_lists: Sequence[list[str]],
    desc_limit: int = 128,
    text_limit: int = 64,
) -> tuple[list[str], list[int]]:
    """`<s> <d> D </d> </s> <q>t1</q> ... <q>tk</q> </s>`; description
    segment 0, useful-text segment 1.  With no texts the sequence is
    `<s> <d> D </d> </s> </s>`."""
    d = desc_tokens[:desc_limit]
    tokens = [tok.S, tok.D, *d, tok.SLASH_D, tok.SLASH_S]
    segs = [0] * len(tokens)
    for t in text_token_lists:
        t = t[:text_limit]
        tokens.extend([tok.Q, *t, tok.SLASH_Q])
        segs.extend([1] * (len(t) + 2))
    tokens.append(tok.SLASH_S)
    segs.append(1)
    return tokens, segs


def aux_sequence_length(k: int, desc_limit: int = 128, text_limit: int = 64) -> int:
    """Worst-case aux sequence length for k texts (sizing max_positions)."""
    return 5 + desc_limit + k * (text_limit + 2) + 1


def mention_context(z: CqaText, m: Mention, budget: int = 64) -> str:
    """Mention-centered token window over the host unit, with `<m> ... </m>`
    boundary markers around the surface; whitespace-joined tokens."""
    if budget < 8:
        raise ValueError(f"budget must be >= 8, got {budget}")
    host = z.host_text(m)
    left = tok.tokenize(host[: m.start])
    mid = tok.tokenize(host[m.start : m.end])
    right = tok.tokenize(host[m.end :])
    remaining = budget - 2 - len(mid)
    if remaining < 0:
        mid = mid[: budget - 2]
        remaining = 0
    half = remaining // 2
    left_take = min(len(left), remaining - min(len(right), half))
    right_take = min(len(right), remaining - left_take)
    parts = left[len(left) - left_take :] + [tok.M] + mid + [tok.SLASH_M] + right[:right_take]
    return " ".join(parts)


# --- single-call scoring ops ----------------------------------------------


def encode_context_pair(
    encoder: Encoder,
    tk: tok.Tokenizer,
    context: str,
    description: str,
    total_budget: int = 128,
) -> tuple[float, np.ndarray]:
    tokens, segs = build_pair_tokens(
        tok.tokenize(context), tok.tokenize(description), total_budget
    )
    ids, seg_ids, lengths = pad_batch(
        [tk.encode_tokens(tokens)], [np.asarray(segs, dtype=np.int32)], tk.pad_id
    )
    out = encoder.forward(ids, seg_ids, lengths)
    return float(out.scores[0]), out.pooled[0]


def encode_aux(
    encoder: Encoder,
    tk: tok.Tokenizer,
    description: str,
    useful_texts: Sequence[str],
    desc_limit: int = 128,
    text_limit: int = 64,
) -> tuple[float, np.ndarray]:
    tokens, segs = build_aux_tokens(
        tok.tokenize(description),
        [tok.tokenize(t) for t in useful_texts],
        desc_limit,
        text_limit,
    )
    ids, seg_ids, lengths = pad_batch(
        [tk.encode_tokens(tokens)], [np.asarray(segs, dtype=np.int32)], tk.pad_id
    )
    out = encoder.forward(ids, seg_ids, lengths)
    return float(out.scores[0]), out.pooled[0]


# --- gradient checking ------------------------------------------------------


def flatten_params(params: dict[str, np.ndarray], order: Iterable[str]) -> np.ndarray:
    return np.concatenate([params[name].ravel() for name in order])


def unflatten_params(
    vector: np.ndarray, shapes: dict[str, tuple[int, ...]]
) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape)) if shape else 1
        out[name] = vector[pos : pos + size].reshape(shape)
        pos += size
    if pos != len(vector):
        raise ValueError(f"vector has {len(vector)} elements, shapes need {pos}")
    return out


def numerical_gradient(
    f: Callable[[dict[str, np.ndarray]], float],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar function, element by element.
    Use fp64 parameters; fp32 loses the difference signal at h=1e-5."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = f(params)
            flat[j] = orig - h
            down = f(params)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def max_relative_error(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    floor: float = 1e-3,
) -> float:
    worst = 0.0
    for name in analytic:
        a = np.asarray(analytic[name], dtype=np.float64)
        n = np.asarray(numeric[name], dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
