"""Desk-scale visual language model: a visual-prefix mapping network feeding a
pre-norm causal transformer, with exact hand-written backpropagation.

Parameters live in a flat dict of numpy arrays. The output head is weight-tied
to the token-embedding table ("tok_emb" serves both), so tying holds by
construction after any update. Everything runs in the dtype of the parameter
arrays; training uses float32 while gradient checking casts to float64.
Loss and softmax reductions accumulate in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .episodes import ModelInput
from .errors import ConfigurationError, ValidationError

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class TinyVLMConfig:
    vocab_size: int
    input_dim: int = 64
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    prefix_len: int = 5
    map_hidden: int = 128
    max_len: int = 160
    init_std: float = 0.02

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        for name in ("vocab_size", "input_dim", "d_model", "n_layers", "n_heads",
                     "d_ff", "prefix_len", "map_hidden", "max_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def init_params(config: TinyVLMConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 23])
    s = config.init_std
    d, v = config.d_model, config.vocab_size

    def norm(*shape):
        return (rng.standard_normal(shape) * s).astype(np.float32)

    p: dict[str, np.ndarray] = {
        "tok_emb": norm(v, d),
        "pos_emb": norm(config.max_len, d),
        "map.w1": norm(config.input_dim, config.map_hidden),
        "map.b1": np.zeros(config.map_hidden, dtype=np.float32),
        "map.w2": norm(config.map_hidden, config.prefix_len * d),
        "map.b2": np.zeros(config.prefix_len * d, dtype=np.float32),
        "ln_f.g": np.ones(d, dtype=np.float32),
        "ln_f.b": np.zeros(d, dtype=np.float32),
        "head.b": np.zeros(v, dtype=np.float32),
    }
    for i in range(config.n_layers):
        pre = f"blk{i}."
        p[pre + "ln1.g"] = np.ones(d, dtype=np.float32)
        p[pre + "ln1.b"] = np.zeros(d, dtype=np.float32)
        for nm in ("wq", "wk", "wv", "wo"):
            p[pre + "attn." + nm] = norm(d, d)
        for nm in ("bq", "bk", "bv", "bo"):
            p[pre + "attn." + nm] = np.zeros(d, dtype=np.float32)
        p[pre + "ln2.g"] = np.ones(d, dtype=np.float32)
        p[pre + "ln2.b"] = np.zeros(d, dtype=np.float32)
        p[pre + "ffn.w1"] = norm(d, config.d_ff)
        p[pre + "ffn.b1"] = np.zeros(config.d_ff, dtype=np.float32)
        p[pre + "ffn.w2"] = norm(config.d_ff, d)
        p[pre + "ffn.b2"] = np.zeros(d, dtype=np.float32)
    return p


def cast_params(params: dict, dtype) -> dict:
    return {k: v.astype(dtype) for k, v in params.items()}


def params_equal(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


# ---------------------------------------------------------------------------
# primitive layers


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True, dtype=np.float64))
    return z - lse.astype(x.dtype)


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu_fwd(x):
    u = x * x
    u *= x
    u *= 0.044715
    u += x
    u *= _GELU_C
    t = np.tanh(u)
    y = t + 1.0
    y *= x
    y *= 0.5
    return y, t


def _gelu_bwd(dy, x, t):
    du = x * x
    du *= 3 * 0.044715
    du += 1.0
    du *= _GELU_C
    du *= 1.0 - t * t
    du *= x
    du += 1.0 + t
    du *= 0.5
    du *= dy
    return du


def map_visual(params: dict, config: TinyVLMConfig, embedding: np.ndarray) -> np.ndarray:
    """One embedding vector -> (prefix_len, d_model) visual prefix."""
    return map_visual_batch(params, config, embedding[None])[0]


def map_visual_batch(params: dict, config: TinyVLMConfig, embeddings: np.ndarray) -> np.ndarray:
    emb = np.asarray(embeddings)
    if emb.ndim != 2 or emb.shape[1] != config.input_dim:
        raise ConfigurationError(
            f"expected ({'S'}, {config.input_dim}) embeddings, got {emb.shape}"
        )
    emb = emb.astype(params["map.w1"].dtype)
    a1 = np.tanh(emb @ params["map.w1"] + params["map.b1"])
    pre = a1 @ params["map.w2"] + params["map.b2"]
    return pre.reshape(len(emb), config.prefix_len, config.d_model)


# ---------------------------------------------------------------------------
# forward / backward


def _pack_batch(config, batch: list[ModelInput], lookup, pad_id: int):
    B = len(batch)
    T = max(len(inp) for inp in batch)
    if T > config.max_len:
        raise ValidationError(f"batch length {T} exceeds max_len {config.max_len}")
    ids = np.full((B, T), pad_id, dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    bs, ps, rows = [], [], []
    for b, inp in enumerate(batch):
        L = len(inp)
        ids[b, :L] = inp.token_ids
        mask[b, :L] = inp.loss_mask
        for pos, row in inp.image_slots:
            bs.append(b)
            ps.append(pos)
            rows.append(row)
    if (ids >= config.vocab_size).any() or (ids < 0).any():
        raise ConfigurationError("token id outside the model's vocabulary")
    vis = lookup.vectors(rows) if rows else np.zeros((0, config.input_dim), np.float32)
    bs = np.asarray(bs, dtype=np.int64)
    ps = np.asarray(ps, dtype=np.int64)
    P = config.prefix_len
    b_rep = np.repeat(bs, P)
    t_rep = (ps[:, None] + np.arange(P)[None, :]).reshape(-1)
    return ids, mask, vis, b_rep, t_rep


_CAUSAL_CACHE: dict[tuple, np.ndarray] = {}


def _causal_mask(T: int, dtype) -> np.ndarray:
    key = (T, np.dtype(dtype).str)
    if key not in _CAUSAL_CACHE:
        _CAUSAL_CACHE[key] = np.triu(np.full((T, T), -1e9, dtype=dtype), k=1)
    return _CAUSAL_CACHE[key]


def _split_heads(x, B, T, H, hd):
    """(B, T, d) -> contiguous (B*H, T, hd) for strided batched matmul."""
    return np.ascontiguousarray(x.reshape(B, T, H, hd).transpose(0, 2, 1, 3)).reshape(
        B * H, T, hd
    )


def _merge_heads(x, B, T, H, hd):
    return np.ascontiguousarray(x.reshape(B, H, T, hd).transpose(0, 2, 1, 3)).reshape(
        B, T, H * hd
    )


def _forward_core(params, config, ids, vis, b_rep, t_rep, want_trace: bool):
    dtype = params["tok_emb"].dtype
    B, T = ids.shape
    emb64 = vis.astype(dtype)
    a1 = np.tanh(emb64 @ params["map.w1"] + params["map.b1"])
    prefix = (a1 @ params["map.w2"] + params["map.b2"]).reshape(
        len(vis), config.prefix_len, config.d_model
    )
    x0 = params["tok_emb"][ids]  # fancy indexing copies
    spliced = np.zeros((B, T), dtype=bool)
    if len(vis):
        x0[b_rep, t_rep] = prefix.reshape(-1, config.d_model)
        spliced[b_rep, t_rep] = True
    x = x0 + params["pos_emb"][:T]
    H, hd = config.n_heads, config.d_model // config.n_heads
    scale = 1.0 / math.sqrt(hd)
    causal = _causal_mask(T, dtype)
    layers = []
    for i in range(config.n_layers):
        pre = f"blk{i}."
        n1, c1 = _layernorm_fwd(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        q = n1 @ params[pre + "attn.wq"] + params[pre + "attn.bq"]
        k = n1 @ params[pre + "attn.wk"] + params[pre + "attn.bk"]
        v = n1 @ params[pre + "attn.wv"] + params[pre + "attn.bv"]
        qh = _split_heads(q, B, T, H, hd)
        kh = _split_heads(k, B, T, H, hd)
        vh = _split_heads(v, B, T, H, hd)
        s = qh @ kh.swapaxes(-1, -2)
        s *= scale
        s += causal
        p = softmax(s)
        o = _merge_heads(p @ vh, B, T, H, hd)
        ao = o @ params[pre + "attn.wo"] + params[pre + "attn.bo"]
        x_att = x + ao
        n2, c2 = _layernorm_fwd(x_att, params[pre + "ln2.g"], params[pre + "ln2.b"])
        f1 = n2 @ params[pre + "ffn.w1"] + params[pre + "ffn.b1"]
        gact, gt = _gelu_fwd(f1)
        f2 = gact @ params[pre + "ffn.w2"] + params[pre + "ffn.b2"]
        x_out = x_att + f2
        if want_trace:
            layers.append(
                dict(n1=n1, c1=c1, qh=qh, kh=kh, vh=vh, p=p, o=o, c2=c2,
                     n2=n2, f1=f1, gt=gt, gact=gact)
            )
        x = x_out
    hf, cf = _layernorm_fwd(x, params["ln_f.g"], params["ln_f.b"])
    core = dict(
        ids=ids, vis=emb64, a1=a1, b_rep=b_rep, t_rep=t_rep, spliced=spliced,
        layers=layers, cf=cf, hf=hf, scale=scale, shape=(B, T, H, hd),
    )
    return hf, core


class ForwardTrace:
    """Activations cached by forward_loss, sufficient for exact backprop.

    `logits` holds the next-token logits at the positions preceding each
    masked target; `d_logits` is filled in by backward() for inspection."""

    def __init__(self, core, mask, pred_b, pred_t, tgt_ids, logits, probs, loss):
        self.core = core
        self.mask = mask
        self.pred_b = pred_b
        self.pred_t = pred_t
        self.tgt_ids = tgt_ids
        self.logits = logits
        self.probs = probs
        self.loss = loss
        self.d_logits: np.ndarray | None = None


def forward_loss(
    params: dict,
    config: TinyVLMConfig,
    batch: ModelInput | list[ModelInput],
    lookup,
    want_trace: bool = True,
) -> tuple[float, ForwardTrace]:
    """Mean cross-entropy over masked target tokens (teacher-forced); support
    and prompt positions contribute nothing."""
    if isinstance(batch, ModelInput):
        batch = [batch]
    pad_id = 0
    ids, mask, vis, b_rep, t_rep = _pack_batch(config, batch, lookup, pad_id)
    if not mask.any():
        raise ValidationError("empty target: loss mask is all false")
    hf, core = _forward_core(params, config, ids, vis, b_rep, t_rep, want_trace=want_trace)
    pred_b, pred_t = np.nonzero(mask)
    tgt_ids = ids[pred_b, pred_t]
    h_m = hf[pred_b, pred_t - 1]
    logits = h_m @ params["tok_emb"].T + params["head.b"]
    lse = np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1, dtype=np.float64))
    logp = (logits[np.arange(len(tgt_ids)), tgt_ids] - logits.max(axis=1)) - lse
    loss = float(-(logp.astype(np.float64)).mean())
    probs = softmax(logits.astype(np.float64)).astype(logits.dtype)
    return loss, ForwardTrace(core, mask, pred_b, pred_t, tgt_ids, logits, probs, loss)


def backward(params: dict, config: TinyVLMConfig, trace: ForwardTrace) -> dict[str, np.ndarray]:
    """Exact gradients of the traced loss for every parameter tensor."""
    core = trace.core
    B, T, H, hd = core["shape"]
    dtype = params["tok_emb"].dtype
    M = len(trace.tgt_ids)
    dlogits = trace.probs.copy()
    dlogits[np.arange(M), trace.tgt_ids] -= 1.0
    dlogits /= M
    trace.d_logits = dlogits
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["head.b"] += dlogits.sum(axis=0)
    h_m = core["hf"][trace.pred_b, trace.pred_t - 1]
    dE_head = dlogits.T @ h_m
    dhf = np.zeros((B, T, config.d_model), dtype=dtype)
    np.add.at(dhf, (trace.pred_b, trace.pred_t - 1), dlogits @ params["tok_emb"])
    dx, dg, db = _layernorm_bwd(dhf, core["cf"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db
    scale = core["scale"]
    for i in reversed(range(config.n_layers)):
        pre = f"blk{i}."
        L = core["layers"][i]
        # feed-forward
        df2 = dx
        flat = lambda a: a.reshape(-1, a.shape[-1])
        grads[pre + "ffn.w2"] += flat(L["gact"]).T @ flat(df2)
        grads[pre + "ffn.b2"] += flat(df2).sum(axis=0)
        dgact = df2 @ params[pre + "ffn.w2"].T
        df1 = _gelu_bwd(dgact, L["f1"], L["gt"])
        grads[pre + "ffn.w1"] += flat(L["n2"]).T @ flat(df1)
        grads[pre + "ffn.b1"] += flat(df1).sum(axis=0)
        dn2 = df1 @ params[pre + "ffn.w1"].T
        dx_att, dg2, db2 = _layernorm_bwd(dn2, L["c2"])
        grads[pre + "ln2.g"] += dg2
        grads[pre + "ln2.b"] += db2
        dx = dx + dx_att
        # attention
        dao = dx
        grads[pre + "attn.wo"] += flat(L["o"]).T @ flat(dao)
        grads[pre + "attn.bo"] += flat(dao).sum(axis=0)
        do = dao @ params[pre + "attn.wo"].T
        doh = _split_heads(do, B, T, H, hd)
        dp = doh @ L["vh"].swapaxes(-1, -2)
        dvh = L["p"].swapaxes(-1, -2) @ doh
        ds = L["p"] * (dp - (dp * L["p"]).sum(axis=-1, keepdims=True))
        ds *= scale
        dqh = ds @ L["kh"]
        dkh = ds.swapaxes(-1, -2) @ L["qh"]
        dq = _merge_heads(dqh, B, T, H, hd)
        dk = _merge_heads(dkh, B, T, H, hd)
        dv = _merge_heads(dvh, B, T, H, hd)
        n1f = flat(L["n1"])
        grads[pre + "attn.wq"] += n1f.T @ flat(dq)
        grads[pre + "attn.wk"] += n1f.T @ flat(dk)
        grads[pre + "attn.wv"] += n1f.T @ flat(dv)
        grads[pre + "attn.bq"] += flat(dq).sum(axis=0)
        grads[pre + "attn.bk"] += flat(dk).sum(axis=0)
        grads[pre + "attn.bv"] += flat(dv).sum(axis=0)
        dn1 = (
            dq @ params[pre + "attn.wq"].T
            + dk @ params[pre + "attn.wk"].T
            + dv @ params[pre + "attn.wv"].T
        )
        dx_in, dg1, db1 = _layernorm_bwd(dn1, L["c1"])
        grads[pre + "ln1.g"] += dg1
        grads[pre + "ln1.b"] += db1
        dx = dx + dx_in
    # embeddings: positions first, then split token/visual paths
    grads["pos_emb"][:T] += dx.sum(axis=0)
    spliced = core["spliced"]
    ids = core["ids"]
    tok_pos = ~spliced
    flat_ids = ids[tok_pos]
    np.add.at(grads["tok_emb"], flat_ids, dx[tok_pos])
    grads["tok_emb"] += dE_head
    if len(core["vis"]):
        dprefix = dx[core["b_rep"], core["t_rep"]].reshape(len(core["vis"]), -1)
        a1 = core["a1"]
        grads["map.w2"] += a1.T @ dprefix
        grads["map.b2"] += dprefix.sum(axis=0)
        da1 = dprefix @ params["map.w2"].T
        dh1 = da1 * (1.0 - a1 * a1)
        grads["map.w1"] += core["vis"].T @ dh1
        grads["map.b1"] += dh1.sum(axis=0)
    return grads


def forward_logits_at_end(
    params: dict, config: TinyVLMConfig, batch: list[ModelInput], lookup
) -> np.ndarray:
    """Next-token logits at each sequence's final position (inference path)."""
    pad_id = 0
    ids, _, vis, b_rep, t_rep = _pack_batch(config, batch, lookup, pad_id)
    hf, _ = _forward_core(params, config, ids, vis, b_rep, t_rep, want_trace=False)
    last = np.array([len(inp) - 1 for inp in batch])
    h = hf[np.arange(len(batch)), last]
    return h @ params["tok_emb"].T + params["head.b"]


# ---------------------------------------------------------------------------
# decoding


def beam_search(
    step_fn,
    beam_width: int,
    max_new: int,
    eos_id: int,
) -> list[int]:
    """Length-normalized beam search over a step function mapping a batch of
    generated-so-far id lists to (batch, V) next-token log probabilities.
    Width 1 reduces to greedy argmax."""
    if beam_width < 1:
        raise ValidationError("beam_width must be >= 1")
    if max_new < 1:
        raise ValidationError("max_new must be >= 1")
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_new):
        if not live:
            break
        logps = step_fn([list(ids) for ids, _ in live])
        cands: list[tuple[tuple[int, ...], float]] = []
        for (ids, lp), row in zip(live, logps):
            for tok in range(len(row)):
                cands.append((ids + (tok,), lp + float(row[tok])))
        cands.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for ids, lp in cands:
            if len(live) >= beam_width:
                break
            if ids[-1] == eos_id:
                finished.append((ids, lp))
            else:
                live.append((ids, lp))
    finished.extend(live)

    def norm_score(item):
        ids, lp = item
        return lp / max(1, len(ids))

    finished.sort(key=lambda c: (-norm_score(c), c[0]))
    best = finished[0][0]
    return [t for t in best if t != eos_id]


def decode(
    params: dict,
    config: TinyVLMConfig,
    prompt: ModelInput,
    lookup,
    beam_width: int = 3,
    max_new: int = 8,
    eos_id: int = 1,
) -> list[int]:
    """Generate up to max_new tokens after the prompt; stops a beam at <EOS>."""
    if prompt.loss_mask.any():
        raise ValidationError("decode prompt must not carry a loss mask")

    def step(gen_batch: list[list[int]]) -> np.ndarray:
        inputs = []
        for gen in gen_batch:
            ids = np.concatenate([prompt.token_ids, np.asarray(gen, dtype=np.int64)])
            inputs.append(
                ModelInput(ids, prompt.image_slots, np.zeros(len(ids), dtype=bool))
            )
        logits = forward_logits_at_end(params, config, inputs, lookup)
        return log_softmax(logits.astype(np.float64))

    return beam_search(step, beam_width, max_new, eos_id)
