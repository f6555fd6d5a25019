"""Small causal transformer decoder conditioned on a visual prefix.

The input sequence is [visual tokens] ++ [start token] ++ [text tokens];
every attention layer exposes a bias hook fed by a BiasPlan.  Pre-layer-norm
blocks, learned positions, a linear per-cell patch embedder on the visual
side, and a plain LM head.  Forward, backward, and the AdamW-ready gradient
dictionary are written directly over float64 numpy arrays so that gradients
can be audited against central finite differences.
"""

import io
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .bias import BiasMode, BiasPlan, make_causal_mask, make_layer_bias
from .numerics import NEG_INF, softmax_rows

LN_EPS = 1e-5
INIT_STD = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

CKPT_MAGIC = b"ATTNPRIOR-CKPT-1\n"
_CONFIG_KEYS = ("d_model", "n_layers", "n_heads", "vocab_size",
                "visual_len", "max_pos", "ffn_mult")


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    vocab_size: int = 16
    visual_len: int = 64
    max_pos: int = 128
    ffn_mult: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.max_pos < self.visual_len + 1:
            raise ValueError(f"max_pos {self.max_pos} < visual_len + 1 = {self.visual_len + 1}")
        g = math.isqrt(self.visual_len)
        if g * g != self.visual_len:
            raise ValueError(f"visual_len {self.visual_len} is not a square grid")
        for field in ("d_model", "n_layers", "n_heads", "vocab_size", "ffn_mult"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")

    @property
    def grid(self) -> int:
        return math.isqrt(self.visual_len)

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_ffn(self) -> int:
        return self.d_model * self.ffn_mult


def parameter_shapes(config: DecoderConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape map; parameter count is a pure function of the config."""
    d, v = config.d_model, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "patch.w": (1, d),
        "patch.b": (d,),
        "tok_emb": (v, d),
        "pos_emb": (config.max_pos, d),
        "start_emb": (d,),
    }
    for i in range(config.n_layers):
        pre = f"layer{i}."
        shapes[pre + "ln1.g"] = (d,)
        shapes[pre + "ln1.b"] = (d,)
        for proj in ("q", "k", "v", "out"):
            shapes[pre + f"attn.{proj}.w"] = (d, d)
            shapes[pre + f"attn.{proj}.b"] = (d,)
        shapes[pre + "ln2.g"] = (d,)
        shapes[pre + "ln2.b"] = (d,)
        shapes[pre + "ffn.fc1.w"] = (d, config.d_ffn)
        shapes[pre + "ffn.fc1.b"] = (config.d_ffn,)
        shapes[pre + "ffn.fc2.w"] = (config.d_ffn, d)
        shapes[pre + "ffn.fc2.b"] = (d,)
    shapes["lnf.g"] = (d,)
    shapes["lnf.b"] = (d,)
    shapes["head.w"] = (d, v)
    shapes["head.b"] = (v,)
    return shapes


def _layernorm_fwd(x, gain, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + beta, (xhat, inv, gain)


def _layernorm_bwd(dy, cache):
    xhat, inv, gain = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbeta


def _gelu_fwd(x):
    u = _GELU_C * (x + _GELU_A * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd(x, t):
    # t is the tanh computed in the forward pass; only cheap elementwise
    # work remains here.
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * (x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _gelu(x):
    return _gelu_fwd(x)[0]


def _softmax_last(att):
    b, h, s, k = att.shape
    return softmax_rows(att.reshape(b * h * s, k)).reshape(b, h, s, k)


def _split_heads(x, n_heads):
    b, s, d = x.shape
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


class DecoderModel:
    """Parameter container plus forward/backward/generate.

    Instances are safe to share for concurrent inference; training mutates
    `params` and must be externally serialized.
    """

    def __init__(self, config: DecoderConfig, params: dict[str, np.ndarray]):
        shapes = parameter_shapes(config)
        if set(params) != set(shapes):
            missing = sorted(set(shapes) - set(params))
            extra = sorted(set(params) - set(shapes))
            raise ValueError(f"parameter set mismatch: missing {missing}, extra {extra}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: DecoderConfig, seed: int) -> "DecoderModel":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in parameter_shapes(config).items():
            if name.endswith(".g"):
                params[name] = np.ones(shape, dtype=np.float64)
            elif name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=np.float64)
            else:
                params[name] = rng.normal(0.0, INIT_STD, size=shape)
        return cls(config, params)

    def parameter_count(self) -> int:
        return sum(arr.size for arr in self.params.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}

    # ---------------------------------------------------------------- plans

    def _plan_list(self, plans, batch: int):
        if plans is None:
            return None
        if isinstance(plans, BiasPlan):
            plans = [plans] * batch
        plans = list(plans)
        if len(plans) != batch:
            raise ValueError(f"got {len(plans)} plans for batch of {batch}")
        modes = {p.mode for p in plans}
        if len(modes) != 1:
            raise ValueError("all plans in a batch must share one mode")
        if modes == {BiasMode.NO_MASK}:
            return None
        for p in plans:
            if p.n_layers != self.config.n_layers:
                raise ValueError(f"plan has {p.n_layers} layers, model has {self.config.n_layers}")
            if p.visual_len != self.config.visual_len:
                raise ValueError(f"plan visual_len {p.visual_len} != model {self.config.visual_len}")
        return plans

    def _layer_bias(self, plans, layer_index: int, seq_len: int, causal):
        """Per-example bias tensor (B, S, S) for one layer, or None."""
        if plans is None:
            return None
        v = self.config.visual_len
        mats = []
        for plan in plans:
            if plan.mode is BiasMode.MASK:
                # Additive bias applies to every query row, prefix included.
                mats.append(make_layer_bias(plan, layer_index + 1, seq_len, seq_len, causal))
            else:
                # Hard elimination applies to text-side query rows only: a
                # visual query whose visible keys were all out-of-mask would
                # otherwise be left with no attendable key at all.
                full = np.zeros((seq_len, seq_len), dtype=np.float64)
                t_rep = seq_len - v
                full[v:, :] = make_layer_bias(plan, layer_index + 1, t_rep,
                                              seq_len, causal[v:, :])
                mats.append(full)
        return np.stack(mats, axis=0)

    # -------------------------------------------------------------- forward

    def forward(self, images, tokens, plans=None, collect: bool = False):
        """Run the decoder; returns (logits, cache).

        images: (B, g, g) or (g, g); tokens: (B, T) ints, T may be 0.
        logits has shape (B, T + 1, vocab): row j predicts text token j, the
        first row being the start-token position.
        """
        cfg = self.config
        p = self.params
        imgs = np.asarray(images, dtype=np.float64)
        if imgs.ndim == 2:
            imgs = imgs[None]
        if imgs.ndim != 3 or imgs.shape[1:] != (cfg.grid, cfg.grid):
            raise ValueError(f"images must be (B, {cfg.grid}, {cfg.grid}), got {imgs.shape}")
        toks = np.asarray(tokens, dtype=np.int64)
        if toks.ndim == 1:
            toks = toks[None, :]
        batch = imgs.shape[0]
        if toks.shape[0] != batch:
            raise ValueError(f"batch mismatch: {batch} images vs {toks.shape[0]} token rows")
        if toks.size and (toks.min() < 0 or toks.max() >= cfg.vocab_size):
            raise ValueError("token id out of vocabulary range")
        v, d, t_text = cfg.visual_len, cfg.d_model, toks.shape[1]
        seq_len = v + 1 + t_text
        if seq_len > cfg.max_pos:
            raise ValueError(
                f"context overflow: visual {v} + start 1 + text {t_text} "
                f"= {seq_len} exceeds max_pos {cfg.max_pos}")
        plans = self._plan_list(plans, batch)

        vis = imgs.reshape(batch, v, 1) @ p["patch.w"] + p["patch.b"]
        start = np.broadcast_to(p["start_emb"], (batch, 1, d))
        parts = [vis, start]
        if t_text:
            parts.append(p["tok_emb"][toks])
        x = np.concatenate(parts, axis=1) + p["pos_emb"][:seq_len]

        causal = make_causal_mask(seq_len, seq_len)
        causal_add = np.where(causal != 0.0, 0.0, NEG_INF)

        layer_caches = []
        for i in range(cfg.n_layers):
            bias_b = self._layer_bias(plans, i, seq_len, causal)
            x, lc = self._block_forward(i, x, causal_add, bias_b, collect)
            layer_caches.append(lc)

        y, lnf_cache = _layernorm_fwd(x, p["lnf.g"], p["lnf.b"])
        y_text = y[:, v:, :]
        logits = y_text @ p["head.w"] + p["head.b"]
        cache = {
            "imgs": imgs, "toks": toks, "seq_len": seq_len,
            "layers": layer_caches, "lnf": lnf_cache, "y_text": y_text,
        }
        return logits, cache

    def attention_block(self, x, layer: int, causal_add, bias=None):
        """One pre-norm block (attention + FFN) applied to (B, T, d) or (T, d).

        `causal_add` is the additive causal mask (0 where visible, -inf
        where hidden); `bias` is an optional (T, T) or (B, T, T) additive
        bias broadcast to all heads.  `layer` is 1-indexed.
        """
        if not 1 <= layer <= self.config.n_layers:
            raise ValueError(f"layer must be in [1, {self.config.n_layers}], got {layer}")
        arr = np.asarray(x, dtype=np.float64)
        squeeze = arr.ndim == 2
        if squeeze:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[2] != self.config.d_model:
            raise ValueError(f"x must be (B, T, {self.config.d_model}), got {arr.shape}")
        t = arr.shape[1]
        causal_add = np.asarray(causal_add, dtype=np.float64)
        if causal_add.shape != (t, t):
            raise ValueError(f"causal mask must be ({t}, {t}), got {causal_add.shape}")
        if bias is not None:
            bias = np.asarray(bias, dtype=np.float64)
            if bias.ndim == 2:
                bias = np.broadcast_to(bias, (arr.shape[0],) + bias.shape)
            if bias.shape != (arr.shape[0], t, t):
                raise ValueError(f"bias must broadcast to {(arr.shape[0], t, t)}, got {bias.shape}")
        out, _ = self._block_forward(layer - 1, arr, causal_add, bias, collect=False)
        return out[0] if squeeze else out

    def _block_forward(self, i, x, causal_add, bias_b, collect):
        p = self.params
        pre = f"layer{i}."
        n_heads, d_head = self.config.n_heads, self.config.d_head

        a, ln1c = _layernorm_fwd(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        qh = _split_heads(a @ p[pre + "attn.q.w"] + p[pre + "attn.q.b"], n_heads)
        kh = _split_heads(a @ p[pre + "attn.k.w"] + p[pre + "attn.k.b"], n_heads)
        vh = _split_heads(a @ p[pre + "attn.v.w"] + p[pre + "attn.v.b"], n_heads)
        att = qh @ kh.swapaxes(-1, -2) / math.sqrt(d_head)
        att = att + causal_add
        if bias_b is not None:
            biased = att + bias_b[:, None, :, :]
        else:
            biased = att
        weights = _softmax_last(biased)
        merged = _merge_heads(weights @ vh)
        proj = merged @ p[pre + "attn.out.w"] + p[pre + "attn.out.b"]
        x1 = x + proj

        f, ln2c = _layernorm_fwd(x1, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h1 = f @ p[pre + "ffn.fc1.w"] + p[pre + "ffn.fc1.b"]
        hg, tanh_u = _gelu_fwd(h1)
        x2 = x1 + hg @ p[pre + "ffn.fc2.w"] + p[pre + "ffn.fc2.b"]

        cache = {"a": a, "ln1": ln1c, "qh": qh, "kh": kh, "vh": vh,
                 "weights": weights, "merged": merged,
                 "f": f, "ln2": ln2c, "h1": h1, "tanh_u": tanh_u, "hg": hg}
        if collect:
            cache["logits_pre_bias"] = att
            cache["logits_biased"] = biased
        return x2, cache

    # ------------------------------------------------------------- backward

    def backward(self, cache, dlogits) -> dict[str, np.ndarray]:
        """Analytic gradients for every trainable tensor.

        Bias matrices and causal masks are constants of the graph and
        receive no gradient by construction.
        """
        cfg = self.config
        p = self.params
        grads = self.zero_grads()
        imgs, toks = cache["imgs"], cache["toks"]
        batch, v, d = imgs.shape[0], cfg.visual_len, cfg.d_model
        seq_len = cache["seq_len"]
        dlogits = np.asarray(dlogits, dtype=np.float64)

        y_text = cache["y_text"]
        grads["head.w"] += y_text.reshape(-1, d).T @ dlogits.reshape(-1, cfg.vocab_size)
        grads["head.b"] += dlogits.sum(axis=(0, 1))
        dy = np.zeros((batch, seq_len, d), dtype=np.float64)
        dy[:, v:, :] = dlogits @ p["head.w"].T
        dx, dg, db = _layernorm_bwd(dy, cache["lnf"])
        grads["lnf.g"] += dg
        grads["lnf.b"] += db

        for i in reversed(range(cfg.n_layers)):
            dx = self._block_backward(i, dx, cache["layers"][i], grads)

        grads["pos_emb"][:seq_len] += dx.sum(axis=0)
        dvis = dx[:, :v, :]
        grads["start_emb"] += dx[:, v, :].sum(axis=0)
        if toks.shape[1]:
            dtok = dx[:, v + 1:, :]
            np.add.at(grads["tok_emb"], toks.reshape(-1), dtok.reshape(-1, d))
        grads["patch.w"] += imgs.reshape(-1, 1).T @ dvis.reshape(-1, d)
        grads["patch.b"] += dvis.sum(axis=(0, 1))
        return grads

    def _block_backward(self, i, dx2, lc, grads):
        p = self.params
        pre = f"layer{i}."
        d = self.config.d_model
        scale = 1.0 / math.sqrt(self.config.d_head)

        # FFN branch: x2 = x1 + gelu(ln2(x1) @ w1 + b1) @ w2 + b2
        dhg = dx2 @ p[pre + "ffn.fc2.w"].T
        grads[pre + "ffn.fc2.w"] += lc["hg"].reshape(-1, lc["hg"].shape[-1]).T @ dx2.reshape(-1, d)
        grads[pre + "ffn.fc2.b"] += dx2.sum(axis=(0, 1))
        dh1 = dhg * _gelu_bwd(lc["h1"], lc["tanh_u"])
        df = dh1 @ p[pre + "ffn.fc1.w"].T
        grads[pre + "ffn.fc1.w"] += lc["f"].reshape(-1, d).T @ dh1.reshape(-1, dh1.shape[-1])
        grads[pre + "ffn.fc1.b"] += dh1.sum(axis=(0, 1))
        dx1, dg2, db2 = _layernorm_bwd(df, lc["ln2"])
        grads[pre + "ln2.g"] += dg2
        grads[pre + "ln2.b"] += db2
        dx1 = dx1 + dx2

        # Attention branch: x1 = x + merge(softmax(qk/s + masks) @ v) @ wo + bo
        dmerged = dx1 @ p[pre + "attn.out.w"].T
        grads[pre + "attn.out.w"] += lc["merged"].reshape(-1, d).T @ dx1.reshape(-1, d)
        grads[pre + "attn.out.b"] += dx1.sum(axis=(0, 1))
        doh = _split_heads(dmerged, self.config.n_heads)
        weights = lc["weights"]
        dw = doh @ lc["vh"].swapaxes(-1, -2)
        dvh = weights.swapaxes(-1, -2) @ doh
        datt = weights * (dw - (dw * weights).sum(axis=-1, keepdims=True))
        dqh = datt @ lc["kh"] * scale
        dkh = datt.swapaxes(-1, -2) @ lc["qh"] * scale
        dq = _merge_heads(dqh)
        dk = _merge_heads(dkh)
        dv = _merge_heads(dvh)
        a2 = lc["a"].reshape(-1, d)
        da = dq @ p[pre + "attn.q.w"].T
        grads[pre + "attn.q.w"] += a2.T @ dq.reshape(-1, d)
        grads[pre + "attn.q.b"] += dq.sum(axis=(0, 1))
        da += dk @ p[pre + "attn.k.w"].T
        grads[pre + "attn.k.w"] += a2.T @ dk.reshape(-1, d)
        grads[pre + "attn.k.b"] += dk.sum(axis=(0, 1))
        da += dv @ p[pre + "attn.v.w"].T
        grads[pre + "attn.v.w"] += a2.T @ dv.reshape(-1, d)
        grads[pre + "attn.v.b"] += dv.sum(axis=(0, 1))
        dx, dg1, db1 = _layernorm_bwd(da, lc["ln1"])
        grads[pre + "ln1.g"] += dg1
        grads[pre + "ln1.b"] += db1
        return dx + dx1

    # --------------------------------------------------------- conveniences

    def loss_and_grads(self, images, tokens, targets, plans=None, pad_id=None):
        logits, cache = self.forward(images, tokens, plans)
        loss, dlogits = cross_entropy_with_grad(logits, targets, pad_id)
        return loss, self.backward(cache, dlogits)

    def generate(self, image, plan=None, max_new: int = 16, eos: int | None = None):
        """Greedy decoding from the start token; stops at `eos` or max_new.

        If the requested window overruns max_pos the budget is truncated and
        a RuntimeWarning is issued.
        """
        if max_new < 0:
            raise ValueError(f"max_new must be >= 0, got {max_new}")
        allowed = self.config.max_pos - self.config.visual_len - 1
        if max_new > allowed:
            warnings.warn(
                f"generation window truncated from {max_new} to {allowed} tokens",
                RuntimeWarning, stacklevel=2)
            max_new = allowed
        out: list[int] = []
        for _ in range(max_new):
            logits, _ = self.forward(image, np.asarray([out], dtype=np.int64), plans=plan)
            nxt = int(np.argmax(logits[0, -1]))
            out.append(nxt)
            if eos is not None and nxt == eos:
                break
        return out

    def extend_positions(self, new_max: int) -> "DecoderModel":
        """New model whose positional table is interpolated to new_max rows."""
        table = interpolate_positions(self.params["pos_emb"], new_max)
        params = {k: v.copy() for k, v in self.params.items()}
        params["pos_emb"] = table
        return DecoderModel(replace(self.config, max_pos=new_max), params)


# ------------------------------------------------------------------- losses

def _ce_core(logits, targets, pad_id):
    lg = np.asarray(logits, dtype=np.float64)
    tg = np.asarray(targets, dtype=np.int64)
    if lg.ndim == 2:
        lg = lg[None]
        tg = tg[None] if tg.ndim == 1 else tg
    if tg.shape != lg.shape[:2]:
        raise ValueError(f"targets shape {tg.shape} does not match logits rows {lg.shape[:2]}")
    vocab = lg.shape[-1]
    include = np.ones(tg.shape, dtype=bool) if pad_id is None else tg != pad_id
    bad = include & ((tg < 0) | (tg >= vocab))
    if np.any(bad):
        raise ValueError(f"target id out of vocabulary range [0, {vocab})")
    n = int(include.sum())
    if n == 0:
        raise ValueError("no non-padding target positions to score")
    m = lg.max(axis=-1, keepdims=True)
    z = lg - m
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    safe = np.where(include, tg, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * include).sum() / n
    return float(loss), logp, include, safe, n


def cross_entropy(logits, targets, pad_id=None) -> float:
    """Mean -log softmax(logits)[target] over non-padding positions."""
    return _ce_core(logits, targets, pad_id)[0]


def cross_entropy_with_grad(logits, targets, pad_id=None):
    loss, logp, include, safe, n = _ce_core(logits, targets, pad_id)
    dlogits = np.exp(logp)
    np.put_along_axis(
        dlogits, safe[..., None],
        np.take_along_axis(dlogits, safe[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= include[..., None] / n
    return loss, dlogits


# -------------------------------------------------------------- positions

def interpolate_positions(table, new_len: int) -> np.ndarray:
    """Resize a positional table by linear interpolation over rows.

    Row j of the output samples the original at fractional index
    j * (P - 1) / (new_len - 1); endpoints are copied exactly and
    new_len == P is the identity.
    """
    tbl = np.asarray(table, dtype=np.float64)
    if tbl.ndim != 2 or tbl.shape[0] < 2:
        raise ValueError(f"table must be 2-D with >= 2 rows, got shape {tbl.shape}")
    if new_len < 2:
        raise ValueError(f"new_len must be >= 2, got {new_len}")
    old = tbl.shape[0]
    if new_len == old:
        return tbl.copy()
    out = np.empty((new_len, tbl.shape[1]), dtype=np.float64)
    step = (old - 1) / (new_len - 1)
    for j in range(new_len):
        pos = j * step
        lo = math.floor(pos)
        frac = pos - lo
        if lo >= old - 1:
            out[j] = tbl[old - 1]
        elif frac == 0.0:
            out[j] = tbl[lo]
        else:
            out[j] = (1.0 - frac) * tbl[lo] + frac * tbl[lo + 1]
    return out


# -------------------------------------------------------------- checkpoints

def serialize_params(params: dict[str, np.ndarray]) -> bytes:
    """Named tensors in sorted order: header line, then little-endian f64."""
    buf = bytearray()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        dims = " ".join(str(s) for s in arr.shape)
        buf += f"{name} {arr.ndim} {dims}\n".encode()
        buf += arr.tobytes()
    return bytes(buf)


def params_checksum(model: DecoderModel) -> str:
    import hashlib
    return hashlib.sha256(serialize_params(model.params)).hexdigest()[:16]


def checkpoint_bytes(model: DecoderModel) -> bytes:
    buf = bytearray(CKPT_MAGIC)
    for key in _CONFIG_KEYS:
        buf += f"{key}={getattr(model.config, key)}\n".encode()
    buf += f"tensors={len(model.params)}\n".encode()
    buf += serialize_params(model.params)
    return bytes(buf)


def save_checkpoint(path, model: DecoderModel) -> None:
    from .fileio import atomic_write_bytes
    atomic_write_bytes(path, checkpoint_bytes(model))


def load_checkpoint(path) -> DecoderModel:
    from .fileio import FileFormatError
    with open(path, "rb") as fh:
        data = fh.read()
    stream = io.BytesIO(data)
    if stream.readline() != CKPT_MAGIC:
        raise FileFormatError(f"{path}: not a checkpoint file")
    fields = {}
    for key in _CONFIG_KEYS:
        line = stream.readline().decode()
        k, _, val = line.rstrip("\n").partition("=")
        if k != key:
            raise FileFormatError(f"{path}: expected config key {key}, got {k}")
        fields[key] = int(val)
    config = DecoderConfig(**fields)
    count_line = stream.readline().decode().rstrip("\n")
    if not count_line.startswith("tensors="):
        raise FileFormatError(f"{path}: missing tensor count")
    n_tensors = int(count_line.partition("=")[2])
    params = {}
    for _ in range(n_tensors):
        header = stream.readline().decode().rstrip("\n").split(" ")
        name, ndim = header[0], int(header[1])
        shape = tuple(int(s) for s in header[2:2 + ndim])
        size = int(np.prod(shape)) if shape else 1
        raw = stream.read(size * 8)
        if len(raw) != size * 8:
            raise FileFormatError(f"{path}: truncated tensor {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if stream.read(1):
        raise FileFormatError(f"{path}: trailing bytes after last tensor")
    return DecoderModel(config, params)


# ----------------------------------------------------------- gradient audit

def check_gradients(model: DecoderModel, images, tokens, targets, plans=None,
                    pad_id=None, n_samples: int = 50, h: float = 3e-6,
                    seed: int = 0) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients.

    Samples up to n_samples coordinates per tensor.  The denominator is
    floored so that coordinates whose true gradient is ~0 are judged on
    absolute error instead of amplified noise.
    """
    _, grads = model.loss_and_grads(images, tokens, targets, plans, pad_id)

    def loss_at():
        logits, _ = model.forward(images, tokens, plans)
        return cross_entropy(logits, targets, pad_id)

    rng = np.random.default_rng(seed)
    report = {}
    for name, arr in model.params.items():
        flat = arr.ravel()
        k = min(n_samples, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_at()
            flat[i] = orig - h
            fm = loss_at()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            analytic = grads[name].ravel()[i]
            denom = max(abs(analytic), abs(fd), 1e-4)
            worst = max(worst, abs(analytic - fd) / denom)
        report[name] = worst
    return report
