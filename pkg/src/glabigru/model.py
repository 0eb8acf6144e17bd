"""GLA-BiGRU: BiGRU encoder, entity-pair attention vector, global/local
attention with hard or soft localization, and a softmax classifier.

Every forward function keeps what its backward needs; :func:`backward`
accumulates exact gradients into a dict shaped like the parameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .corpus import Prepared
from .errors import DataError, UsageError
from .numcore import DTYPE, Params, gaussian_init, sigmoid, softmax, softmax_backward

MODES = ("none", "hard", "soft")
GATES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    d_e: int = 300
    d_p: int = 5
    d_h: int = 100
    gamma: float = 0.5
    mode: str = "soft"
    clip: int = 30
    n_classes: int = 19
    dropout: float = 0.5
    mask_floor: float = 1e-8
    d_l: int = 0  # localization BiGRU size; 0 means d_h
    init_std: float = 0.1
    entity_dropout: bool = True  # entity GRU reads the dropped-out rows

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise UsageError(f"gamma must lie in [0, 1], got {self.gamma}")
        for name in ("d_e", "d_p", "d_h", "clip", "n_classes"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.d_l < 0:
            raise UsageError("d_l must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 <= self.mask_floor <= 1e-3:
            raise UsageError(f"mask_floor must lie in [0, 1e-3], got {self.mask_floor}")
        if not self.init_std > 0:
            raise UsageError("init_std must be > 0")

    @property
    def d_in(self) -> int:
        return self.d_e + 2 * self.d_p

    @property
    def loc_size(self) -> int:
        return self.d_l or self.d_h

    @property
    def n_positions(self) -> int:
        return 2 * self.clip + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise UsageError(f"unknown model config key {k!r}")
            kind = kinds[k]
            if kind == "bool" and isinstance(v, str):
                v = v.lower() in ("1", "true", "yes")
            elif kind in ("int", "float", "str"):
                v = {"int": int, "float": float, "str": str}[kind](v)
            out[k] = v
        return cls(**out)


# --- parameters ------------------------------------------------------------


def _gru_shapes(prefix: str, d_in: int, d: int) -> list[tuple[str, tuple]]:
    shapes = []
    for gate in "zrh":
        shapes += [(f"{prefix}.W_{gate}", (d, d_in)), (f"{prefix}.U_{gate}", (d, d)), (f"{prefix}.b_{gate}", (d,))]
    return shapes


def param_shapes(config: ModelConfig, vocab_size: int) -> list[tuple[str, tuple]]:
    """Every trainable tensor, in canonical order."""
    c = config
    shapes = [
        ("WV", (vocab_size, c.d_e)),
        ("PV1", (c.n_positions, c.d_p)),
        ("PV2", (c.n_positions, c.d_p)),
    ]
    shapes += _gru_shapes("enc_f", c.d_in, c.d_h)
    shapes += _gru_shapes("enc_b", c.d_in, c.d_h)
    shapes += _gru_shapes("ent", c.d_in, 2 * c.d_h)
    shapes += _gru_shapes("loc_f", c.d_in, c.loc_size)
    shapes += _gru_shapes("loc_b", c.d_in, c.loc_size)
    shapes += [
        ("loc.W", (1, 2 * c.loc_size)),
        ("loc.b", (1,)),
        ("cls.W", (c.n_classes, 2 * c.d_h)),
        ("cls.b", (c.n_classes,)),
    ]
    return shapes


def is_bias(name: str) -> bool:
    return name.endswith(".b") or ".b_" in name


def is_embedding(name: str) -> bool:
    return name in ("WV", "PV1", "PV2")


def init_params(config: ModelConfig, vocab_size: int, rng: np.random.Generator,
                word_vectors: np.ndarray | None = None) -> Params:
    """Gaussian weights, zero biases.

    The localization network is created in every mode so that the random
    stream, and therefore the other weights, do not depend on the mode.
    """
    params: Params = {}
    for name, shape in param_shapes(config, vocab_size):
        if name == "WV" and word_vectors is not None:
            if word_vectors.shape != shape:
                raise UsageError(f"word table {word_vectors.shape} does not match {shape}")
            params[name] = np.array(word_vectors, dtype=DTYPE)
        elif is_bias(name):
            params[name] = np.zeros(shape, dtype=DTYPE)
        else:
            params[name] = gaussian_init(shape, config.init_std, rng)
    params["WV"][0] = 0.0
    return params


def check_params(params: Params, config: ModelConfig) -> None:
    vocab_size = params["WV"].shape[0]
    for name, shape in param_shapes(config, vocab_size):
        if name not in params or params[name].shape != shape:
            got = params[name].shape if name in params else None
            raise UsageError(f"parameter {name}: expected shape {shape}, got {got}")


# --- GRU -------------------------------------------------------------------


def gru_step(x: np.ndarray, h_prev: np.ndarray, params: Params, prefix: str) -> np.ndarray:
    p = {g: params[f"{prefix}.{g}"] for g in GATES}
    z = sigmoid(p["W_z"] @ x + p["U_z"] @ h_prev + p["b_z"])
    r = sigmoid(p["W_r"] @ x + p["U_r"] @ h_prev + p["b_r"])
    h_tilde = np.tanh(p["W_h"] @ x + p["U_h"] @ (r * h_prev) + p["b_h"])
    return (1 - z) * h_prev + z * h_tilde


@dataclass
class _ScanCache:
    prefix: str
    X: np.ndarray
    order: range
    Z: np.ndarray
    R: np.ndarray
    HT: np.ndarray  # candidate states
    HP: np.ndarray  # previous states


def _gru_scan(X: np.ndarray, params: Params, prefix: str, reverse: bool = False):
    """Run one GRU over the rows of ``X``; output row t is the state after
    reading row t (so a reverse scan's row 0 has seen the whole sequence)."""
    Wz, Uz, bz = params[f"{prefix}.W_z"], params[f"{prefix}.U_z"], params[f"{prefix}.b_z"]
    Wr, Ur, br = params[f"{prefix}.W_r"], params[f"{prefix}.U_r"], params[f"{prefix}.b_r"]
    Wh, Uh, bh = params[f"{prefix}.W_h"], params[f"{prefix}.U_h"], params[f"{prefix}.b_h"]
    n, d = X.shape[0], Uz.shape[0]
    az = X @ Wz.T + bz
    ar = X @ Wr.T + br
    ah = X @ Wh.T + bh
    dt = az.dtype
    Z = np.empty((n, d), dtype=dt)
    R = np.empty((n, d), dtype=dt)
    HT = np.empty((n, d), dtype=dt)
    HP = np.empty((n, d), dtype=dt)
    out = np.empty((n, d), dtype=dt)
    order = range(n - 1, -1, -1) if reverse else range(n)
    h = np.zeros(d, dtype=dt)
    for t in order:
        z = sigmoid(az[t] + Uz @ h)
        r = sigmoid(ar[t] + Ur @ h)
        ht = np.tanh(ah[t] + Uh @ (r * h))
        Z[t], R[t], HT[t], HP[t] = z, r, ht, h
        h = (1 - z) * h + z * ht
        out[t] = h
    return out, _ScanCache(prefix, X, order, Z, R, HT, HP)


def _gru_scan_backward(cache: _ScanCache, d_out: np.ndarray, params: Params, grads: Params) -> np.ndarray:
    """Accumulate parameter gradients; return the gradient wrt the inputs."""
    pre = cache.prefix
    Uz, Ur, Uh = params[f"{pre}.U_z"], params[f"{pre}.U_r"], params[f"{pre}.U_h"]
    Z, R, HT, HP = cache.Z, cache.R, cache.HT, cache.HP
    DZ = np.zeros_like(Z)
    DR = np.zeros_like(Z)
    DH = np.zeros_like(Z)
    carry = np.zeros(Z.shape[1], dtype=Z.dtype)
    for t in reversed(cache.order):
        dh = d_out[t] + carry
        z, r, ht, hp = Z[t], R[t], HT[t], HP[t]
        dah = dh * z * (1 - ht * ht)
        daz = dh * (ht - hp) * z * (1 - z)
        drh = Uh.T @ dah
        dar = drh * hp * r * (1 - r)
        carry = dh * (1 - z) + drh * r + Uz.T @ daz + Ur.T @ dar
        DZ[t], DR[t], DH[t] = daz, dar, dah
    X = cache.X
    grads[f"{pre}.W_z"] += DZ.T @ X
    grads[f"{pre}.W_r"] += DR.T @ X
    grads[f"{pre}.W_h"] += DH.T @ X
    grads[f"{pre}.U_z"] += DZ.T @ HP
    grads[f"{pre}.U_r"] += DR.T @ HP
    grads[f"{pre}.U_h"] += DH.T @ (R * HP)
    grads[f"{pre}.b_z"] += DZ.sum(0)
    grads[f"{pre}.b_r"] += DR.sum(0)
    grads[f"{pre}.b_h"] += DH.sum(0)
    return DZ @ params[f"{pre}.W_z"] + DR @ params[f"{pre}.W_r"] + DH @ params[f"{pre}.W_h"]


def bigru_forward(X: np.ndarray, params: Params, prefix: str = "enc") -> np.ndarray:
    """Rows ``[forward state || backward state]``, both started from zero."""
    return _bigru(X, params, prefix)[0]


def _bigru(X, params, prefix):
    hf, cf = _gru_scan(X, params, f"{prefix}_f")
    hb, cb = _gru_scan(X, params, f"{prefix}_b", reverse=True)
    return np.concatenate([hf, hb], axis=1), (cf, cb)


def _bigru_backward(caches, dH, params, grads):
    cf, cb = caches
    d = cf.Z.shape[1]
    return (_gru_scan_backward(cf, dH[:, :d], params, grads)
            + _gru_scan_backward(cb, dH[:, d:], params, grads))


# --- input and attention ---------------------------------------------------


def embed_input(ex: Prepared, params: Params) -> np.ndarray:
    """Rows ``word || position-to-e1 || position-to-e2``."""
    return np.concatenate(
        [params["WV"][ex.token_ids], params["PV1"][ex.pos1], params["PV2"][ex.pos2]], axis=1
    )


def entity_attention_vector(w_e1: np.ndarray, w_e2: np.ndarray, params: Params) -> np.ndarray:
    """Last state of the entity GRU after reading the two entity rows."""
    return gru_step(w_e2, gru_step(w_e1, np.zeros_like(params["ent.b_z"]), params, "ent"), params, "ent")


def global_attention(H: np.ndarray, c: np.ndarray) -> np.ndarray:
    return softmax(H @ c)


def local_attention(H: np.ndarray, c: np.ndarray, m: np.ndarray, mask_floor: float = 1e-8) -> np.ndarray:
    return _local_weights(H @ c, m, mask_floor)[0]


def _local_weights(scores, m, mask_floor):
    """Weighted softmax ``m_i exp(s_i) / sum_j m_j exp(s_j)``.

    Scores are shifted by their max over tokens with ``m > 0``; with an
    all-ones mask this is bit-for-bit the plain softmax.  The floor replaces
    ``m`` by ``max(m, floor)`` only when the denominator would underflow.
    """
    support = m > 0
    if not support.any():
        if mask_floor <= 0:
            raise DataError("localization mask is all zeros")
        support = np.ones_like(support)
    e = np.exp(scores - scores[support].max())
    eff = m
    w = m * e
    total = w.sum()
    if total < 1e-300:
        if mask_floor <= 0:
            raise DataError("localization weights underflow and no mask floor is set")
        eff = np.maximum(m, mask_floor)
        e = np.exp(scores - scores.max())
        w = eff * e
        total = w.sum()
    return w / total, e / total, eff is not m


def hybrid(alpha_g: np.ndarray, alpha_l: np.ndarray, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise UsageError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma * alpha_g + (1 - gamma) * alpha_l


def soft_localization(X: np.ndarray, params: Params) -> np.ndarray:
    Hl = bigru_forward(X, params, "loc")
    return sigmoid(Hl @ params["loc.W"][0] + params["loc.b"][0])


def localization_loss(m: np.ndarray, sdp: np.ndarray) -> float:
    """Summed binary cross-entropy of ``m`` against the SDP indicator."""
    m = np.asarray(m)
    sdp = np.asarray(sdp, dtype=m.dtype)
    if m.shape != sdp.shape:
        raise UsageError(f"mask length {m.shape} does not match sdp length {sdp.shape}")
    mc = np.clip(m, PROB_CLAMP, 1 - PROB_CLAMP)
    return -(sdp * np.log(mc) + (1 - sdp) * np.log(1 - mc)).sum()


def classify(H: np.ndarray, alpha: np.ndarray, params: Params) -> tuple[np.ndarray, np.ndarray]:
    s = alpha @ H
    return s, softmax(params["cls.W"] @ s + params["cls.b"])


def total_loss(probs: np.ndarray, gold: int, j_loc: float, mode: str) -> float:
    if not 0 <= gold < len(probs):
        raise UsageError(f"gold class {gold} out of range for {len(probs)} classes")
    j_cls = -np.log(max(probs[gold], 1e-300))
    return j_cls + j_loc if mode == "soft" else j_cls


# --- full network ----------------------------------------------------------


@dataclass
class ForwardTrace:
    H: np.ndarray
    c: np.ndarray
    m: np.ndarray
    alpha_g: np.ndarray
    alpha_l: np.ndarray
    alpha: np.ndarray
    s: np.ndarray
    probs: np.ndarray
    j_cls: float = 0.0
    j_loc: float = 0.0
    loss: float = 0.0

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class _Cache:
    ex: Prepared
    X: np.ndarray
    in_mask: np.ndarray | None
    enc: tuple
    ent: _ScanCache
    loc: tuple | None
    e_local: np.ndarray
    floored: bool
    s_mask: np.ndarray | None
    s_dropped: np.ndarray
    supervise_loc: bool


def _dropout_mask(shape, rate, rng):
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(ex: Prepared, params: Params, config: ModelConfig,
            rng: np.random.Generator | None = None, training: bool = False):
    """Run the network on one example; returns ``(trace, cache)``.

    With ``training`` set, inverted dropout is drawn from ``rng`` for the
    input rows first and for the sentence vector second.  Losses are filled
    in when the example carries a gold label.
    """
    drop = training and config.dropout > 0
    if drop and rng is None:
        raise UsageError("training with dropout needs an rng")

    X0 = embed_input(ex, params)
    in_mask = _dropout_mask(X0.shape, config.dropout, rng) if drop else None
    X = X0 * in_mask if drop else X0

    H, enc_cache = _bigru(X, params, "enc")
    ent_in = (X if config.entity_dropout else X0)[[ex.e1, ex.e2]]
    ent_out, ent_cache = _gru_scan(ent_in, params, "ent")
    c = ent_out[-1]

    loc_cache = None
    if config.mode == "soft":
        Hl, loc_cache = _bigru(X, params, "loc")
        m = sigmoid(Hl @ params["loc.W"][0] + params["loc.b"][0])
        loc_cache = (loc_cache, Hl)
    elif config.mode == "hard":
        m = ex.sdp.m
    else:
        m = np.ones(ex.length, dtype=X.dtype)

    scores = H @ c
    alpha_g = softmax(scores)
    alpha_l, e_local, floored = _local_weights(scores, m, config.mask_floor)
    alpha = hybrid(alpha_g, alpha_l, config.gamma)

    s = alpha @ H
    s_mask = _dropout_mask(s.shape, config.dropout, rng) if drop else None
    s_d = s * s_mask if drop else s
    probs = softmax(params["cls.W"] @ s_d + params["cls.b"])

    trace = ForwardTrace(H=H, c=c, m=m, alpha_g=alpha_g, alpha_l=alpha_l, alpha=alpha, s=s, probs=probs)
    # examples without a usable path carry no localization signal
    supervise = config.mode == "soft" and ex.sdp.source == "hard"
    if ex.label >= 0:
        trace.j_loc = localization_loss(m, ex.sdp.m) if supervise else 0.0
        trace.j_cls = total_loss(probs, ex.label, 0.0, "none")
        trace.loss = total_loss(probs, ex.label, trace.j_loc, config.mode)

    cache = _Cache(ex, X, in_mask, enc_cache, ent_cache, loc_cache, e_local, floored,
                   s_mask, s_d, supervise)
    return trace, cache


def backward(trace: ForwardTrace, cache: _Cache, params: Params, config: ModelConfig, grads: Params) -> None:
    """Add d(loss)/d(params) for one example into ``grads``."""
    ex = cache.ex
    if ex.label < 0:
        raise UsageError(f"example {ex.id} has no gold label to differentiate against")
    H, c, m = trace.H, trace.c, trace.m
    gamma = config.gamma

    dlogits = trace.probs.copy()
    dlogits[ex.label] -= 1.0
    grads["cls.W"] += np.outer(dlogits, cache.s_dropped)
    grads["cls.b"] += dlogits
    ds = params["cls.W"].T @ dlogits
    if cache.s_mask is not None:
        ds = ds * cache.s_mask

    dH = np.outer(trace.alpha, ds)
    dalpha = H @ ds

    dscores = softmax_backward(trace.alpha_g, gamma * dalpha)
    dal = (1 - gamma) * dalpha
    centered = dal - trace.alpha_l @ dal
    dscores += trace.alpha_l * centered
    dm = cache.e_local * centered
    if cache.floored:
        dm = dm * (m >= config.mask_floor)

    dH += np.outer(dscores, c)
    dc = H.T @ dscores

    dX = _bigru_backward(cache.enc, dH, params, grads)

    d_out = np.zeros((2, c.shape[0]), dtype=c.dtype)
    d_out[1] = dc
    d_ent = _gru_scan_backward(cache.ent, d_out, params, grads)

    if config.mode == "soft":
        loc_caches, Hl = cache.loc
        if cache.supervise_loc:
            mc = np.clip(m, PROB_CLAMP, 1 - PROB_CLAMP)
            inside = (m > PROB_CLAMP) & (m < 1 - PROB_CLAMP)
            sdp = ex.sdp.m
            dm = dm + (-sdp / mc + (1 - sdp) / (1 - mc)) * inside
        da = dm * m * (1 - m)
        grads["loc.W"][0] += da @ Hl
        grads["loc.b"][0] += da.sum()
        dHl = np.outer(da, params["loc.W"][0])
        dX += _bigru_backward(loc_caches, dHl, params, grads)

    if config.entity_dropout:
        dX[ex.e1] += d_ent[0]
        dX[ex.e2] += d_ent[1]
    dX0 = dX * cache.in_mask if cache.in_mask is not None else dX
    if not config.entity_dropout:
        dX0[ex.e1] += d_ent[0]
        dX0[ex.e2] += d_ent[1]

    d_e, d_p = config.d_e, config.d_p
    np.add.at(grads["WV"], ex.token_ids, dX0[:, :d_e])
    np.add.at(grads["PV1"], ex.pos1, dX0[:, d_e:d_e + d_p])
    np.add.at(grads["PV2"], ex.pos2, dX0[:, d_e + d_p:])


def loss_and_grad(ex: Prepared, params: Params, config: ModelConfig,
                  rng: np.random.Generator | None = None, training: bool = False):
    trace, cache = forward(ex, params, config, rng, training)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    backward(trace, cache, params, config, grads)
    return trace, grads


def extended_loss(ex: Prepared, config: ModelConfig):
    """Loss as a function of float64 params, evaluated in ``np.longdouble``.

    Used as the finite-difference side of gradient checks; dropout is off.
    """
    def loss(params: Params):
        wide = {k: v.astype(np.longdouble) for k, v in params.items()}
        trace, _ = forward(ex, wide, config, training=False)
        return trace.loss
    return loss
