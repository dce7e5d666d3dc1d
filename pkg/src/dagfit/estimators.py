"""Trainable conditional-distribution estimators and their optimizer.

Each variable gets its own estimator of p(X_i | masked subset of the others).
The network path (embeddings -> affine -> leaky rectifier -> affine ->
softmax) is written with explicit gradients so every layer can be checked
against finite differences. The table estimator answers the same queries
exactly from a ground-truth model's joint and serves as the oracle in tests
and in exact-mode fitting.
"""

from __future__ import annotations

import struct

import numpy as np

from .cgm import Cgm, exact_joint
from .errors import ParameterError


class Adam:
    """Bias-corrected adaptive-moment optimizer with decoupled weight decay.

    Weight decay is applied only to keys listed in ``decay`` at step time;
    ``apply_mask`` restricts which entries of a parameter receive the update
    (moments still track the full gradient).
    """

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads, decay=(), apply_mask=None):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, g in grads.items():
            p = params[key]
            if g.shape != p.shape:
                raise ParameterError(
                    f"gradient shape {g.shape} != parameter shape {p.shape} for {key!r}"
                )
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / (1.0 - b1**self.t)
            vhat = v / (1.0 - b2**self.t)
            delta = self.lr * mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay:
                if isinstance(decay, dict):
                    if key in decay:
                        delta += self.lr * self.weight_decay * np.where(decay[key], p, 0.0)
                elif key in decay:
                    delta = delta + self.lr * self.weight_decay * p
            if apply_mask is not None and key in apply_mask:
                p -= np.where(apply_mask[key], delta, 0.0)
            else:
                p -= delta


class Sgd:
    """Plain gradient descent; used where optimizer statefulness must not
    interfere (e.g. the split-gamma bookkeeping identity)."""

    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads, decay=(), apply_mask=None):
        for key, g in grads.items():
            p = params[key]
            if g.shape != p.shape:
                raise ParameterError(f"shape mismatch for {key!r}")
            delta = self.lr * g
            if apply_mask is not None and key in apply_mask:
                p -= np.where(apply_mask[key], delta, 0.0)
            else:
                p -= delta


def adam_update(opt: Adam, params, grads, decay=()):
    """Apply one optimizer step and return the (mutated) parameter dict."""
    opt.step(params, grads, decay=decay)
    return params


def _logsumexp(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


class MlpEstimator:
    """Masked-input network for one variable's conditional distribution.

    Every other variable is a potential parent and contributes a 4-dim
    embedding; a masked parent contributes the zero vector instead. Two
    affine layers (hidden width 64) with a leaky rectifier in between feed
    a softmax over the target's categories.
    """

    trainable = True

    HIDDEN = 64
    EMB_DIM = 4
    SLOPE = 0.1

    def __init__(self, cards, target, seed=0, hidden=HIDDEN, emb_dim=EMB_DIM, dtype=np.float64):
        cards = [int(c) for c in cards]
        if not (0 <= target < len(cards)):
            raise ParameterError(f"target {target} out of range")
        self.cards = cards
        self.target = int(target)
        self.parents = [j for j in range(len(cards)) if j != target]
        self.hidden = hidden
        self.emb_dim = emb_dim
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        card_t = cards[target]
        fan_in = emb_dim * len(self.parents)
        # Parameters live as views into one flat buffer so a whole optimizer
        # step is a few vectorized operations.
        shapes = {}
        for k, j in enumerate(self.parents):
            shapes[f"emb{k}"] = (cards[j], emb_dim)
        shapes["w1"] = (hidden, fan_in)
        shapes["b1"] = (hidden,)
        shapes["w2"] = (card_t, hidden)
        shapes["b2"] = (card_t,)
        total = sum(int(np.prod(s)) for s in shapes.values())
        self.flat = np.zeros(total, dtype=self.dtype)
        self.params = {}
        decay = np.zeros(total, dtype=bool)
        off = 0
        for key, shape in shapes.items():
            size = int(np.prod(shape))
            self.params[key] = self.flat[off : off + size].reshape(shape)
            if not key.startswith("b"):
                decay[off : off + size] = True
            off += size
        self.decay_mask = decay
        for k, j in enumerate(self.parents):
            self.params[f"emb{k}"][...] = rng.normal(0.0, 1.0, size=(cards[j], emb_dim))
        self.params["w1"][...] = rng.normal(
            0.0, np.sqrt(2.0 / max(fan_in, 1)), size=(hidden, fan_in)
        )
        self.params["w2"][...] = rng.normal(0.0, np.sqrt(1.0 / hidden), size=(card_t, hidden))

    @property
    def arity(self):
        return len(self.parents)

    @property
    def weight_keys(self):
        """Parameters subject to weight decay (everything except biases)."""
        return tuple(k for k in self.params if not k.startswith("b"))

    def grad_buffer(self):
        """Flat gradient buffer with the same per-parameter views."""
        flat = np.zeros_like(self.flat)
        views = {}
        off = 0
        for key, p in self.params.items():
            views[key] = flat[off : off + p.size].reshape(p.shape)
            off += p.size
        return flat, views

    def _gather_emb(self, rows):
        """Embedding lookups for every potential parent, shape (P, R, emb_dim)."""
        emb = np.empty((len(self.parents), rows.shape[0], self.emb_dim), dtype=self.dtype)
        for k, j in enumerate(self.parents):
            emb[k] = self.params[f"emb{k}"][rows[:, j]]
        return emb

    def _contributions(self, rows):
        """Per-parent first-layer contributions: U[p, r, :] = W1_p @ emb_p[x]."""
        emb = self._gather_emb(rows)
        pcount = len(self.parents)
        w1_blocks = np.ascontiguousarray(
            self.params["w1"].reshape(self.hidden, pcount, self.emb_dim).transpose(1, 2, 0)
        )
        u = np.matmul(emb, w1_blocks)  # (P, R, H) batched over parents
        return emb, u

    def _target_logprob(self, hpre, values):
        """Leaky rectifier + output affine + log-softmax, gathering only the
        target categories. ``hpre`` has shape (..., hidden)."""
        a = np.maximum(hpre, self.SLOPE * hpre)
        lead = a.shape[:-1]
        logits = a.reshape(-1, self.hidden) @ self.params["w2"].T
        logits += self.params["b2"]
        m = logits.max(axis=1)
        np.subtract(logits, m[:, None], out=logits)
        picked = logits[np.arange(logits.shape[0]), np.broadcast_to(values, lead).reshape(-1)]
        np.exp(logits, out=logits)
        lse = np.log(logits.sum(axis=1))
        return (picked - lse).reshape(lead)

    def logprob_many(self, rows, masks, values=None):
        """Log-probabilities under several masks at once.

        ``masks`` has shape (K, arity); the result has shape (K, rows).
        """
        masks = np.asarray(masks)
        if masks.ndim == 1:
            masks = masks[None, :]
        if masks.shape[1] != self.arity:
            raise ParameterError(f"mask length {masks.shape[1]} != arity {self.arity}")
        if values is None:
            values = rows[:, self.target]
        _, u = self._contributions(rows)
        hpre = np.tensordot(masks.astype(self.dtype), u, axes=([1], [0]))  # (K, R, H)
        hpre += self.params["b1"]
        return self._target_logprob(hpre, np.asarray(values))

    def logprob_rows(self, rows, mask_rows, values=None):
        """Log-probabilities with one mask per row; shape (rows,)."""
        mask_rows = np.asarray(mask_rows)
        if mask_rows.shape != (rows.shape[0], self.arity):
            raise ParameterError("per-row mask shape mismatch")
        if values is None:
            values = rows[:, self.target]
        _, u = self._contributions(rows)
        hpre = (mask_rows.astype(self.dtype).T[:, :, None] * u).sum(axis=0)
        hpre += self.params["b1"]
        return self._target_logprob(hpre, np.asarray(values))

    def nll_and_grads(self, rows, mask_rows):
        """Mean negative log-likelihood and its parameter gradients."""
        loss, _, views = self._backward(rows, mask_rows)
        return loss, views

    def _backward(self, rows, mask_rows):
        r = rows.shape[0]
        if r == 0:
            raise ParameterError("empty batch")
        m = np.asarray(mask_rows, dtype=self.dtype)
        emb = self._gather_emb(rows)
        z = (emb * m.T[:, :, None]).transpose(1, 0, 2).reshape(r, -1)
        hpre = z @ self.params["w1"].T + self.params["b1"]
        a = np.maximum(hpre, self.SLOPE * hpre)
        logits = a @ self.params["w2"].T + self.params["b2"]
        logp = logits - _logsumexp(logits)[:, None]
        y = rows[:, self.target]
        loss = -logp[np.arange(r), y].mean()

        flat, views = self.grad_buffer()
        dlogits = np.exp(logp)
        dlogits[np.arange(r), y] -= 1.0
        dlogits /= r
        np.matmul(dlogits.T, a, out=views["w2"])
        dlogits.sum(axis=0, out=views["b2"])
        da = dlogits @ self.params["w2"]
        dh = da * np.where(hpre > 0, self.dtype.type(1.0), self.dtype.type(self.SLOPE))
        np.matmul(dh.T, z, out=views["w1"])
        dh.sum(axis=0, out=views["b1"])
        dz = (dh @ self.params["w1"]).reshape(r, len(self.parents), self.emb_dim)
        dz *= m[:, :, None]
        for k, j in enumerate(self.parents):
            x = rows[:, j]
            g = views[f"emb{k}"]
            for d in range(self.emb_dim):
                g[:, d] = np.bincount(x, weights=dz[:, k, d], minlength=g.shape[0])
        return loss, flat, views


def forward_logprob(est, x, target_value, mask):
    """Log-probability of ``target_value`` for sample row(s) ``x`` under ``mask``.

    Masked potential parents contribute a zero embedding vector. Raises on
    out-of-range categories.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    values = np.atleast_1d(np.asarray(target_value, dtype=np.int64))
    if values.shape[0] == 1 and rows.shape[0] > 1:
        values = np.repeat(values, rows.shape[0])
    cards = np.asarray(est.cards)
    if rows.shape[1] != len(cards):
        raise ParameterError(f"expected {len(cards)} columns, got {rows.shape[1]}")
    if rows.size and (rows.min() < 0 or np.any(rows.max(axis=0) >= cards)):
        raise ParameterError("sample categories out of range")
    if values.min() < 0 or values.max() >= cards[est.target]:
        raise ParameterError("target value out of range")
    out = est.logprob_many(rows.astype(np.int32), np.asarray(mask, dtype=bool), values=values)[0]
    return float(out[0]) if single else out


def train_step(est: MlpEstimator, batch, edge_params, opt: Adam, rng):
    """One distribution-fitting update.

    Draws an input mask per batch row from the current edge probabilities,
    minimizes the masked conditional NLL, and returns the pre-update loss.
    """
    if batch.shape[0] == 0:
        raise ParameterError("empty batch")
    probs = edge_params.edge_probabilities()[:, est.target][est.parents]
    masks = rng.random((batch.shape[0], est.arity)) < probs
    loss, flat, _ = est._backward(batch, masks)
    opt.step({"flat": est.flat}, {"flat": flat}, decay={"flat": est.decay_mask})
    return float(loss)


class TableEstimator:
    """Exact conditional distributions marginalized from a CGM's joint.

    Stands in for a perfectly trained network; conditioning subsets are
    cached on first use.
    """

    trainable = False

    def __init__(self, cgm: Cgm, target):
        if not (0 <= target < cgm.n):
            raise ParameterError(f"target {target} out of range")
        self.cards = list(cgm.cards)
        self.target = int(target)
        self.parents = [j for j in range(cgm.n) if j != target]
        self.joint = exact_joint(cgm)
        self._cache = {}

    @property
    def arity(self):
        return len(self.parents)

    def conditional(self, subset):
        """P(target | subset) table; ``subset`` holds variable indices."""
        key = tuple(sorted(subset))
        if key not in self._cache:
            self._cache[key] = self.joint.conditional(self.target, key)
        return self._cache[key]

    def _logprob_one_mask(self, rows, mask, values):
        subset = tuple(self.parents[p] for p in np.flatnonzero(mask))
        cond = self.conditional(subset)
        if subset:
            sel = cond[tuple(rows[:, list(subset)].T)]
        else:
            sel = np.broadcast_to(cond, (rows.shape[0], cond.shape[-1]))
        with np.errstate(divide="ignore"):
            return np.log(sel[np.arange(rows.shape[0]), values])

    def logprob_many(self, rows, masks, values=None):
        masks = np.asarray(masks, dtype=bool)
        if masks.ndim == 1:
            masks = masks[None, :]
        if masks.shape[1] != self.arity:
            raise ParameterError(f"mask length {masks.shape[1]} != arity {self.arity}")
        if values is None:
            values = rows[:, self.target]
        out = np.empty((masks.shape[0], rows.shape[0]))
        for k in range(masks.shape[0]):
            out[k] = self._logprob_one_mask(rows, masks[k], values)
        return out

    def logprob_rows(self, rows, mask_rows, values=None):
        mask_rows = np.asarray(mask_rows, dtype=bool)
        if values is None:
            values = rows[:, self.target]
        out = np.empty(rows.shape[0])
        uniq, inv = np.unique(mask_rows, axis=0, return_inverse=True)
        for k in range(uniq.shape[0]):
            sel = inv == k
            out[sel] = self._logprob_one_mask(rows[sel], uniq[k], values[sel])
        return out


def table_estimator_from_cgm(cgm: Cgm, target) -> TableEstimator:
    return TableEstimator(cgm, target)


_CKPT_MAGIC = b"DFE1"


def save_estimator(est: MlpEstimator) -> bytes:
    """Versioned binary checkpoint: shapes plus row-major 32-bit weights."""
    out = bytearray()
    out += _CKPT_MAGIC
    out += struct.pack("<III", 1, est.target, len(est.cards))
    out += struct.pack(f"<{len(est.cards)}I", *est.cards)
    out += struct.pack("<II", est.hidden, est.emb_dim)
    keys = sorted(est.params)
    out += struct.pack("<I", len(keys))
    for key in keys:
        enc = key.encode()
        arr = np.ascontiguousarray(est.params[key], dtype=np.float32)
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def load_estimator(blob: bytes, dtype=np.float64) -> MlpEstimator:
    view = memoryview(blob)
    if bytes(view[:4]) != _CKPT_MAGIC:
        raise ParameterError("not an estimator checkpoint")
    off = 4
    version, target, n = struct.unpack_from("<III", view, off)
    off += 12
    if version != 1:
        raise ParameterError(f"unsupported checkpoint version {version}")
    cards = list(struct.unpack_from(f"<{n}I", view, off))
    off += 4 * n
    hidden, emb_dim = struct.unpack_from("<II", view, off)
    off += 8
    est = MlpEstimator(cards, target, hidden=hidden, emb_dim=emb_dim, dtype=dtype)
    (count,) = struct.unpack_from("<I", view, off)
    off += 4
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", view, off)
        off += 2
        key = bytes(view[off : off + klen]).decode()
        off += klen
        (ndim,) = struct.unpack_from("<B", view, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", view, off)
        off += 4 * ndim
        size = int(np.prod(shape))
        arr = np.frombuffer(view, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        if key not in est.params or est.params[key].shape != arr.shape:
            raise ParameterError(f"checkpoint parameter {key!r} does not fit")
        est.params[key][...] = arr
    return est
