"""Model core: parameters, projection into entity space, NCE loss with
analytic gradients, the Adam update, and model persistence.

The projection of a token sequence s is f(s) = tanh(W h + b) with h the mean
of the tokens' embedding columns of W_v. An instance's log-probability under
noise-contrastive estimation is log sigma(e+ . f) plus the sum over the z
negatives of log(1 - sigma(e- . f)). The batch loss averages the negated
log-probabilities and adds (lambda / 2m) times the squared Frobenius norms of
W_v, W and W_e; the bias b is not regularized.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, LSEError

MAGIC = b"LSEM0001"
PARAM_FIELDS = ("W_v", "W", "b", "W_e")


@dataclass(frozen=True)
class Dims:
    e_v: int
    e_e: int
    vocab_size: int
    num_entities: int

    def __post_init__(self):
        if min(self.e_v, self.e_e, self.vocab_size, self.num_entities) < 1:
            raise DataError("all model dimensions must be positive")


class ModelParams:
    """The four learnable arrays.

    W_v: (e_V, |V|), column i = embedding of word id i.
    W:   (e_E, e_V), the word-to-entity linear map.
    b:   (e_E,), bias.
    W_e: (|X|, e_E), row i = representation of entity i.
    """

    def __init__(self, W_v, W, b, W_e):
        self.W_v = W_v
        self.W = W
        self.b = b
        self.W_e = W_e
        e_v, vocab = W_v.shape
        e_e = b.shape[0]
        if W.shape != (e_e, e_v) or W_e.shape[1] != e_e:
            raise DataError("parameter shapes are mutually inconsistent")

    @property
    def dims(self):
        return Dims(self.W_v.shape[0], self.b.shape[0],
                    self.W_v.shape[1], self.W_e.shape[0])

    @property
    def dtype(self):
        return self.W_v.dtype

    def copy(self):
        return ModelParams(self.W_v.copy(), self.W.copy(),
                           self.b.copy(), self.W_e.copy())

    def astype(self, dtype):
        return ModelParams(self.W_v.astype(dtype), self.W.astype(dtype),
                           self.b.astype(dtype), self.W_e.astype(dtype))


@dataclass
class GradientSet:
    W_v: np.ndarray
    W: np.ndarray
    b: np.ndarray
    W_e: np.ndarray


def init_params(dims, seed, dtype=np.float64):
    """Glorot-uniform init for the three matrices, zero bias.

    Each matrix is drawn i.i.d. uniform in +-sqrt(6 / (rows + cols)); draws
    happen in the fixed order W_v, W, W_e so a seed pins all parameters.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def glorot(rows, cols):
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)

    W_v = glorot(dims.e_v, dims.vocab_size)
    W = glorot(dims.e_e, dims.e_v)
    W_e = glorot(dims.num_entities, dims.e_e)
    b = np.zeros(dims.e_e, dtype=dtype)
    return ModelParams(W_v, W, b, W_e)


def project(params, token_ids):
    """f(s) = tanh(W h + b) with h the mean embedding column of the tokens.

    Every output component lies strictly inside (-1, 1).
    """
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.size == 0:
        raise LSEError("cannot project empty string")
    h = params.W_v[:, ids].mean(axis=1)
    return np.tanh(params.W @ h + params.b)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_PROB_LO = np.nextafter(0.0, 1.0)
_PROB_HI = np.nextafter(1.0, 0.0)


def similarity_prob(entity_vec, projected):
    """sigma(e . f), clamped into the open interval (0, 1).

    Numerically stable for arbitrarily large |e . f|.
    """
    a = np.asarray(entity_vec, dtype=np.float64)
    b = np.asarray(projected, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("vector length mismatch")
    p = float(_sigmoid(np.array([a @ b]))[0])
    return min(max(p, _PROB_LO), _PROB_HI)


def instance_log_prob(params, instance):
    """log sigma(e+ . f) + sum_k log(1 - sigma(e_k . f)), in log domain."""
    f = project(params, instance.ngram)
    dpos = float(params.W_e[instance.positive_entity] @ f)
    dneg = params.W_e[np.asarray(instance.negatives, dtype=np.intp)] @ f
    return float(-np.logaddexp(0.0, -dpos) - np.logaddexp(0.0, dneg).sum())


def _batch_arrays(batch):
    if hasattr(batch, "arrays"):
        return batch.arrays()
    ngrams = np.array([inst.ngram for inst in batch], dtype=np.intp)
    positives = np.array([inst.positive_entity for inst in batch], dtype=np.intp)
    negatives = np.array([inst.negatives for inst in batch], dtype=np.intp)
    return ngrams, positives, negatives


def _sq_norms(params):
    return (float(np.sum(params.W_v * params.W_v))
            + float(np.sum(params.W_e * params.W_e))
            + float(np.sum(params.W * params.W)))


def _forward(params, ngrams, positives, negatives):
    H = params.W_v.T[ngrams].mean(axis=1)          # (M, e_V)
    F = np.tanh(H @ params.W.T + params.b)         # (M, e_E)
    Epos = params.W_e[positives]                   # (M, e_E)
    Eneg = params.W_e[negatives]                   # (M, z, e_E)
    dpos = np.einsum("me,me->m", Epos, F)
    dneg = np.einsum("mke,me->mk", Eneg, F)
    return H, F, Epos, Eneg, dpos, dneg


def batch_loss(params, batch, weight_decay):
    """Mean negated instance log-probability plus the weight-decay term."""
    ngrams, positives, negatives = _batch_arrays(batch)
    m = len(positives)
    if m == 0:
        raise DataError("batch is empty")
    _, _, _, _, dpos, dneg = _forward(params, ngrams, positives, negatives)
    logp = -np.logaddexp(0.0, -dpos) - np.logaddexp(0.0, dneg).sum(axis=1)
    return float(-logp.mean() + 0.5 * weight_decay / m * _sq_norms(params))


def _scatter_rows(ids, rows, out, scale):
    """out[i] += scale * sum of rows whose id is i, in a fixed reduction order."""
    order = np.argsort(ids, kind="stable")
    sids = ids[order]
    srows = rows[order]
    starts = np.flatnonzero(np.concatenate(([True], sids[1:] != sids[:-1])))
    sums = np.add.reduceat(srows, starts, axis=0)
    out[sids[starts]] += scale * sums


def batch_loss_and_gradients(params, batch, weight_decay):
    """One forward/backward pass; returns (loss, GradientSet).

    Gradients are exact for the batch loss. The per-instance pieces are
    sech^2 = 1 - f^2 reusing the forward tanh, a coefficient 1 - sigma for
    the positive dot and -sigma per negative dot, and a sparse scatter into
    the touched columns of W_v and rows of W_e; the (lambda / m) theta
    regularizer term is dense over the three matrices and absent for b.
    """
    ngrams, positives, negatives = _batch_arrays(batch)
    m = len(positives)
    if m == 0:
        raise DataError("batch is empty")
    n = ngrams.shape[1]
    H, F, Epos, Eneg, dpos, dneg = _forward(params, ngrams, positives, negatives)

    logp = -np.logaddexp(0.0, -dpos) - np.logaddexp(0.0, dneg).sum(axis=1)
    loss = float(-logp.mean() + 0.5 * weight_decay / m * _sq_norms(params))

    cpos = 1.0 - _sigmoid(dpos)                    # (M,)
    cneg = -_sigmoid(dneg)                         # (M, z)
    V = cpos[:, None] * Epos + np.einsum("mk,mke->me", cneg, Eneg)
    G = V * (1.0 - F * F)                          # d logp / d preactivation

    inv_m = 1.0 / m
    reg = weight_decay * inv_m
    g_b = -inv_m * G.sum(axis=0)
    g_W = -inv_m * (G.T @ H) + reg * params.W

    g_Wv = reg * params.W_v
    per_token = (G @ params.W) / n                 # (M, e_V)
    _scatter_rows(ngrams.ravel(),
                  np.repeat(per_token, n, axis=0),
                  g_Wv.T, -inv_m)

    g_We = reg * params.W_e
    ids = np.concatenate((positives, negatives.ravel()))
    coeff = np.concatenate((cpos, cneg.ravel()))
    frep = np.concatenate((F, np.repeat(F, negatives.shape[1], axis=0)))
    _scatter_rows(ids, coeff[:, None] * frep, g_We, -inv_m)

    return loss, GradientSet(g_Wv, g_W, g_b, g_We)


def batch_gradients(params, batch, weight_decay):
    """Exact analytic gradients of batch_loss."""
    return batch_loss_and_gradients(params, batch, weight_decay)[1]


class AdamState:
    """Adam accumulators; moments start at zero, t increments per update."""

    def __init__(self, params, alpha=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.t = 0
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}
        self.v = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    state.t += 1
    b1c = 1.0 - state.beta1 ** state.t
    b2c = 1.0 - state.beta2 ** state.t
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta = getattr(params, name)
        theta -= state.alpha * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    """Training configuration.

    weight_decay is the L2 coefficient (the config-file key is "lambda").
    Adam runs at alpha=0.001, beta1=0.9, beta2=0.999, eps=1e-8. precision
    selects the training dtype; models are always persisted as float64.
    validation_cutoff is the NDCG cutoff used for best-epoch selection.
    """

    e_v: int = 300
    e_e: int = 256
    n: int = 4
    z: int = 10
    m: int = 4096
    weight_decay: float = 0.01
    epochs: int = 15
    seed: int = 0
    precision: str = "float64"
    validation_cutoff: int = 100

    _KEYS = ("e_v", "e_e", "n", "z", "m", "lambda", "epochs", "seed",
             "precision", "validation_cutoff")

    def __post_init__(self):
        if min(self.e_v, self.e_e, self.n, self.z, self.m, self.epochs) < 1:
            raise DataError("dimensions, window, negatives, batch size and epochs must be positive")
        if self.weight_decay < 0:
            raise DataError("weight decay must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise DataError("precision must be float32 or float64")
        if self.validation_cutoff < 1:
            raise DataError("validation cutoff must be positive")

    def as_dict(self):
        return {"e_v": self.e_v, "e_e": self.e_e, "n": self.n, "z": self.z,
                "m": self.m, "lambda": self.weight_decay, "epochs": self.epochs,
                "seed": self.seed, "precision": self.precision,
                "validation_cutoff": self.validation_cutoff}

    @classmethod
    def from_mapping(cls, mapping):
        kwargs = {}
        for key, value in mapping.items():
            if key not in cls._KEYS:
                raise DataError(f"unknown config key {key!r}")
            if key == "lambda":
                kwargs["weight_decay"] = float(value)
            elif key == "precision":
                kwargs["precision"] = str(value)
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        """Parse a flat key = value file; blank lines and # comments ignored."""
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{lineno + 1}: expected key = value")
                key, value = (part.strip() for part in line.split("=", 1))
                if key in mapping:
                    raise DataError(f"{path}:{lineno + 1}: duplicate key {key!r}")
                mapping[key] = value
        return cls.from_mapping(mapping)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for key, value in self.as_dict().items():
                fh.write(f"{key} = {value}\n")


def save_model(path, params, vocab_sha256="", entity_ids=(), config=None):
    """Write the binary container: magic, header length, JSON header, then
    the four arrays row-major float64 little-endian in the order W_v, W, b,
    W_e. A pretty-printed .meta.json sidecar mirrors the header."""
    dims = params.dims
    header = {
        "format": "lse-model",
        "dims": {"e_v": dims.e_v, "e_e": dims.e_e,
                 "vocab_size": dims.vocab_size, "num_entities": dims.num_entities},
        "dtype": "float64",
        "vocab_sha256": vocab_sha256,
        "entity_ids": list(entity_ids),
        "config": dict(config) if config else {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in PARAM_FIELDS:
            arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
            fh.write(arr.tobytes())
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Read a model container; returns (ModelParams, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not a model container")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        d = header["dims"]
        shapes = {"W_v": (d["e_v"], d["vocab_size"]),
                  "W": (d["e_e"], d["e_v"]),
                  "b": (d["e_e"],),
                  "W_e": (d["num_entities"], d["e_e"])}
        arrays = {}
        for name in PARAM_FIELDS:
            shape = shapes[name]
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated array {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after arrays")
    return ModelParams(arrays["W_v"], arrays["W"], arrays["b"], arrays["W_e"]), header
