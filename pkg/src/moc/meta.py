"""Two-layer perceptron that mixes the classifier bank, with exact gradients.

Forward for one patch embedding u:

    z1 = W1 u + b1;  a1 = relu(z1);  z2 = W2 a1 + b2
    weights = softmax(z2)            (or raw z2 with the linear head)
    logits[c] = sum_h weights[h] * table_h[patch, c]

Gradients are derived analytically, treat score tables as constants (the
backbone encoders are frozen), and accumulate into a caller-owned buffer
so reduction order stays fixed.

Checkpoint file (.mocm): magic ``MOCM``, version u16 = 1, d u32,
hidden u32, H u32, then W1, b1, W2, b2 as float64 little-endian.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .bank import ScoreTable
from .errors import DimensionMismatch, FormatViolation, IndexOutOfRange, NonFiniteValue
from .store import _read_file, _write_file

META_MAGIC = b"MOCM"
META_VERSION = 1


@dataclass
class MetaLearner:
    W1: np.ndarray   # (hidden, d)
    b1: np.ndarray   # (hidden,)
    W2: np.ndarray   # (H, hidden)
    b2: np.ndarray   # (H,)

    @property
    def dim(self) -> int:
        return int(self.W1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.W1.shape[0])

    @property
    def n_classifiers(self) -> int:
        return int(self.W2.shape[0])

    def validate(self) -> None:
        if self.W1.shape != (self.hidden, self.dim) or self.b1.shape != (self.hidden,):
            raise DimensionMismatch("first-layer parameter shapes inconsistent")
        if self.W2.shape != (self.n_classifiers, self.hidden) or self.b2.shape != (self.n_classifiers,):
            raise DimensionMismatch("second-layer parameter shapes inconsistent")
        for p in (self.W1, self.b1, self.W2, self.b2):
            if not np.isfinite(p).all():
                raise NonFiniteValue("meta-learner parameters contain NaN/Inf")

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)

    def copy(self) -> "MetaLearner":
        return MetaLearner(*(p.copy() for p in self.params()))


@dataclass
class MetaGrads:
    """Parameter-gradient accumulation buffer."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, m: MetaLearner) -> "MetaGrads":
        return cls(*(np.zeros_like(p) for p in m.params()))

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2)


def init_meta(d: int, hidden: int, n_classifiers: int, seed) -> MetaLearner:
    """Xavier-uniform weights, zero biases; deterministic given seed."""
    if min(d, hidden, n_classifiers) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    s1 = np.sqrt(6.0 / (d + hidden))
    s2 = np.sqrt(6.0 / (hidden + n_classifiers))
    return MetaLearner(
        W1=rng.uniform(-s1, s1, size=(hidden, d)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-s2, s2, size=(n_classifiers, hidden)),
        b2=np.zeros(n_classifiers),
    )


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward_weights_batch(m: MetaLearner, U: np.ndarray, normalize: bool = True):
    """Per-patch mixing weights for a (B, d) batch.

    Returns (weights (B, H), cache) where the cache carries the hidden
    pre-activations needed by :func:`backward_batch`.
    """
    if U.ndim != 2 or U.shape[1] != m.dim:
        raise DimensionMismatch(f"embedding batch shape {U.shape} does not match meta dim {m.dim}")
    Z1 = U @ m.W1.T + m.b1
    A1 = np.maximum(Z1, 0.0)
    Z2 = A1 @ m.W2.T + m.b2
    lam = _softmax_rows(Z2) if normalize else Z2
    return lam, (Z1, A1)


def forward_weights(m: MetaLearner, u: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Mixing weights for one patch embedding."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D embedding, got shape {u.shape}")
    lam, _ = forward_weights_batch(m, u[None, :], normalize=normalize)
    return lam[0]


def mix_scores(lam: np.ndarray, tables: list[ScoreTable], patch_index: int, n_classes: int) -> np.ndarray:
    """logits[c] = sum_h lam[h] * table_h[patch, c], scalars broadcast."""
    if len(lam) != len(tables):
        raise DimensionMismatch(f"{len(lam)} weights for {len(tables)} tables")
    out = np.zeros(n_classes)
    for weight, table in zip(lam, tables):
        if not 0 <= patch_index < table.n_patches:
            raise IndexOutOfRange(f"patch {patch_index} outside [0, {table.n_patches})")
        out += weight * table.expand(n_classes)[patch_index]
    return out


def softmax_vjp_rows(lam: np.ndarray, dlam: np.ndarray) -> np.ndarray:
    """Row-wise softmax backward: dz = lam * (dlam - <dlam, lam>)."""
    inner = (dlam * lam).sum(axis=1, keepdims=True)
    return lam * (dlam - inner)


def backward_batch(
    m: MetaLearner,
    U: np.ndarray,
    cache,
    lam: np.ndarray,
    dlam: np.ndarray,
    grads: MetaGrads,
    normalize: bool = True,
) -> None:
    """Accumulate parameter gradients for a batch given dL/dweights."""
    Z1, A1 = cache
    dZ2 = softmax_vjp_rows(lam, dlam) if normalize else dlam
    grads.W2 += dZ2.T @ A1
    grads.b2 += dZ2.sum(axis=0)
    dA1 = dZ2 @ m.W2
    dZ1 = dA1 * (Z1 > 0.0)
    grads.W1 += dZ1.T @ U
    grads.b1 += dZ1.sum(axis=0)


def backward(
    m: MetaLearner,
    u: np.ndarray,
    lam: np.ndarray,
    upstream: np.ndarray,
    tables: list[ScoreTable],
    patch_index: int,
    grads: MetaGrads,
    normalize: bool = True,
) -> None:
    """Accumulate one patch's parameter gradients.

    ``upstream`` is dL/dlogits for this patch's mixed logits; score tables
    are constants, so the only gradient path is through the mixing weights.
    """
    n_classes = len(upstream)
    dlam = np.array(
        [float(upstream @ np.asarray(t.expand(n_classes)[patch_index], dtype=np.float64)) for t in tables]
    )
    u = np.asarray(u, dtype=np.float64)
    _, cache = forward_weights_batch(m, u[None, :], normalize=normalize)
    backward_batch(m, u[None, :], cache, lam[None, :], dlam[None, :], grads, normalize=normalize)


# -- checkpoint file ---------------------------------------------------------

def checkpoint_bytes(m: MetaLearner) -> bytes:
    m.validate()
    out = bytearray()
    out += META_MAGIC
    out += struct.pack("<H", META_VERSION)
    out += struct.pack("<III", m.dim, m.hidden, m.n_classifiers)
    for p in m.params():
        out += np.ascontiguousarray(p, dtype="<f8").tobytes()
    return bytes(out)


def write_checkpoint(m: MetaLearner, path) -> None:
    _write_file(path, checkpoint_bytes(m))


def read_checkpoint(path) -> MetaLearner:
    data = _read_file(path)
    if data[:4] != META_MAGIC:
        raise FormatViolation(f"{path}: bad magic, not a meta-learner checkpoint")
    (version,) = struct.unpack("<H", data[4:6])
    if version != META_VERSION:
        raise FormatViolation(f"{path}: unsupported checkpoint version {version}")
    d, hidden, n_cls = struct.unpack("<III", data[6:18])
    shapes = [(hidden, d), (hidden,), (n_cls, hidden), (n_cls,)]
    expected = 18 + sum(int(np.prod(s)) * 8 for s in shapes)
    if len(data) != expected:
        raise FormatViolation(f"{path}: size {len(data)} != expected {expected}")
    offset = 18
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy())
        offset += count * 8
    m = MetaLearner(*arrays)
    m.validate()
    return m


def checkpoint_sha256(m: MetaLearner) -> str:
    return hashlib.sha256(checkpoint_bytes(m)).hexdigest()
