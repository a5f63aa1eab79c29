"""Layer pooling of token hidden states and the EMB1 embedding file format.

EMB1 layout (little-endian)::

    b"EMB1"  u32 version=1  u32 H  u32 n_layers
    repeated records:
        u16 id_len, id (UTF-8), u32 n_tokens,
        float32[n_layers, n_tokens, H]   (layer-major, then token-major)

Layer index 0 is the deepest (earliest) stored layer, the last index is the
final hidden layer. Producers must strip special tokens ([CLS], [SEP], ...)
before writing, since pooling averages every stored token.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, FormatError, NonFiniteValue, TruncatedFile, ZeroVector

MAGIC = b"EMB1"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_MASK64 = (1 << 64) - 1


@dataclass
class TokenEmbeddingMatrix:
    tweet_id: str
    values: np.ndarray  # [n_layers, n_tokens, H]

    def __post_init__(self):
        if self.values.ndim != 3 or 0 in self.values.shape:
            raise DimensionMismatch(
                f"{self.tweet_id}: expected non-empty [layers, tokens, H] tensor, got {self.values.shape}"
            )

    @property
    def n_layers(self):
        return self.values.shape[0]

    @property
    def n_tokens(self):
        return self.values.shape[1]

    @property
    def hidden_dim(self):
        return self.values.shape[2]


class PoolingStrategy(str, enum.Enum):
    CAT4 = "4-cat"
    SUM4 = "4-sum"
    LAST = "last"
    SECOND_LAST = "2-last"

    @property
    def min_layers(self):
        return {"4-cat": 4, "4-sum": 4, "last": 1, "2-last": 2}[self.value]

    def output_dim(self, hidden_dim):
        return 4 * hidden_dim if self is PoolingStrategy.CAT4 else hidden_dim


@dataclass
class SentenceEmbedding:
    tweet_id: str
    vector: np.ndarray


def pool_vector(values: np.ndarray, strategy) -> np.ndarray:
    """Pool a ``[n_layers, n_tokens, H]`` array into one unit-norm vector.

    Tokens are averaged within each layer first; the per-layer means of the
    selected layers are then averaged (4-sum) or concatenated with the
    earliest of the four first (4-cat).
    """
    strategy = PoolingStrategy(strategy)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[1] < 1:
        raise DimensionMismatch(f"expected [layers, tokens, H] with >=1 token, got {values.shape}")
    if values.shape[0] < strategy.min_layers:
        raise DimensionMismatch(
            f"{strategy.value} needs {strategy.min_layers} layers, got {values.shape[0]}"
        )
    layer_means = values.mean(axis=1)
    if strategy is PoolingStrategy.SUM4:
        vec = layer_means[-4:].mean(axis=0)
    elif strategy is PoolingStrategy.CAT4:
        vec = layer_means[-4:].reshape(-1)
    elif strategy is PoolingStrategy.LAST:
        vec = layer_means[-1]
    else:
        vec = layer_means[-2]
    norm = np.linalg.norm(vec)
    if not norm >= 1e-12:
        raise ZeroVector(f"pooled vector has norm {norm:g}")
    return vec / norm


def pool(m: TokenEmbeddingMatrix, strategy) -> SentenceEmbedding:
    try:
        return SentenceEmbedding(m.tweet_id, pool_vector(m.values, strategy))
    except (ZeroVector, DimensionMismatch) as exc:
        raise type(exc)(f"{m.tweet_id}: {exc}") from None


def pool_all(matrices: Iterable[TokenEmbeddingMatrix], strategy) -> dict:
    """Map tweet id -> pooled vector."""
    return {m.tweet_id: pool(m, strategy).vector for m in matrices}


# toy embedder

def _splitmix64(x):
    """SplitMix64 finalizer on uint64 scalars or arrays (wrapping arithmetic)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def toy_value(token: str, layer, dim, seed: int):
    """Hash (token, layer, dim, seed) to a value in [-1, 1).

    ``h = splitmix64(fnv1a64(utf8(token)) ^ splitmix64(seed) ^ (layer << 32 | dim))``;
    the top 53 bits of ``h`` scaled to [0, 1) are mapped affinely onto [-1, 1).
    """
    key = np.uint64(fnv1a64(token.encode("utf-8")))
    salt = _splitmix64(np.uint64(seed & _MASK64))
    pos = (np.asarray(layer, dtype=np.uint64) << np.uint64(32)) | np.asarray(dim, dtype=np.uint64)
    h = _splitmix64(key ^ salt ^ pos)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53 * 2.0 - 1.0


def toy_embed(tokens: Sequence[str], n_layers: int, hidden_dim: int, seed: int, tweet_id: str = "") -> TokenEmbeddingMatrix:
    """Deterministic stand-in for transformer hidden states."""
    if n_layers < 1 or hidden_dim < 1:
        raise DimensionMismatch("n_layers and hidden_dim must be positive")
    if not tokens:
        raise DimensionMismatch(f"{tweet_id}: cannot embed an empty token sequence")
    layer = np.arange(n_layers, dtype=np.uint64)[:, None]
    dim = np.arange(hidden_dim, dtype=np.uint64)[None, :]
    cache = {}
    out = np.empty((n_layers, len(tokens), hidden_dim), dtype=np.float32)
    for j, tok in enumerate(tokens):
        if tok not in cache:
            cache[tok] = toy_value(tok, layer, dim, seed).astype(np.float32)
        out[:, j, :] = cache[tok]
    return TokenEmbeddingMatrix(tweet_id, out)


# EMB1 file format

def write_embeddings(matrices: Iterable[TokenEmbeddingMatrix], path) -> int:
    """Write matrices to ``path``; returns the number of records.

    All matrices must share (n_layers, H). An empty stream needs no header
    dimensions, so it is written with H = n_layers = 0.
    """
    it = iter(matrices)
    count = 0
    with open(path, "wb") as fh:
        first = next(it, None)
        if first is None:
            fh.write(_HEADER.pack(MAGIC, VERSION, 0, 0))
            return 0
        n_layers, hidden = first.n_layers, first.hidden_dim
        fh.write(_HEADER.pack(MAGIC, VERSION, hidden, n_layers))
        for m in _chain(first, it):
            if (m.n_layers, m.hidden_dim) != (n_layers, hidden):
                raise DimensionMismatch(
                    f"{m.tweet_id}: shape {m.values.shape} does not match ({n_layers}, *, {hidden})"
                )
            values = np.asarray(m.values, dtype="<f4")
            if not np.isfinite(values).all():
                raise NonFiniteValue(f"non-finite value in embedding of tweet {m.tweet_id!r}")
            ident = m.tweet_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise FormatError(f"tweet id too long ({len(ident)} bytes)")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<I", m.n_tokens))
            fh.write(np.ascontiguousarray(values).tobytes())
            count += 1
    return count


def _chain(first, rest):
    yield first
    yield from rest


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"file ends inside {what} (wanted {n} bytes, got {len(data)})")
    return data


def read_header(path):
    """Return ``(hidden_dim, n_layers)`` of an EMB1 file."""
    with open(path, "rb") as fh:
        return _parse_header(fh)


def _parse_header(fh):
    raw = fh.read(_HEADER.size)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError("bad magic bytes, not an EMB1 file")
    if len(raw) != _HEADER.size:
        raise TruncatedFile("file ends inside header")
    _, version, hidden, n_layers = _HEADER.unpack(raw)
    if version != VERSION:
        raise FormatError(f"unsupported EMB1 version {version}")
    return hidden, n_layers


def read_embeddings(path) -> Iterator[TokenEmbeddingMatrix]:
    """Stream TokenEmbeddingMatrix records from an EMB1 file."""
    with open(path, "rb") as fh:
        hidden, n_layers = _parse_header(fh)
        while True:
            head = fh.read(2)
            if not head:
                return
            if len(head) != 2:
                raise TruncatedFile("file ends inside record header")
            (id_len,) = struct.unpack("<H", head)
            try:
                tweet_id = _read_exact(fh, id_len, "tweet id").decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("tweet id is not valid UTF-8") from None
            (n_tokens,) = struct.unpack("<I", _read_exact(fh, 4, f"record {tweet_id!r}"))
            if n_tokens == 0 or hidden == 0 or n_layers == 0:
                raise FormatError(f"record {tweet_id!r} has an empty tensor")
            count = n_layers * n_tokens * hidden
            payload = _read_exact(fh, 4 * count, f"payload of {tweet_id!r}")
            values = np.frombuffer(payload, dtype="<f4").reshape(n_layers, n_tokens, hidden)
            if not np.isfinite(values).all():
                raise NonFiniteValue(f"non-finite value in embedding of tweet {tweet_id!r}")
            yield TokenEmbeddingMatrix(tweet_id, values.astype(np.float32))
