"""Forward-only transformer encoder: frozen weights in, [CLS] feature vectors out.

The encoder is never trained here, so the forward pass is pure and has no
dropout. Self-attention uses additive masking (-1e9 on padded key positions),
feed-forward layers use the exact erf GELU, and every block is post-norm:
x = norm(x + sublayer(x)). The classification feature is the position-0
hidden state, by default passed through the pooler (linear + tanh).

All encoder math runs at float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from .checkpoint import CheckpointError, load_tensors, save_tensors, tensors_digest
from .preprocess import clean
from .tokenizer import TokenizedSample, Vocab, encode

MASK_FILL = np.float32(-1e9)


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    num_heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    max_position: int
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        dims = (self.num_layers, self.num_heads, self.d_model, self.d_ff,
                self.vocab_size, self.max_position)
        if any(d <= 0 for d in dims):
            raise ValueError(f"all dimensions must be positive: {self}")
        if self.d_model % self.num_heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )

    @classmethod
    def base(cls) -> "EncoderConfig":
        """The 12-layer pretrained base model's shape."""
        return cls(num_layers=12, num_heads=12, d_model=768, d_ff=3072,
                   vocab_size=30522, max_position=512, layer_norm_eps=1e-12)

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers, "num_heads": self.num_heads,
            "d_model": self.d_model, "d_ff": self.d_ff,
            "vocab_size": self.vocab_size, "max_position": self.max_position,
            "layer_norm_eps": self.layer_norm_eps,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EncoderConfig":
        return cls(**obj)


def tensor_schema(config: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every tensor name and shape a weight set must carry, in canonical order."""
    d, f = config.d_model, config.d_ff
    schema: list[tuple[str, tuple[int, ...]]] = [
        ("embeddings.word", (config.vocab_size, d)),
        ("embeddings.position", (config.max_position, d)),
        ("embeddings.segment", (d,)),
        ("embeddings.norm.scale", (d,)),
        ("embeddings.norm.shift", (d,)),
    ]
    for i in range(config.num_layers):
        p = f"layer.{i}."
        schema += [
            (p + "attn.q.weight", (d, d)), (p + "attn.q.bias", (d,)),
            (p + "attn.k.weight", (d, d)), (p + "attn.k.bias", (d,)),
            (p + "attn.v.weight", (d, d)), (p + "attn.v.bias", (d,)),
            (p + "attn.out.weight", (d, d)), (p + "attn.out.bias", (d,)),
            (p + "attn.norm.scale", (d,)), (p + "attn.norm.shift", (d,)),
            (p + "ff.in.weight", (d, f)), (p + "ff.in.bias", (f,)),
            (p + "ff.out.weight", (f, d)), (p + "ff.out.bias", (d,)),
            (p + "ff.norm.scale", (d,)), (p + "ff.norm.shift", (d,)),
        ]
    schema += [("pooler.weight", (d, d)), ("pooler.bias", (d,))]
    return schema


def param_count(config: EncoderConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in tensor_schema(config))


@dataclass(frozen=True)
class EncoderWeights:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]  # float32, in tensor_schema order

    def digest(self) -> bytes:
        return tensors_digest(self.tensors)

    def param_count(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def init_random(config: EncoderConfig, seed: int) -> EncoderWeights:
    """Toy weights under the standard normal(0, 0.02) scheme, fixed seed.

    Weight and embedding tensors are drawn i.i.d. normal(0, 0.02); norm scales
    start at 1 and biases/shifts at 0, so the residual stream keeps a usable
    dynamic range through the stack.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_schema(config):
        if name.endswith(".scale"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.endswith((".bias", ".shift")):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
        tensors[name] = arr
    return EncoderWeights(config=config, tensors=tensors)


def save_weights(weights: EncoderWeights, out_dir) -> Path:
    ordered = {name: weights.tensors[name] for name, _ in tensor_schema(weights.config)}
    return save_tensors(out_dir, ordered, weights.config.to_dict())


def load_weights(manifest_dir, config: EncoderConfig | None = None) -> EncoderWeights:
    """Load and shape-check a checkpoint against the (or its own) config."""
    tensors, manifest = load_tensors(manifest_dir)
    file_config = EncoderConfig.from_dict(manifest["config"])
    if config is not None and config != file_config:
        raise CheckpointError(
            f"checkpoint config {file_config} does not match requested {config}"
        )
    config = file_config

    ordered: dict[str, np.ndarray] = {}
    for name, shape in tensor_schema(config):
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name!r}")
        arr = tensors.pop(name)
        if arr.shape != shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, want {shape}"
            )
        ordered[name] = arr
    if tensors:
        raise CheckpointError(f"unexpected tensors in checkpoint: {sorted(tensors)}")
    return EncoderWeights(config=config, tensors=ordered)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _layer_norm(x, scale, shift, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + np.float32(eps)) * scale + shift


def gelu(x: np.ndarray) -> np.ndarray:
    return np.float32(0.5) * x * (np.float32(1.0) + erf(x / np.sqrt(np.float32(2.0))))


def attention(q, k, v, mask, return_weights: bool = False):
    """Scaled dot-product attention over one sequence.

    q, k, v: (L, d) matrices with equal row counts; mask: length-L binary
    vector, 0 = masked key position (receives -1e9 before the row softmax).
    """
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    v = np.asarray(v, dtype=np.float32)
    mask = np.asarray(mask)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("q, k, v must be matrices")
    if not (q.shape[0] == k.shape[0] == v.shape[0] == mask.shape[0]):
        raise ValueError(
            f"row counts differ: q {q.shape}, k {k.shape}, v {v.shape}, "
            f"mask {mask.shape}"
        )
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"q and k widths differ: {q.shape[1]} vs {k.shape[1]}")

    scores = q @ k.T / np.sqrt(np.float32(q.shape[1]))
    scores = scores + np.where(mask == 0, MASK_FILL, np.float32(0.0))[None, :]
    weights = _softmax(scores, axis=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def encode_batch(
    ids: np.ndarray, mask: np.ndarray, weights: EncoderWeights, pooled: bool = True
) -> np.ndarray:
    """Forward a (B, L) batch of token ids + masks to (B, d_model) features."""
    cfg = weights.config
    t = weights.tensors
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    if ids.shape != mask.shape or ids.ndim != 2:
        raise ValueError(f"ids {ids.shape} and mask {mask.shape} must be equal 2-d shapes")
    batch, seq_len = ids.shape
    if seq_len > cfg.max_position:
        raise ValueError(f"sequence length {seq_len} exceeds max_position {cfg.max_position}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(
            f"token ids must lie in [0, {cfg.vocab_size}), got "
            f"[{ids.min()}, {ids.max()}]"
        )

    eps = cfg.layer_norm_eps
    x = (t["embeddings.word"][ids]
         + t["embeddings.position"][:seq_len][None, :, :]
         + t["embeddings.segment"][None, None, :])
    x = _layer_norm(x, t["embeddings.norm.scale"], t["embeddings.norm.shift"], eps)

    n_heads = cfg.num_heads
    d_head = cfg.d_model // n_heads
    # (B, 1, 1, L): broadcast over heads and query positions
    add_mask = np.where(mask == 0, MASK_FILL, np.float32(0.0))[:, None, None, :]
    scale = np.float32(1.0 / np.sqrt(d_head))

    def heads(m):  # (B, L, d_model) -> (B, H, L, d_head)
        return m.reshape(batch, seq_len, n_heads, d_head).transpose(0, 2, 1, 3)

    for i in range(cfg.num_layers):
        p = f"layer.{i}."
        q = heads(x @ t[p + "attn.q.weight"] + t[p + "attn.q.bias"])
        k = heads(x @ t[p + "attn.k.weight"] + t[p + "attn.k.bias"])
        v = heads(x @ t[p + "attn.v.weight"] + t[p + "attn.v.bias"])
        scores = q @ k.transpose(0, 1, 3, 2) * scale + add_mask
        ctx = _softmax(scores, axis=-1) @ v
        ctx = ctx.transpose(0, 2, 1, 3).reshape(batch, seq_len, cfg.d_model)
        attn_out = ctx @ t[p + "attn.out.weight"] + t[p + "attn.out.bias"]
        x = _layer_norm(x + attn_out, t[p + "attn.norm.scale"], t[p + "attn.norm.shift"], eps)
        hidden = gelu(x @ t[p + "ff.in.weight"] + t[p + "ff.in.bias"])
        ff_out = hidden @ t[p + "ff.out.weight"] + t[p + "ff.out.bias"]
        x = _layer_norm(x + ff_out, t[p + "ff.norm.scale"], t[p + "ff.norm.shift"], eps)

    cls = x[:, 0, :]
    if pooled:
        cls = np.tanh(cls @ t["pooler.weight"] + t["pooler.bias"])
    return cls.astype(np.float32, copy=False)


def encode_cls(sample: TokenizedSample, weights: EncoderWeights, pooled: bool = True) -> np.ndarray:
    """Feature vector (d_model,) for one tokenized sample."""
    ids = np.asarray(sample.ids)[None, :]
    mask = np.asarray(sample.mask)[None, :]
    return encode_batch(ids, mask, weights, pooled=pooled)[0]


# ---------------------------------------------------------------------------
# embedding cache
# ---------------------------------------------------------------------------
#
# Binary layout (little-endian):
#   header: magic "EMBC" | u32 version=1 | u64 n | u32 d_model | u32 seq_len
#           | 32-byte vocab sha256 | 32-byte weights sha256
#   record: u16 id-length | id bytes (utf-8) | u8 label | d_model * f32

_CACHE_MAGIC = b"EMBC"
_CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQII32s32s")


@dataclass
class EmbeddingCache:
    ids: list[str]
    labels: np.ndarray       # (n,) uint8
    vectors: np.ndarray      # (n, d_model) float32
    seq_len: int
    vocab_hash: bytes
    weights_hash: bytes

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def d_model(self) -> int:
        return int(self.vectors.shape[1])

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vectors, self.labels.astype(np.int64)

    def subset(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.vectors[idx], self.labels[idx].astype(np.int64)


def _write_header(fh, n, d_model, seq_len, vocab_hash, weights_hash):
    fh.write(_HEADER.pack(_CACHE_MAGIC, _CACHE_VERSION, n, d_model, seq_len,
                          vocab_hash, weights_hash))


def _record_bytes(sample_id: str, label: int, vec: np.ndarray) -> bytes:
    id_bytes = sample_id.encode("utf-8")
    return (struct.pack("<H", len(id_bytes)) + id_bytes
            + struct.pack("<B", label)
            + np.ascontiguousarray(vec, dtype="<f4").tobytes())


def write_cache(cache: EmbeddingCache, path) -> Path:
    """Serialize an in-memory embedding cache to the binary format."""
    path = Path(path)
    with path.open("wb") as fh:
        _write_header(fh, len(cache), cache.d_model, cache.seq_len,
                      cache.vocab_hash, cache.weights_hash)
        for sample_id, label, vec in zip(cache.ids, cache.labels, cache.vectors):
            fh.write(_record_bytes(sample_id, int(label), vec))
    return path


def read_cache(path) -> EmbeddingCache:
    """Read an embedding cache, ignoring any partially written trailing record."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path} is too small to be an embedding cache")
    magic, version, n, d_model, seq_len, vocab_hash, weights_hash = _HEADER.unpack(
        data[: _HEADER.size]
    )
    if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
        raise CheckpointError(f"{path} is not an embedding cache")

    ids: list[str] = []
    labels: list[int] = []
    vectors: list[np.ndarray] = []
    pos = _HEADER.size
    vec_bytes = 4 * d_model
    while len(ids) < n:
        if pos + 2 > len(data):
            break
        (id_len,) = struct.unpack_from("<H", data, pos)
        end = pos + 2 + id_len + 1 + vec_bytes
        if end > len(data):
            break
        sample_id = data[pos + 2: pos + 2 + id_len].decode("utf-8")
        label = data[pos + 2 + id_len]
        vec = np.frombuffer(data, dtype="<f4", count=d_model,
                            offset=pos + 2 + id_len + 1)
        ids.append(sample_id)
        labels.append(label)
        vectors.append(vec)
        pos = end

    stacked = (np.stack(vectors) if vectors
               else np.empty((0, d_model), dtype=np.float32))
    return EmbeddingCache(
        ids=ids, labels=np.asarray(labels, dtype=np.uint8), vectors=stacked,
        seq_len=seq_len, vocab_hash=vocab_hash, weights_hash=weights_hash,
    )


def _valid_byte_length(cache: EmbeddingCache) -> int:
    total = _HEADER.size
    for sample_id in cache.ids:
        total += 2 + len(sample_id.encode("utf-8")) + 1 + 4 * cache.d_model
    return total


def embed_corpus(
    samples: Iterable,
    weights: EncoderWeights,
    vocab: Vocab,
    seq_len: int,
    cache_path,
    *,
    clean_text: bool = True,
    pooled: bool = True,
    strip_accents: bool = True,
    batch_size: int = 32,
    progress: bool = False,
) -> EmbeddingCache:
    """Embed every sample to a [CLS] feature row in the on-disk cache.

    Resumable: rows already present (matched by sample id) are not recomputed.
    Refuses to append to a cache built with a different vocabulary, weights,
    d_model, or seq_len.
    """
    cfg = weights.config
    if len(vocab) != cfg.vocab_size:
        raise ValueError(
            f"vocabulary size {len(vocab)} does not match config vocab_size "
            f"{cfg.vocab_size}"
        )
    if not 3 <= seq_len <= cfg.max_position:
        raise ValueError(
            f"seq_len must be in [3, {cfg.max_position}], got {seq_len}"
        )

    cache_path = Path(cache_path)
    vocab_hash = vocab.digest()
    weights_hash = weights.digest()

    samples = list(samples)
    done: set[str] = set()
    if cache_path.exists():
        existing = read_cache(cache_path)
        if (existing.vocab_hash != vocab_hash
                or existing.weights_hash != weights_hash
                or existing.d_model != cfg.d_model
                or existing.seq_len != seq_len):
            raise CheckpointError(
                f"refusing to append to {cache_path}: it was built with a "
                f"different vocabulary, weights, or sequence length"
            )
        done = set(existing.ids)
        # drop any partially written trailing record before appending
        with cache_path.open("r+b") as fh:
            fh.truncate(_valid_byte_length(existing))
        n_done = len(existing)
    else:
        with cache_path.open("wb") as fh:
            _write_header(fh, 0, cfg.d_model, seq_len, vocab_hash, weights_hash)
        n_done = 0

    todo = [s for s in samples if s.id not in done]
    iterator = range(0, len(todo), batch_size)
    if progress:
        from tqdm import tqdm
        iterator = tqdm(iterator, total=(len(todo) + batch_size - 1) // batch_size,
                        unit="batch")

    with cache_path.open("r+b") as fh:
        fh.seek(0, 2)
        for start in iterator:
            chunk = todo[start:start + batch_size]
            ids_mat = np.empty((len(chunk), seq_len), dtype=np.int64)
            mask_mat = np.empty((len(chunk), seq_len), dtype=np.int64)
            for j, s in enumerate(chunk):
                text = clean(s.text) if clean_text else s.text
                tok = encode(text, vocab, seq_len, label=s.label,
                             strip_accents=strip_accents)
                ids_mat[j] = tok.ids
                mask_mat[j] = tok.mask
            vecs = encode_batch(ids_mat, mask_mat, weights, pooled=pooled)
            for j, s in enumerate(chunk):
                try:
                    fh.write(_record_bytes(s.id, s.label, vecs[j]))
                except OSError as exc:
                    raise CheckpointError(
                        f"failed writing cache row for sample {s.id!r}: {exc}"
                    ) from exc
            n_done += len(chunk)
            fh.flush()
            pos = fh.tell()
            fh.seek(8)  # u64 n field lives after magic + version
            fh.write(struct.pack("<Q", n_done))
            fh.seek(pos)

    return read_cache(cache_path)
