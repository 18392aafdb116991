"""Text embeddings behind a provider contract, with cosine similarity and a disk cache.

Providers are addressed by the descriptor's endpoint:

- ``http(s)://host`` — remote service speaking ``POST {endpoint}/embed``
  with ``{"encoder_id":..., "texts":[...]}`` -> ``{"dim":N,"vectors":[[...],...]}``
- ``deterministic://`` — offline test provider: each text hashes to a fixed
  pseudo-random unit vector, so metric tests run without any service
- ``file://vectors.json`` — fixture provider with explicit text->vector map
- ``cache-only`` — no provider; every text must already be cached

Vectors are cached on disk keyed by (encoder_id, SHA-256 of the UTF-8 text):
an append-only blob of length-prefixed frames plus a JSON offset index. The
index is rebuilt by scanning the blob when absent or stale, so a lost index
never loses vectors.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import httpx
import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    ProviderUnavailable,
    ZeroVector,
)

ENDPOINT_ENV_VAR = "CRYSTAL_EMBED_ENDPOINT"
CACHE_ONLY = "cache-only"

_FRAME_LEN = struct.Struct("<I")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class ProviderDescriptor:
    """Names an embedding provider and its operational limits."""

    encoder_id: str
    endpoint: str
    dim: int
    timeout_ms: int = 30000
    max_batch: int = 32

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderDescriptor":
        endpoint = d.get("endpoint") or os.environ.get(ENDPOINT_ENV_VAR, CACHE_ONLY)
        return cls(
            encoder_id=d["encoder_id"],
            endpoint=endpoint,
            dim=int(d["dim"]),
            timeout_ms=int(d.get("timeout_ms", 30000)),
            max_batch=int(d.get("max_batch", 32)),
        )

    def to_dict(self) -> dict:
        return {
            "encoder_id": self.encoder_id,
            "endpoint": self.endpoint,
            "dim": self.dim,
            "timeout_ms": self.timeout_ms,
            "max_batch": self.max_batch,
        }


@dataclass
class EmbeddingVector:
    values: np.ndarray  # shape (dim,); float32 or float64
    dim: int
    encoder_id: str

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.values = arr
        if self.values.shape != (self.dim,):
            raise DimensionMismatch(self.dim, int(self.values.shape[0]))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")


@dataclass
class SimilarityMatrix:
    """Pairwise cosine similarities: rows = predicted steps, cols = reference steps."""

    values: np.ndarray  # float64, shape (n_pred, n_ref), entries in [-1, 1]

    @property
    def n_pred(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_ref(self) -> int:
        return int(self.values.shape[1])


def text_key(encoder_id: str, text: str) -> str:
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return f"{digest}:{encoder_id}"


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Cosine similarity clamped to [-1, 1]; raises ZeroVector on degenerate input."""
    if u.dim != v.dim:
        raise DimensionMismatch(u.dim, v.dim)
    a = u.values.astype(np.float64)
    b = v.values.astype(np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cannot take cosine of an all-zero vector")
    if np.array_equal(a, b):
        return 1.0
    sim = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, sim))


class VectorCache:
    """Content-addressed on-disk vector store: index.json + append-only vectors.bin.

    Frame layout (little-endian): u32 frame length, then u16 encoder-id length,
    encoder-id bytes, 32-byte SHA-256 digest of the text, u32 dim, dim float32
    values. Concurrent readers are safe; appends serialize through one lock.
    """

    INDEX_FLUSH_EVERY = 256

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.index_path = self.directory / "index.json"
        self.blob_path = self.directory / "vectors.bin"
        self._lock = threading.Lock()
        self._pending = 0
        self._index: dict[str, int] = {}
        self._load_index()

    def _load_index(self) -> None:
        blob_size = self.blob_path.stat().st_size if self.blob_path.exists() else 0
        index: dict[str, int] = {}
        stale = blob_size > 0
        if self.index_path.exists():
            try:
                loaded = json.loads(self.index_path.read_text(encoding="utf-8"))
                index = {str(k): int(v) for k, v in loaded.get("offsets", {}).items()}
                stale = loaded.get("blob_size", -1) != blob_size
            except (json.JSONDecodeError, OSError, AttributeError):
                stale = True
        if stale and blob_size > 0:
            index = self._scan_blob()
        self._index = index

    def _scan_blob(self) -> dict[str, int]:
        """Rebuild the index by walking the blob's length-prefixed frames."""
        index: dict[str, int] = {}
        data = self.blob_path.read_bytes()
        offset = 0
        while offset + _FRAME_LEN.size <= len(data):
            (frame_len,) = _FRAME_LEN.unpack_from(data, offset)
            end = offset + _FRAME_LEN.size + frame_len
            if end > len(data):
                break  # truncated trailing frame: drop it
            try:
                key = self._frame_key(data[offset + _FRAME_LEN.size:end])
            except (struct.error, UnicodeDecodeError):
                break
            index[key] = offset
            offset = end
        return index

    @staticmethod
    def _frame_key(payload: bytes) -> str:
        (id_len,) = _U16.unpack_from(payload, 0)
        encoder_id = payload[_U16.size:_U16.size + id_len].decode("utf-8")
        digest = payload[_U16.size + id_len:_U16.size + id_len + 32]
        return f"{digest.hex()}:{encoder_id}"

    def get(self, encoder_id: str, text: str) -> Optional[np.ndarray]:
        offset = self._index.get(text_key(encoder_id, text))
        if offset is None:
            return None
        with self.blob_path.open("rb") as fh:
            fh.seek(offset)
            (frame_len,) = _FRAME_LEN.unpack(fh.read(_FRAME_LEN.size))
            payload = fh.read(frame_len)
        (id_len,) = _U16.unpack_from(payload, 0)
        body = payload[_U16.size + id_len + 32:]
        (dim,) = _U32.unpack_from(body, 0)
        return np.frombuffer(body, dtype="<f4", count=dim, offset=_U32.size).copy()

    def put(self, encoder_id: str, text: str, values: np.ndarray) -> None:
        key = text_key(encoder_id, text)
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        vec = np.asarray(values, dtype="<f4")
        id_bytes = encoder_id.encode("utf-8")
        payload = _U16.pack(len(id_bytes)) + id_bytes + digest + _U32.pack(vec.size) + vec.tobytes()
        with self._lock:
            if key in self._index:
                return
            with self.blob_path.open("ab") as fh:
                offset = fh.tell()
                fh.write(_FRAME_LEN.pack(len(payload)) + payload)
            self._index[key] = offset
            self._pending += 1
            if self._pending >= self.INDEX_FLUSH_EVERY:
                self._write_index_locked()

    def _write_index_locked(self) -> None:
        blob_size = self.blob_path.stat().st_size if self.blob_path.exists() else 0
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps({"blob_size": blob_size, "offsets": self._index}),
                       encoding="utf-8")
        tmp.replace(self.index_path)
        self._pending = 0

    def flush(self) -> None:
        with self._lock:
            self._write_index_locked()

    def __len__(self) -> int:
        return len(self._index)


class DeterministicProvider:
    """Offline provider: SHA-256 of (encoder_id, text) seeds a fixed unit vector.

    Vectors are reproducible across platforms and runs; unrelated texts land
    nearly orthogonal at dim >= 256, far below any matching threshold.
    """

    def __init__(self, descriptor: ProviderDescriptor):
        self.descriptor = descriptor

    def fetch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            digest = hashlib.sha256(
                (self.descriptor.encoder_id + "\x00" + text).encode("utf-8")).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
            v = rng.standard_normal(self.descriptor.dim)
            out.append((v / np.linalg.norm(v)).astype(np.float32))
        return out


class FileProvider:
    """Fixture provider backed by a JSON file: {"dim": N, "vectors": {text: [...]}}."""

    def __init__(self, descriptor: ProviderDescriptor):
        self.descriptor = descriptor
        path = descriptor.endpoint[len("file://"):]
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if int(data["dim"]) != descriptor.dim:
            raise DimensionMismatch(descriptor.dim, int(data["dim"]))
        self._vectors = {t: np.asarray(v, dtype=np.float32) for t, v in data["vectors"].items()}

    def fetch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            if text not in self._vectors:
                raise ProviderUnavailable(self.descriptor.endpoint)
            vec = self._vectors[text]
            if vec.shape != (self.descriptor.dim,):
                raise DimensionMismatch(self.descriptor.dim, int(vec.shape[0]))
            out.append(vec)
        return out


class HttpProvider:
    """Remote provider with bounded retries and exponential backoff."""

    MAX_ATTEMPTS = 3
    BACKOFF_BASE_S = 0.2

    def __init__(self, descriptor: ProviderDescriptor,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleeper=time.sleep):
        self.descriptor = descriptor
        self._sleep = sleeper
        self._client = httpx.Client(
            transport=transport,
            timeout=descriptor.timeout_ms / 1000.0,
        )

    def fetch(self, texts: Sequence[str]) -> list[np.ndarray]:
        url = self.descriptor.endpoint.rstrip("/") + "/embed"
        payload = {"encoder_id": self.descriptor.encoder_id, "texts": list(texts)}
        last_error: Optional[Exception] = None
        for attempt in range(self.MAX_ATTEMPTS):
            try:
                response = self._client.post(url, json=payload)
                response.raise_for_status()
                body = response.json()
                if int(body["dim"]) != self.descriptor.dim:
                    raise DimensionMismatch(self.descriptor.dim, int(body["dim"]))
                vectors = [np.asarray(v, dtype=np.float32) for v in body["vectors"]]
                for vec in vectors:
                    if vec.shape != (self.descriptor.dim,):
                        raise DimensionMismatch(self.descriptor.dim, int(vec.shape[0]))
                return vectors
            except DimensionMismatch:
                raise
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.MAX_ATTEMPTS:
                    self._sleep(self.BACKOFF_BASE_S * (2 ** attempt))
        raise ProviderUnavailable(self.descriptor.endpoint, self.MAX_ATTEMPTS) from last_error

    def close(self) -> None:
        self._client.close()


def make_provider(descriptor: ProviderDescriptor,
                  transport: Optional[httpx.BaseTransport] = None):
    endpoint = descriptor.endpoint
    if endpoint.startswith("deterministic://"):
        return DeterministicProvider(descriptor)
    if endpoint.startswith("file://"):
        return FileProvider(descriptor)
    if endpoint == CACHE_ONLY:
        return None
    if endpoint.startswith(("http://", "https://")):
        return HttpProvider(descriptor, transport=transport)
    raise ValueError(f"unrecognized provider endpoint: {endpoint!r}")


class EmbeddingGateway:
    """Caching front door for one embedding provider."""

    def __init__(self, descriptor: ProviderDescriptor,
                 cache_dir: Optional[str | Path] = None,
                 transport: Optional[httpx.BaseTransport] = None,
                 provider=None):
        self.descriptor = descriptor
        self.cache = VectorCache(cache_dir) if cache_dir is not None else None
        self.provider = provider if provider is not None else make_provider(descriptor, transport)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Embed ``texts`` in order, reading and writing through the cache."""
        if not texts:
            raise EmptyInput("embed requires at least one text")
        resolved: dict[str, np.ndarray] = {}
        missing: list[str] = []
        for text in texts:
            if text in resolved:
                continue
            cached = (self.cache.get(self.descriptor.encoder_id, text)
                      if self.cache is not None else None)
            if cached is not None:
                resolved[text] = cached
            else:
                missing.append(text)
        if missing:
            if self.provider is None:
                raise ProviderUnavailable(CACHE_ONLY)
            for start in range(0, len(missing), self.descriptor.max_batch):
                batch = missing[start:start + self.descriptor.max_batch]
                vectors = self.provider.fetch(batch)
                if len(vectors) != len(batch):
                    raise ProviderUnavailable(self.descriptor.endpoint)
                for text, vec in zip(batch, vectors):
                    resolved[text] = vec
                    if self.cache is not None:
                        self.cache.put(self.descriptor.encoder_id, text, vec)
        return [EmbeddingVector(values=resolved[t], dim=self.descriptor.dim,
                                encoder_id=self.descriptor.encoder_id) for t in texts]

    def similarity_matrix(self, pred_steps: Sequence[str],
                          ref_steps: Sequence[str]) -> SimilarityMatrix:
        """Cosine similarity of every (predicted, reference) step pair.

        Zero vectors contribute similarity 0 rather than aborting the run.
        """
        if not pred_steps or not ref_steps:
            raise EmptyInput("similarity_matrix requires non-empty step lists")
        vectors = self.embed(list(pred_steps) + list(ref_steps))
        mat = np.stack([v.values.astype(np.float64) for v in vectors])
        norms = np.linalg.norm(mat, axis=1)
        zero = norms == 0.0
        safe_norms = np.where(zero, 1.0, norms)
        unit = mat / safe_norms[:, None]
        p = unit[:len(pred_steps)]
        r = unit[len(pred_steps):]
        sims = np.clip(p @ r.T, -1.0, 1.0)
        if zero.any():
            zp = zero[:len(pred_steps)]
            zr = zero[len(pred_steps):]
            sims[zp, :] = 0.0
            sims[:, zr] = 0.0
        return SimilarityMatrix(values=sims)

    def close(self) -> None:
        if self.cache is not None:
            self.cache.flush()
        if hasattr(self.provider, "close"):
            self.provider.close()

    def __enter__(self) -> "EmbeddingGateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
