"""Token and sentence embeddings behind a pluggable provider interface.

The coverage math never talks to a model runtime: it consumes
:class:`TokenEmbeddingSet` values produced here. Providers must be
deterministic (same text, same vectors). Three kinds ship:

- ``precomputed_file``: a JSONL file of records keyed by (id, fields_hash)
- ``http_service``: POST {"text": ...} to an embedding endpoint
- ``hashed``: in-process, hash-seeded random token vectors; no model, no
  network, fully deterministic across processes. Useful for offline runs,
  demos, and tests.

A filesystem cache stores one file per (id, fields_hash) whose content is
identical to a precomputed-file JSONL record.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .corpus import ContentItem
from .prompting import FieldConfig, render_fields_text

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-4


class EmbeddingError(ValueError):
    """Raised for malformed embeddings or violated embedding invariants."""


class DimensionMismatchError(EmbeddingError):
    """Provider returned vectors of a different dimension than declared."""


class ProviderUnreachableError(RuntimeError):
    """Transient provider failure; safe to retry."""


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Normalize rows (or a single vector) to unit L2 norm."""
    arr = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms < 1e-12):
        raise EmbeddingError("cannot normalize a zero vector")
    return arr / norms


@dataclass
class TokenEmbeddingSet:
    """Per-item L2-normalized token vectors plus one sentence vector."""

    item_id: str
    dim: int
    token_vectors: np.ndarray
    sentence_vector: np.ndarray

    def __post_init__(self) -> None:
        self.token_vectors = np.asarray(self.token_vectors, dtype=np.float64)
        self.sentence_vector = np.asarray(self.sentence_vector, dtype=np.float64)
        if self.token_vectors.ndim != 2 or self.token_vectors.shape[0] < 1:
            raise EmbeddingError(f"{self.item_id}: need at least one token vector")
        if self.token_vectors.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"{self.item_id}: token vectors have dim {self.token_vectors.shape[1]}, "
                f"expected {self.dim}"
            )
        if self.sentence_vector.shape != (self.dim,):
            raise DimensionMismatchError(
                f"{self.item_id}: sentence vector has shape {self.sentence_vector.shape}, "
                f"expected ({self.dim},)"
            )
        norms = np.linalg.norm(self.token_vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
            raise EmbeddingError(f"{self.item_id}: token vectors are not L2-normalized")

    @classmethod
    def from_raw(cls, item_id: str, tokens, sentence) -> "TokenEmbeddingSet":
        """Build from possibly unnormalized vectors, normalizing locally."""
        tokens = l2_normalize(np.atleast_2d(np.asarray(tokens, dtype=np.float64)))
        sentence = l2_normalize(np.asarray(sentence, dtype=np.float64))
        return cls(item_id=item_id, dim=tokens.shape[1], token_vectors=tokens, sentence_vector=sentence)

    @property
    def n_tokens(self) -> int:
        return self.token_vectors.shape[0]

    def to_record(self, fields_hash: str) -> dict:
        return {
            "id": self.item_id,
            "fields_hash": fields_hash,
            "dim": self.dim,
            "tokens": self.token_vectors.tolist(),
            "sentence": self.sentence_vector.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "TokenEmbeddingSet":
        return cls(
            item_id=record["id"],
            dim=int(record["dim"]),
            token_vectors=np.asarray(record["tokens"], dtype=np.float64),
            sentence_vector=np.asarray(record["sentence"], dtype=np.float64),
        )


def fields_hash(config: FieldConfig) -> str:
    """Stable digest of the field configuration used to render the text.

    Part of every cache key, so changing the field configuration can
    never surface embeddings computed for a different one.
    """
    return hashlib.sha256(f"fields:{config.key()}".encode("utf-8")).hexdigest()[:12]


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashedProvider:
    """Deterministic in-process provider: one fixed random unit vector per
    distinct lowercase token, seeded from a hash of the token itself.

    Not a semantic embedder. Items sharing words share token vectors,
    which is exactly what coverage selection needs to be exercised
    offline and reproducibly.
    """

    kind = "hashed"

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ValueError("dim must be at least 2")
        self.dim = dim
        self._token_cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _token_vector(self, token: str) -> np.ndarray:
        with self._lock:
            vec = self._token_cache.get(token)
        if vec is not None:
            return vec
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        vec = rng.standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        with self._lock:
            self._token_cache[token] = vec
        return vec

    def fetch(self, item_id: str, fields_hash: str, text: str):
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise EmbeddingError(f"{item_id}: text tokenized to nothing")
        token_vecs = np.stack([self._token_vector(t) for t in tokens])
        mean = token_vecs.mean(axis=0)
        if np.linalg.norm(mean) < 1e-12:
            mean = token_vecs[0]
        return token_vecs, mean


class PrecomputedFileProvider:
    """Embeddings read from a JSONL file of (id, fields_hash) records."""

    kind = "precomputed_file"

    def __init__(self, path, dim: int):
        self.dim = dim
        self.path = Path(path)
        self._records: dict[tuple[str, str], dict] = {}
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                if int(record["dim"]) != dim:
                    raise DimensionMismatchError(
                        f"{self.path}:{lineno}: file declares dim {record['dim']}, "
                        f"provider expects {dim}"
                    )
                self._records[(record["id"], record["fields_hash"])] = record

    def fetch(self, item_id: str, fields_hash: str, text: str):
        record = self._records.get((item_id, fields_hash))
        if record is None:
            raise EmbeddingError(
                f"no precomputed embedding for id={item_id!r} fields_hash={fields_hash!r}"
            )
        return np.asarray(record["tokens"], dtype=np.float64), np.asarray(
            record["sentence"], dtype=np.float64
        )


class HttpProvider:
    """Embeddings fetched from an HTTP service: POST {"text": ...}.

    The response body mirrors a precomputed-file record minus the id:
    {"dim": int, "tokens": [[...], ...], "sentence": [...]}.
    """

    kind = "http_service"

    def __init__(self, url: str, dim: int, timeout: float = 30.0, retries: int = 3):
        self.url = url
        self.dim = dim
        self.timeout = timeout
        self.retries = retries

    def fetch(self, item_id: str, fields_hash: str, text: str):
        import requests

        last_error: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(self.url, json={"text": text}, timeout=self.timeout)
                if resp.status_code >= 500:
                    raise ProviderUnreachableError(f"HTTP {resp.status_code} from {self.url}")
                resp.raise_for_status()
                body = resp.json()
                break
            except (requests.ConnectionError, requests.Timeout, ProviderUnreachableError) as exc:
                last_error = exc
                if attempt >= self.retries:
                    raise ProviderUnreachableError(str(exc)) from exc
                time.sleep(min(2.0**attempt, 10.0))
        else:  # pragma: no cover
            raise ProviderUnreachableError(str(last_error))
        if int(body["dim"]) != self.dim:
            raise DimensionMismatchError(
                f"{item_id}: service returned dim {body['dim']}, expected {self.dim}"
            )
        return np.asarray(body["tokens"], dtype=np.float64), np.asarray(
            body["sentence"], dtype=np.float64
        )


class EmbeddingCache:
    """Filesystem cache, one file per (id, fields_hash).

    File content is a single precomputed-style JSONL record, so a cache
    directory can be concatenated into a precomputed embeddings file.
    Corrupt entries are treated as misses, evicted, and logged. Access is
    internally synchronized; writes are atomic (write-then-rename).
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, item_id: str, fields_hash: str) -> Path:
        safe_id = hashlib.sha256(item_id.encode("utf-8")).hexdigest()[:20]
        return self.directory / f"{safe_id}-{fields_hash}.json"

    def get(self, item_id: str, fields_hash: str) -> Optional[TokenEmbeddingSet]:
        path = self._path(item_id, fields_hash)
        with self._lock:
            try:
                raw = path.read_text(encoding="utf-8")
            except FileNotFoundError:
                return None
            try:
                record = json.loads(raw)
                if record["id"] != item_id or record["fields_hash"] != fields_hash:
                    raise EmbeddingError("cache entry key mismatch")
                return TokenEmbeddingSet.from_record(record)
            except (json.JSONDecodeError, KeyError, TypeError, EmbeddingError) as exc:
                logger.warning("evicting corrupt cache entry %s: %s", path.name, exc)
                path.unlink(missing_ok=True)
                return None

    def put(self, embedding: TokenEmbeddingSet, fields_hash: str) -> None:
        path = self._path(embedding.item_id, fields_hash)
        payload = json.dumps(embedding.to_record(fields_hash), sort_keys=True) + "\n"
        with self._lock:
            tmp = path.with_suffix(f".tmp{os.getpid()}")
            tmp.write_text(payload, encoding="utf-8")
            os.replace(tmp, path)


def embed_item(
    item: ContentItem,
    fields: FieldConfig,
    provider,
    cache: Optional[EmbeddingCache] = None,
) -> TokenEmbeddingSet:
    """Embed one item's rendered field text, consulting the cache first.

    Vectors are normalized locally regardless of what the provider
    returns. Special/padding tokens are the provider's responsibility to
    exclude; none of the shipped providers emit them.
    """
    fh = fields_hash(fields)
    if cache is not None:
        hit = cache.get(item.id, fh)
        if hit is not None:
            return hit
    text = render_fields_text(item, fields)
    tokens, sentence = provider.fetch(item.id, fh, text)
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.float64))
    if tokens.shape[0] < 1 or tokens.size == 0:
        raise EmbeddingError(f"{item.id}: provider returned no token vectors")
    if tokens.shape[1] != provider.dim:
        raise DimensionMismatchError(
            f"{item.id}: provider returned dim {tokens.shape[1]}, expected {provider.dim}"
        )
    embedding = TokenEmbeddingSet.from_raw(item.id, tokens, sentence)
    if cache is not None:
        cache.put(embedding, fh)
    return embedding


def embed_many(
    items: Iterable[ContentItem],
    fields: FieldConfig,
    provider,
    cache: Optional[EmbeddingCache] = None,
    max_workers: int = 8,
) -> dict[str, TokenEmbeddingSet]:
    """Embed items with bounded fan-out; returns id -> embedding.

    Results are keyed, so the mapping is independent of completion order.
    """
    items = list(items)
    out: dict[str, TokenEmbeddingSet] = {}
    if not items:
        return out
    if max_workers <= 1 or len(items) == 1:
        for item in items:
            out[item.id] = embed_item(item, fields, provider, cache)
        return out
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(embed_item, item, fields, provider, cache): item.id for item in items}
        for future, item_id in futures.items():
            out[item_id] = future.result()
    return out


def load_provider(spec: str, dim: int):
    """Build a provider from a CLI-style spec string.

    "hashed", "file:<path>", or "http:<url>" (also accepts full
    http(s):// URLs directly).
    """
    if spec == "hashed":
        return HashedProvider(dim=dim)
    if spec.startswith("file:"):
        return PrecomputedFileProvider(spec[len("file:") :], dim=dim)
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpProvider(spec, dim=dim)
    if spec.startswith("http:"):
        return HttpProvider(spec[len("http:") :], dim=dim)
    raise ValueError(f"unknown embedding provider spec: {spec!r}")
