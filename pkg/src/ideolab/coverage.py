"""Token-coverage scoring, offline candidate pool construction, and the
per-query coverage ordering consumed by balanced selection.

The coverage score of a candidate for a query is BertScore-recall: the
mean over query tokens of the maximum cosine similarity to any candidate
token. Its set-level extension takes the max over the union of a set's
tokens, with the empty set defined as -1 (the worst possible value), so
the first addition's gain equals score + 1 and greedy argmax over the
first pick coincides with plain score ranking.

With per-token running maxima initialized to -1, the set score is simply
the mean of the running maxima, which makes the greedy loops incremental:
folding in a member is an elementwise ``maximum``. The set function is
monotone and submodular, so greedy selection carries the usual (1 - 1/e)
guarantee relative to the optimal set of the same size and lazy
(heap-ordered) evaluation selects exactly what naive greedy selects.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import ContentItem, Ideology
from .embedding import TokenEmbeddingSet

EMPTY_SET_COVERAGE = -1.0
GAIN_FLOOR = 1e-9

ORDERING_MODES = ("set_bsr_greedy", "independent_bsr")


class CoverageError(ValueError):
    """Raised for dimension mismatches, empty pools, missing embeddings."""


def _check_dim(query: TokenEmbeddingSet, cand: TokenEmbeddingSet) -> None:
    if query.dim != cand.dim:
        raise CoverageError(
            f"dimension mismatch: query {query.item_id!r} has dim {query.dim}, "
            f"candidate {cand.item_id!r} has dim {cand.dim}"
        )


def token_max_sims(query: TokenEmbeddingSet, cand: TokenEmbeddingSet) -> np.ndarray:
    """Per-query-token best cosine similarity against a candidate's tokens."""
    _check_dim(query, cand)
    return (query.token_vectors @ cand.token_vectors.T).max(axis=1)


def bsr(query: TokenEmbeddingSet, cand: TokenEmbeddingSet) -> float:
    """BertScore-recall of ``cand`` covering ``query``; value in [-1, 1]."""
    return float(token_max_sims(query, cand).mean())


def set_coverage(query: TokenEmbeddingSet, members: Sequence[TokenEmbeddingSet]) -> float:
    """Coverage of ``query`` by the union of all members' tokens.

    Equals :func:`bsr` for a single member; the empty set scores -1.
    """
    cur = np.full(query.n_tokens, EMPTY_SET_COVERAGE)
    for member in members:
        np.maximum(cur, token_max_sims(query, member), out=cur)
    return float(cur.mean())


def _max_sim_matrix(
    query_tokens: np.ndarray,
    token_sets: Sequence[np.ndarray],
    max_chunk_elements: int = 8_000_000,
) -> np.ndarray:
    """Matrix M with M[i, j] = max over set j's tokens of (query token i . token).

    Candidate token sets are processed in groups so the intermediate
    similarity block stays below ``max_chunk_elements`` floats.
    """
    n_q = query_tokens.shape[0]
    out = np.empty((n_q, len(token_sets)))
    budget = max(1024, max_chunk_elements // max(n_q, 1))
    start = 0
    while start < len(token_sets):
        stop = start
        total = 0
        while stop < len(token_sets) and (total == 0 or total + len(token_sets[stop]) <= budget):
            total += len(token_sets[stop])
            stop += 1
        chunk = token_sets[start:stop]
        stacked = np.concatenate(chunk, axis=0)
        sims = query_tokens @ stacked.T
        offsets = np.cumsum([0] + [len(t) for t in chunk[:-1]])
        out[:, start:stop] = np.maximum.reduceat(sims, offsets, axis=1)
        start = stop
    return out


def probe_indices(n_items: int, probe_size: int, seed: int) -> np.ndarray:
    """Seeded probe sample used by pool construction (sorted indices)."""
    rng = np.random.default_rng(seed)
    size = min(probe_size, n_items)
    return np.sort(rng.choice(n_items, size=size, replace=False))


@dataclass
class PoolEntry:
    item_id: str
    label: Ideology
    gain: float


@dataclass
class CandidatePool:
    """Ordered candidate entries in greedy construction order."""

    entries: list[PoolEntry]
    build_config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.item_id for e in self.entries]

    def labels(self) -> dict[str, Ideology]:
        return {e.item_id: e.label for e in self.entries}

    def save(self, path, extra_header: Optional[dict] = None) -> None:
        """Write header line with build_config, then one row per entry."""
        header = dict(extra_header or {})
        header["build_config"] = self.build_config
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rank, entry in enumerate(self.entries, start=1):
                row = {
                    "id": entry.item_id,
                    "label": entry.label.wire,
                    "rank": rank,
                    "gain": entry.gain,
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CandidatePool":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise CoverageError(f"{path}: empty pool file")
        header = json.loads(lines[0])
        if "build_config" not in header:
            raise CoverageError(f"{path}: first line must be a build_config header")
        rows = [json.loads(line) for line in lines[1:]]
        rows.sort(key=lambda r: r["rank"])
        entries = [
            PoolEntry(row["id"], Ideology.from_string(row["label"]), float(row["gain"]))
            for row in rows
        ]
        return cls(entries=entries, build_config=header["build_config"])


def _resolve(
    items: Sequence[ContentItem] | Sequence[str],
    embeddings: Mapping[str, TokenEmbeddingSet],
) -> list[TokenEmbeddingSet]:
    ids = [it.id if isinstance(it, ContentItem) else it for it in items]
    missing = [i for i in ids if i not in embeddings]
    if missing:
        raise CoverageError(f"missing embeddings for {len(missing)} item(s), e.g. {missing[:3]}")
    return [embeddings[i] for i in ids]


def build_candidate_pool(
    train: Sequence[ContentItem],
    embeddings: Mapping[str, TokenEmbeddingSet],
    n: int,
    probe_size: int = 2000,
    seed: int = 0,
) -> CandidatePool:
    """Greedy facility-location pool: repeatedly add the candidate with the
    largest total coverage gain over a seeded probe sample of the training
    set itself. Ties break toward the lower input index.

    Uses lazy greedy re-evaluation: stale heap gains are upper bounds by
    submodularity, so the selected sequence matches naive greedy exactly.
    """
    if n <= 0:
        raise CoverageError(f"pool size must be positive, got {n}")
    if n > len(train):
        raise CoverageError(f"pool size {n} exceeds training set size {len(train)}")
    unlabeled = [it.id for it in train if it.label is None]
    if unlabeled:
        raise CoverageError(f"pool candidates must be labeled, e.g. {unlabeled[:3]}")
    if len({it.id for it in train}) != len(train):
        raise CoverageError("training items must have unique ids")
    cand_embs = _resolve(train, embeddings)
    dims = {e.dim for e in cand_embs}
    if len(dims) > 1:
        raise CoverageError(f"inconsistent embedding dims: {sorted(dims)}")

    p_idx = probe_indices(len(train), probe_size, seed)
    probe_embs = [cand_embs[i] for i in p_idx]
    probe_tokens = np.concatenate([p.token_vectors for p in probe_embs], axis=0)
    # each probe contributes the mean over its tokens, so weight per token
    weights = np.concatenate([np.full(p.n_tokens, 1.0 / p.n_tokens) for p in probe_embs])

    token_sets = [e.token_vectors for e in cand_embs]
    sims = _max_sim_matrix(probe_tokens, token_sets)

    cur = np.full(probe_tokens.shape[0], EMPTY_SET_COVERAGE)
    first_gains = (sims - cur[:, None]).T @ weights
    # heap entries: (-gain, candidate index, iteration the gain was computed at)
    heap = [(-first_gains[j], j, 0) for j in range(len(train))]
    heapq.heapify(heap)
    selected = np.zeros(len(train), dtype=bool)

    entries: list[PoolEntry] = []
    for iteration in range(1, n + 1):
        while True:
            neg_gain, j, computed_at = heapq.heappop(heap)
            if selected[j]:
                continue
            if computed_at == iteration:
                best, best_gain = j, -neg_gain
                break
            fresh = float((np.maximum(sims[:, j], cur) - cur) @ weights)
            heapq.heappush(heap, (-fresh, j, iteration))
        selected[best] = True
        np.maximum(cur, sims[:, best], out=cur)
        entries.append(PoolEntry(train[best].id, train[best].label, float(best_gain)))

    return CandidatePool(
        entries=entries,
        build_config={"pool_size": n, "probe_size": probe_size, "seed": seed},
    )


@dataclass
class RankedEntry:
    item_id: str
    marginal_gain: float
    cumulative_coverage: float


@dataclass
class QueryOrdering:
    """Every pool entry exactly once, best coverage first."""

    query_id: str
    ranked: list[RankedEntry]


def order_for_query(
    query: TokenEmbeddingSet,
    pool: CandidatePool,
    embeddings: Mapping[str, TokenEmbeddingSet],
    mode: str = "set_bsr_greedy",
) -> QueryOrdering:
    """Rank the whole pool for one query.

    ``set_bsr_greedy`` ranks by greedy marginal coverage gain; once the
    best remaining gain drops to the floor (1e-9), the rest is appended
    in descending independent score order. ``independent_bsr`` skips the
    greedy phase entirely. Ties break toward the lower pool index in both
    modes, and the recorded gains are the true sequential marginal gains
    along the emitted order, so cumulative coverage is nondecreasing.
    """
    if mode not in ORDERING_MODES:
        raise CoverageError(f"mode must be one of {ORDERING_MODES}, got {mode!r}")
    if not pool.entries:
        raise CoverageError("cannot order an empty pool")
    member_embs = _resolve(pool.ids(), embeddings)
    for emb in member_embs:
        _check_dim(query, emb)
    sims = _max_sim_matrix(query.token_vectors, [e.token_vectors for e in member_embs])
    n_pool = len(pool.entries)
    scores = sims.mean(axis=0)

    order: list[int] = []
    cur = np.full(query.n_tokens, EMPTY_SET_COVERAGE)
    ranked: list[RankedEntry] = []

    def emit(j: int) -> None:
        before = cur.mean()
        np.maximum(cur, sims[:, j], out=cur)
        after = cur.mean()
        ranked.append(
            RankedEntry(pool.entries[j].item_id, float(after - before), float(after))
        )

    remaining = np.ones(n_pool, dtype=bool)
    if mode == "set_bsr_greedy":
        while remaining.any():
            gains = (np.maximum(sims, cur[:, None]) - cur[:, None]).mean(axis=0)
            gains[~remaining] = -np.inf
            best = int(np.argmax(gains))  # first max = lowest index on ties
            if gains[best] <= GAIN_FLOOR:
                break
            remaining[best] = False
            emit(best)
    # fallback for exhausted gains, and the whole ordering in independent mode:
    # descending independent score, stable sort keeps lower index first on ties
    for j in np.argsort(-scores, kind="stable"):
        if remaining[j]:
            emit(int(j))
    return QueryOrdering(query_id=query.item_id, ranked=ranked)
