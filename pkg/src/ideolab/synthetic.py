"""Seeded synthetic corpora for offline experiments.

Items fall into three clusters, one per ideology label, each with its own
disjoint vocabulary; titles are random draws from the cluster vocabulary
with an optional sprinkling of shared filler words. Because the hashed
embedding provider assigns one fixed vector per distinct word, items from
the same cluster overlap heavily in token space and coverage selection
has real structure to find. Everything is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np

from .corpus import ContentItem, Ideology

CLUSTER_VOCAB_SIZE = 30
SHARED_VOCAB_SIZE = 12


def _vocabulary() -> tuple[list[list[str]], list[str]]:
    clusters = [
        [f"topic{c}word{i:02d}" for i in range(CLUSTER_VOCAB_SIZE)] for c in range(3)
    ]
    shared = [f"fillerword{i:02d}" for i in range(SHARED_VOCAB_SIZE)]
    return clusters, shared


def synthetic_corpus(
    n_train: int,
    n_test: int,
    seed: int = 0,
    words_per_title: int = 6,
    shared_word_rate: float = 0.15,
    with_sources: bool = False,
) -> tuple[list[ContentItem], list[ContentItem]]:
    """Build (train, test) item lists with balanced cluster labels.

    ``shared_word_rate`` is the chance each title position draws from the
    shared filler vocabulary instead of the cluster vocabulary, which
    gives clusters a controlled amount of overlap.
    """
    rng = np.random.default_rng(seed)
    clusters, shared = _vocabulary()

    def make_items(count: int, prefix: str) -> list[ContentItem]:
        items = []
        for i in range(count):
            label = Ideology(i % 3)
            words = []
            for _ in range(words_per_title):
                if rng.random() < shared_word_rate:
                    words.append(shared[rng.integers(len(shared))])
                else:
                    vocab = clusters[int(label)]
                    words.append(vocab[rng.integers(len(vocab))])
            source = f"outlet{int(label)}{int(rng.integers(4))}" if with_sources else None
            items.append(
                ContentItem(
                    id=f"{prefix}-{i:05d}",
                    title=" ".join(words),
                    source=source,
                    label=label,
                )
            )
        return items

    return make_items(n_train, "train"), make_items(n_test, "test")


def cluster_sentence_embeddings(
    items: list[ContentItem],
    dim: int = 384,
    seed: int = 0,
    spread: float = 0.15,
) -> dict[str, np.ndarray]:
    """Well-separated sentence vectors per cluster, for baseline training.

    Each label gets a fixed random unit center; items get the center plus
    Gaussian noise of the given spread, renormalized.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((3, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    out = {}
    for item in items:
        vec = centers[int(item.label)] + spread * rng.standard_normal(dim)
        out[item.id] = vec / np.linalg.norm(vec)
    return out
