"""Walkthrough of the selection core: token-coverage scores, greedy pool
construction, per-query ordering, and the label-balanced pick.

Runs offline in a couple of seconds:

    python3 demos/01_coverage_and_selection.py
"""

from ideolab import (
    FieldConfig,
    HashedProvider,
    balanced_select,
    bsr,
    build_candidate_pool,
    embed_many,
    order_for_query,
    set_coverage,
)
from ideolab.synthetic import synthetic_corpus

fields = FieldConfig()  # title only
provider = HashedProvider(dim=32)

train, test = synthetic_corpus(60, 3, seed=4)
embeddings = embed_many(train + test, fields, provider)

print("=== token coverage scores ===")
query = test[0]
q_emb = embeddings[query.id]
same_cluster = next(it for it in train if it.label == query.label)
other_cluster = next(it for it in train if it.label != query.label)
print(f"query title:          {query.title!r}")
print(f"same-cluster demo:    {bsr(q_emb, embeddings[same_cluster.id]):+.3f}  {same_cluster.title!r}")
print(f"other-cluster demo:   {bsr(q_emb, embeddings[other_cluster.id]):+.3f}  {other_cluster.title!r}")
print(f"set of both:          {set_coverage(q_emb, [embeddings[same_cluster.id], embeddings[other_cluster.id]]):+.3f}")
print(f"empty set convention: {set_coverage(q_emb, []):+.3f}")

print("\n=== offline candidate pool (greedy max coverage over a probe sample) ===")
pool = build_candidate_pool(train, embeddings, n=24, probe_size=40, seed=0)
print(f"selected {len(pool)} of {len(train)} training items; first five picks:")
for rank, entry in enumerate(pool.entries[:5], start=1):
    print(f"  rank {rank}: {entry.item_id}  label={entry.label.wire:<12} gain={entry.gain:.3f}")
counts = {lab.wire: sum(1 for e in pool.entries if e.label == lab) for lab in set(e.label for e in pool.entries)}
print(f"pool class mix: {counts}")

print("\n=== per-query ordering and balanced selection ===")
ordering = order_for_query(q_emb, pool, embeddings)
print("top of the coverage ranking for the query:")
labels = pool.labels()
for rank, entry in enumerate(ordering.ranked[:6], start=1):
    print(
        f"  rank {rank}: {entry.item_id}  label={labels[entry.item_id].wire:<12} "
        f"gain={entry.marginal_gain:.4f}  coverage={entry.cumulative_coverage:.4f}"
    )

demos = balanced_select(ordering, labels, k=4)
print(f"\nbalanced pick for k=4 (quotas split 2/1/1 in admission order):")
for member in demos.members:
    print(f"  rank {member.rank}: {member.item_id}  {member.label.wire}")
print(f"skipped by quota: {[(s.rank, s.label.wire) for s in demos.skipped[:5]]}")
print(f"fallback used: {demos.fallback_used}")
