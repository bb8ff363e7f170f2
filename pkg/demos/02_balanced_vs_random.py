"""Balanced coverage selection against the random baseline, scored with the
deterministic majority-echo mock and compared with a McNemar test.

    python3 demos/02_balanced_vs_random.py
"""

from ideolab import (
    FieldConfig,
    HashedProvider,
    LLMConfig,
    balanced_select,
    build_candidate_pool,
    classify_batch,
    delta,
    embed_many,
    mcnemar,
    mock_llm,
    order_for_query,
    random_select,
    render,
    score,
)
from ideolab.cli import derive_seed
from ideolab.synthetic import synthetic_corpus

fields = FieldConfig()
llm_cfg = LLMConfig()
provider = HashedProvider(dim=32)

train, test = synthetic_corpus(300, 150, seed=0)
embeddings = embed_many(train + test, fields, provider)
pool = build_candidate_pool(train, embeddings, n=120, probe_size=100, seed=0)
demo_items = {it.id: it for it in train}
labels = pool.labels()


def classify_with(select_mode, k=4):
    tasks = []
    for item in test:
        if select_mode == "balanced":
            ordering = order_for_query(embeddings[item.id], pool, embeddings)
            demos = balanced_select(ordering, labels, k)
        else:
            demos = random_select(pool, k, derive_seed(0, item.id), query_id=item.id)
        tasks.append((item.id, item.label, render(item, demos, demo_items, fields)))
    return classify_batch(tasks, llm_cfg, mock_llm("echo_majority"), config_hash=select_mode)


balanced_records = classify_with("balanced")
random_records = classify_with("random")

balanced_report = score(balanced_records)
random_report = score(random_records)
print("=== accuracy (majority-echo mock, k=4) ===")
print(f"balanced: {balanced_report.accuracy:.3f}  ci95={tuple(round(x, 3) for x in balanced_report.ci95)}")
print(f"random:   {random_report.accuracy:.3f}  ci95={tuple(round(x, 3) for x in random_report.ci95)}")

# McNemar wants matching config hashes out of the way; it pairs by query id
result = mcnemar(random_records, balanced_records)
print(f"\nMcNemar on discordant pairs: statistic={result.statistic:.2f} "
      f"p={result.p:.2e} {result.stars or '(ns)'}  (b={result.b}, c={result.c})")

print("\n=== per-class change, random -> balanced (percentage points) ===")
change = delta(random_report, balanced_report)
header = "            " + "".join(f"{w:>14}" for w in ("pred lib", "pred neu", "pred con"))
print(header)
for row_label, row in zip(("gold lib", "gold neu", "gold con"), change.matrix):
    print(f"{row_label:>10}  " + "".join(f"{value:>+14.1f}" for value in row))
