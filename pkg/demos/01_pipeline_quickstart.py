#!/usr/bin/env python3
"""End-to-end walkthrough: synthetic data, training, embeddings, a query.

Run from anywhere: python3 demos/01_pipeline_quickstart.py
"""

import numpy as np

from nodulecbir import (
    HeadConfig,
    build_index,
    embed_all,
    generate_synthetic,
    query_top_k,
    train,
)

# ----------------------------------------------------------------------
# 1. A dataset. Real use ingests backbone features plus reader ratings
#    from files; here the generator plants a recoverable rating signal.
# ----------------------------------------------------------------------
dataset = generate_synthetic(n_nodules=300, feature_dim=64, noise_sigma=0.5, seed=7)
print(f"dataset: {len(dataset)} nodules, feature dim {dataset.feature_dim}")
first = dataset.records[0]
print(f"first nodule {first.nodule_id}: {len(first.annotations)} reader ratings,")
for annotation in first.annotations:
    print("   ", np.round(annotation.values, 2))
print("consensus:", np.round(first.consensus().values, 2), "->", first.malignancy)

# ----------------------------------------------------------------------
# 2. Train the three-layer head on normalized consensus ratings.
# ----------------------------------------------------------------------
config = HeadConfig(input_dim=64, epochs=60, seed=7)
model, report = train(dataset, config)
print(f"\ntrained {report.epochs_run} epochs, "
      f"loss {report.epoch_losses[0]:.4f} -> {report.final_loss:.4f}")

# ----------------------------------------------------------------------
# 3. Embeddings live in the middle layer: one 10-D vector per nodule.
# ----------------------------------------------------------------------
embeddings = embed_all(model, dataset)
print(f"extracted {len(embeddings)} embeddings of dimension "
      f"{embeddings[0].values.shape[0]}")

# ----------------------------------------------------------------------
# 4. Retrieval: the four nearest cases for one query nodule, excluding
#    the query itself (and optionally its scan).
# ----------------------------------------------------------------------
index = build_index(embeddings, dataset)
query = embeddings[17]
result = query_top_k(index, query, k=4, exclude={query.nodule_id})
query_record = dataset.get(query.nodule_id)
print(f"\nquery {query.nodule_id} "
      f"({query_record.malignancy}, consensus {np.round(query_record.consensus().values, 2)})")
print(f"{'rank':>4}  {'neighbor':<12} {'distance':>9}  consensus (raw)          class")
for rank, (nodule_id, dist) in enumerate(result.neighbors, start=1):
    entry = index.entry(nodule_id)
    print(f"{rank:>4}  {nodule_id:<12} {dist:>9.4f}  "
          f"{np.round(entry.consensus.values, 2)}  {entry.malignancy}")
print("\nneighbors with similar ratings mean the embedding space preserves "
      "the semantic signal.")
