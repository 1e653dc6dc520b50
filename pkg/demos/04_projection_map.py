#!/usr/bin/env python3
"""Embedding-space structure, part 2: exact 2-D neighbour embedding.

Projects trained embeddings to the plane and tags points with the binary
malignancy class. Prints a coarse character map: if malignant nodules
cluster in embedding space, the M glyphs should form a blob.
"""

import numpy as np

from nodulecbir import HeadConfig, embed_all, generate_synthetic, train
from nodulecbir.tsne import TsneConfig, color_by_malignancy, tsne

dataset = generate_synthetic(n_nodules=150, feature_dim=32, noise_sigma=0.4, seed=9)
model, _ = train(dataset, HeadConfig(input_dim=32, hidden_dim=32, epochs=80, seed=9))
embeddings = embed_all(model, dataset)

config = TsneConfig(perplexity=25.0, iterations=500, seed=9)
print(f"projecting {len(embeddings)} embeddings "
      f"(perplexity {config.perplexity}, {config.iterations} iterations)...")
result = tsne(embeddings, config)
points = color_by_malignancy(result.points, dataset)

kl = result.kl_history
print(f"KL divergence: {kl[config.exaggeration_iters - 1]:.3f} after early "
      f"exaggeration -> {kl[-1]:.3f} at the end")

counts = {"benign": 0, "malignant": 0}
for p in points:
    counts[p.malignancy] += 1
print(f"classes: {counts['benign']} benign (.), {counts['malignant']} malignant (M)")

# ----------------------------------------------------------------------
# Coarse raster of the projection: one character cell per bucket.
# ----------------------------------------------------------------------
xs = np.array([p.x for p in points])
ys = np.array([p.y for p in points])
cols = np.clip(((xs - xs.min()) / (np.ptp(xs) + 1e-12) * 59).astype(int), 0, 59)
rows = np.clip(((ys - ys.min()) / (np.ptp(ys) + 1e-12) * 19).astype(int), 0, 19)
grid = [[" "] * 60 for _ in range(20)]
for p, r, c in zip(points, rows, cols):
    glyph = "M" if p.malignancy == "malignant" else "."
    # malignant wins the cell so small clusters stay visible
    if grid[r][c] != "M":
        grid[r][c] = glyph
print()
for row in grid:
    print("".join(row))
