"""
End-to-end archetype classification
===================================

Ratings -> autoencoder -> K-Means archetypes -> Hopfield memory -> softmax
head, on synthetic data with four planted taste groups.  Pass a MovieLens
``ratings.dat`` path as the first argument to run on real data instead.
"""

import sys

import numpy as np

from qhamrec.archetypes import extract_archetypes
from qhamrec.dataset import build_matrix, parse_ratings, read_ratings, split, synthetic_ratings
from qhamrec.hybrid import HybridConfig, HybridModel, default_noise_spec, evaluate, labels_for, train_hybrid
from qhamrec.nn import AutoencoderConfig, train_autoencoder

if len(sys.argv) > 1:
    records = read_ratings(sys.argv[1])
    ae_config, kmeans_seed = AutoencoderConfig(), 0
else:
    records = parse_ratings(synthetic_ratings(200, 120, seed=0))
    # tiny data needs more steps to train the autoencoder
    ae_config, kmeans_seed = AutoencoderConfig(latent_dim=6, epochs=100, lr=1e-2), 1

matrix = build_matrix(records)
splits = split(matrix, seed=0)
print(f"users={matrix.num_users} movies={matrix.num_movies} "
      f"train/val/test={splits.train.num_users}/{splits.validation.num_users}/{splits.test.num_users}")

ae, history = train_autoencoder(splits, config=ae_config)
print(f"autoencoder test MSE {history.test_loss:.4f}")

# Cluster raw rating vectors, then encode and polarise each centroid.
arch = extract_archetypes(matrix, ae.encoder, k=4, seed=kmeans_seed)
print("stored patterns:")
for p in arch.patterns.array.astype(int):
    print("   ", " ".join(f"{b:+d}" for b in p))
labels = dict(zip(matrix.user_ids.tolist(), arch.labels.tolist()))

model = HybridModel.build(ae.encoder, arch.patterns, seed=0)
model, hist = train_hybrid(model, splits, labels, config=HybridConfig(epochs=10))
print("validation accuracy per epoch:", np.round(hist.extra["accuracy"], 3).tolist())

# Same trained model, same evaluation targets, with and without noise.
y = labels_for(splits.test, labels)
for noise in (None, default_noise_spec(model.n, seed=0)):
    r = evaluate(model, splits.test.values, y, noise)
    print(f"{r.environment:6s} mse={r.mse:.4f} roc_auc={r.roc_auc:.4f} f1={r.f1:.4f} accuracy={r.accuracy:.4f}")
