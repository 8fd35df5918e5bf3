"""Writes separation_fixture.json: Gaussian clusters around random unit
prototypes (10 classes, sigma 0.3) plus a few unlabeled vectors, with
C_inter and C_intra computed here with numpy.

    python make_separation_fixture.py > separation_fixture.json
"""

import json

import numpy as np

CLASSES, PER_CLASS, UNLABELED, DIM, SIGMA = 10, 6, 5, 12, 0.3

rng = np.random.default_rng(20240611)
protos = rng.standard_normal((CLASSES, DIM))
protos /= np.linalg.norm(protos, axis=1, keepdims=True)

vectors, labels = [], []
for c in range(CLASSES):
    for _ in range(PER_CLASS):
        vectors.append(protos[c] + SIGMA * rng.standard_normal(DIM))
        labels.append(c)
for _ in range(UNLABELED):
    vectors.append(rng.standard_normal(DIM))
    labels.append(-1)
X = np.array(vectors)
y = np.array(labels)

# every vector, labeled or not, defines the centre
Xc = X - X.mean(axis=0)
unit = Xc / np.linalg.norm(Xc, axis=1, keepdims=True)

intra = []
centroids = []
for c in range(CLASSES):
    U = unit[y == c]
    G = U @ U.T
    n = len(U)
    intra.append((G.sum() - np.trace(G)) / (n * (n - 1)))
    m = Xc[y == c].mean(axis=0)
    centroids.append(m / np.linalg.norm(m))
C = np.array(centroids)
S = C @ C.T
iu = np.triu_indices(CLASSES, k=1)

print(json.dumps({
    "vectors": X.tolist(),
    "labels": y.tolist(),
    "c_inter": float(100 * np.mean((1 - S[iu]) / 2)),
    "c_intra": float(100 * max(0.0, np.mean(intra))),
}))
