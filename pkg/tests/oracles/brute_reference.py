"""Reference exhaustive assignment search on a tiny one-block instance.

Enumerates all 2^4 labelings, solves each joint system exactly, and
reports the global minimum.  Regenerates the constants frozen into
test_oracle.py.  Depends on numpy only.
"""
import itertools

import numpy as np

N, T = 4, 3
D_BLOCK = 2
K = 2
SEED = 1905

rng = np.random.default_rng(SEED)
x = rng.normal(size=(N, T, D_BLOCK))
theta = rng.normal(size=(D_BLOCK, K))
labels_true = rng.integers(0, K, size=N)
y = np.einsum("ntp,np->nt", x, theta[:, labels_true].T) + 0.2 * rng.normal(size=(N, T))

best_risk = np.inf
best_labels = None
risks = []
for combo in itertools.product(range(K), repeat=N):
    total = 0.0
    for a in range(K):
        rows = [i for i in range(N) if combo[i] == a]
        if not rows:
            continue
        xs = np.concatenate([x[i] for i in rows])
        ys = np.concatenate([y[i] for i in rows])
        coef, *_ = np.linalg.lstsq(xs, ys, rcond=None)
        r = ys - xs @ coef
        total += float(r @ r)
    risk = total / (N * T)
    risks.append(risk)
    if risk < best_risk - 1e-15:
        best_risk = risk
        best_labels = combo

n_min = sum(1 for r in risks if r <= best_risk + 1e-12)
print("best_risk =", best_risk)
print("best_labels =", list(best_labels))
print("n_enumerated =", len(risks))
print("n_minimizers =", n_min)
