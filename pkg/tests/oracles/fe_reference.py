"""Reference within-demeaning and fixed-effect recovery by direct loops.

Regenerates the constants frozen into test_transforms.py.  Depends on
numpy only.
"""
import numpy as np

N, T = 8, 6
P = 3
SEED = 314

rng = np.random.default_rng(SEED)
x = rng.normal(size=(N, T, P))
theta = np.array([0.8, -1.1, 0.4])
alpha = rng.normal(size=N) * 3.0
y = x @ theta + alpha[:, None] + 0.3 * rng.normal(size=(N, T))

y_means = np.empty(N)
x_means = np.empty((N, P))
yd = np.empty_like(y)
xd = np.empty_like(x)
for i in range(N):
    y_means[i] = sum(y[i, t] for t in range(T)) / T
    for j in range(P):
        x_means[i, j] = sum(x[i, t, j] for t in range(T)) / T
    for t in range(T):
        yd[i, t] = y[i, t] - y_means[i]
        for j in range(P):
            xd[i, t, j] = x[i, t, j] - x_means[i, j]

xs = xd.reshape(N * T, P)
ys = yd.reshape(N * T)
coef, *_ = np.linalg.lstsq(xs, ys, rcond=None)
alpha_hat = np.array([y_means[i] - x_means[i] @ coef for i in range(N)])

np.set_printoptions(floatmode="unique")
print("coef =", repr(coef))
print("alpha_hat =", repr(alpha_hat))
print("risk =", float(np.mean((ys - xs @ coef) ** 2)))
