"""Reference sandwich covariance computed with explicit loops.

Builds the Jacobian M-hat by double loop and the long-run score matrix
Omega-hat by the quadruple loop over units and period pairs, at the true
coefficients of a frozen two-block instance.  Regenerates the constants
frozen into test_inference.py.  Depends on numpy only.
"""
import numpy as np

N, T = 12, 7
DIMS = (2, 1)
COUNTS = (2, 2)
SEED = 2718

rng = np.random.default_rng(SEED)
p = sum(DIMS)
starts = (0, 2)
B = len(DIMS)

theta = [rng.normal(size=(d, k)) for d, k in zip(DIMS, COUNTS)]
labels = np.column_stack([rng.integers(0, k, size=N) for k in COUNTS])
x = rng.normal(size=(N, T, p))
comp = np.empty((N, p))
for i in range(N):
    for l, d in enumerate(DIMS):
        comp[i, starts[l]:starts[l] + d] = theta[l][:, labels[i, l]]
y = np.einsum("ntp,np->nt", x, comp) + 0.4 * rng.normal(size=(N, T))

offsets = []
off = 0
for d, k in zip(DIMS, COUNTS):
    offsets.append(off)
    off += d * k
D = off

def coord(l, a, j):
    return offsets[l] + a * DIMS[l] + j

# per-observation expanded regressor: x-tilde scatters x^l into (l, c_il) coords
xt = np.zeros((N, T, D))
for i in range(N):
    for t in range(T):
        for l, d in enumerate(DIMS):
            a = labels[i, l]
            for j in range(d):
                xt[i, t, coord(l, a, j)] = x[i, t, starts[l] + j]

resid = y - np.einsum("ntp,np->nt", x, comp)

m_hat = np.zeros((D, D))
for i in range(N):
    for t in range(T):
        m_hat += np.outer(xt[i, t], xt[i, t])
m_hat /= N * T

omega_hat = np.zeros((D, D))
for i in range(N):
    for t in range(T):
        for s in range(T):
            omega_hat += resid[i, t] * resid[i, s] * np.outer(xt[i, t], xt[i, s])
omega_hat /= N * T

m_inv = np.linalg.inv(m_hat)
v_hat = m_inv @ omega_hat @ m_inv
se = np.sqrt(np.diag(v_hat) / (N * T))

np.set_printoptions(floatmode="unique")
print("sym_gap_m =", float(np.max(np.abs(m_hat - m_hat.T))))
print("sym_gap_omega =", float(np.max(np.abs(omega_hat - omega_hat.T))))
print("eig_min_omega =", float(np.linalg.eigvalsh(omega_hat).min()))
print("m_hat_diag =", repr(np.diag(m_hat)))
print("omega_hat_diag =", repr(np.diag(omega_hat)))
print("se =", repr(se))
