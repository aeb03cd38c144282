# %% Accurate matrix products by error-free splitting
#
# Entries spanning 30 decades make a plain float64 product lose digits.
# Splitting both factors into slices whose pairwise products are exact, then
# summing those products exactly, gives the correctly rounded result.
from fractions import Fraction

import numpy as np

from xtune.matrices import gen_random_scaled
from xtune.ozaki import COL_SPLIT, ROW_SPLIT, accurate_matmul, count_splits, split_matrix

a = gen_random_scaled(40, 0.3, 30, seed=1)
b = gen_random_scaled(40, 0.3, 30, seed=2)

sa = split_matrix(a, ROW_SPLIT)
sb = split_matrix(b, COL_SPLIT, inner_dim=40)
print("slices of A (sparse, dense, total):", count_splits(sa))
print("slices of B (sparse, dense, total):", count_splits(sb))

# %% Compare against rational arithmetic on one entry
c = accurate_matmul(a, b)
i, j = 3, 7
exact = sum((Fraction(float(a[i, k])) * Fraction(float(b[k, j])) for k in range(40)), Fraction(0))
print("exact, rounded once:", float(exact), " accurate_matmul:", c[i, j])

# %% Cancellation is where plain float64 fails outright
x = np.array([[1e20, 1.0, -1e20]])
y = np.ones((3, 1))
print("numpy x @ y          :", (x @ y)[0, 0])
print("accurate_matmul(x, y):", accurate_matmul(x, y)[0, 0])

# %% The slices add back to the source bit for bit
total = np.zeros_like(a)
for piece in sa.splits:
    total = total + piece
print("row slices reproduce A exactly:", np.array_equal(total, a))
