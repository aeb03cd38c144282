# %% Threshold incomplete Cholesky and preconditioned CG on a layered heat problem
#
# A slab of low conductivity in the middle of the cube makes the system badly
# conditioned.  More fill (higher m) and a lower drop threshold t give a
# stronger preconditioner at a higher setup cost.
from xtune.piccg import IcParams, p3d_generate, piccg_solve

prob = p3d_generate(16, lambda1=1.0, lambda2=1e-4)
print("order", prob.order, "nonzeros", prob.a.nnz, "slab", prob.layer)

piccg_solve(prob.a, prob.b)     # first call compiles the kernels

print(f"{'m':>2} {'t':>7} {'nnz(U)':>7} {'iters':>6} {'seconds':>8}")
for m in (0, 1, 2):
    for t in (0.0, 0.005, 0.02):
        _, rep = piccg_solve(prob.a, prob.b, IcParams(m, t), tol=1e-8)
        print(f"{m:>2} {t:>7.3f} {rep.nnz_u:>7d} {rep.iterations:>6d} {rep.elapsed_seconds:>8.4f}")
