# %% Nine CPU variants of the same product
#
# Slice products can run as dense GEMM, as CRS or ELL sparse kernels, or as
# blocked multi-right-hand-side kernels.  All give identical bits; only the
# time differs, which is what the auto-tuner learns to predict.
import numpy as np

from xtune.data import BenchmarkConfig, benchmark_variants, extract_matmul_features
from xtune.kernels import EXECUTABLE, variant
from xtune.matrices import gen_identity_mix, gen_random_scaled

cases = {
    "dense, wide range": (gen_random_scaled(128, 0.0, 30, seed=1), gen_random_scaled(128, 0.0, 30, seed=2)),
    "95% zeros, identity mix": (gen_identity_mix(128, 0.95, seed=1), gen_identity_mix(128, 0.95, seed=2)),
}

for name, (a, b) in cases.items():
    feats = extract_matmul_features(a, b)
    res = benchmark_variants(a, b, BenchmarkConfig(repeats=3))
    print(f"\n{name}: sparsity_A={feats['sparsity_A']:.3f}, splits_B={feats['splits_B']:.0f}")
    for v in EXECUTABLE:
        print(f"  v{v} {res.timings[v] * 1e3:8.2f} ms  {variant(v).label}")
    print(f"  fastest: v{res.best}")

# %% GPU variants exist in the table but cannot run here
print([v for v in range(1, 15) if not variant(v).executable])
