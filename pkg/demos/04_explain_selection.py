# %% Explaining a variant selector
#
# Labels here follow a known rule (dense GEMM below 50% zeros in A, CRS
# multi-RHS SpMV above), so a correct explanation must put sparsity_A first.
from xtune.data import TEST, engineered_selection_dataset
from xtune.forest import TrainConfig, evaluate, train
from xtune.shapley import BackgroundSet, global_summary, render_svg, shapley_exact

d = engineered_selection_dataset(seed=0)
model = train(d, TrainConfig(n_trees=100, seed=0))
print("test accuracy:", evaluate(model, d).accuracy)

# %% One instance: the attributions add up to the class score
bg = BackgroundSet.from_dataset(d)
x = d.rows(TEST).X[0]
ex = shapley_exact(model, x, bg, target_class=1)
for name, p in zip(ex.features, ex.phi):
    print(f"  {name:<16s} {p:+.4f}")
print("base + sum(phi) =", ex.base_value + ex.phi.sum(), " score =", ex.prediction)

# %% Whole test split
g = global_summary(model, d, bg, split=TEST, target_class=1)
print("ranking by mean |phi|:", g.ranking)
with open("selection_beeswarm.svg", "w") as fh:
    fh.write(render_svg(g, "variant 1 score"))
print("wrote selection_beeswarm.svg")
