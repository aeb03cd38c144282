# %% What drives PICCG run time?
#
# A reduced sweep over conductivity, fill level and drop threshold on the 8^3
# grid, a forest regressor on the timings, and Shapley values with the fill
# level one-hot encoded so each level gets its own attribution.
import warnings

from xtune.data import TEST, PiccgSweep, build_piccg_dataset, one_hot_encode, plan_piccg
from xtune.forest import TrainConfig, evaluate, train
from xtune.shapley import BackgroundSet, global_summary

sweep = PiccgSweep(grids=(8,), lambda2=(1.0, 1e-2, 1e-4, 1e-6), thresholds=tuple(i * 1e-3 for i in range(1, 20, 2)),
                   repeats=3)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")      # the sweep size differs from the reported one on purpose
    d = build_piccg_dataset(plan_piccg(sweep, seed=0))
print(d.n_rows, "rows;", int((d.split == TEST).sum()), "held out")

enc = one_hot_encode(d, "fill_level", prefix="m")
model = train(enc, TrainConfig(seed=0))
print("held-out MAPE: {:.2%}".format(evaluate(model, enc).mape))

g = global_summary(model, enc, BackgroundSet.from_dataset(enc, cap=50), split=TEST)
for name in g.ranking:
    print(f"  {name:<20s} {g.importance()[name]:.2e}")
