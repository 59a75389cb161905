"""Simulate one dataset with a known error process, then fit and compare models."""

# %%
from odsdem.estimation import effects_split
from odsdem.report import fit_model_pair, render_table
from odsdem.synth import DgpConfig, gen_instance

cfg = DgpConfig(n=60, m=12, lam=0.6, seed=7)
inst = gen_instance(cfg)
print(f"N = {inst.design.N}, K = {inst.design.K}, isolated = {inst.weights.isolated}")

# %%
report = fit_model_pair("synthetic", inst.design, inst.weights)
print(render_table([report]))

# %%
# Estimates next to the values used to generate the data.
fit = report.sdem
true = inst.truth["coefficients"]
for label, b, se, t in zip(fit.labels, fit.coefficients, fit.std_errors, true):
    print(f"{label:14s} {b:7.3f} ({se:.3f})   true {t:6.2f}")
print(f"{'lambda':14s} {fit.lam:7.3f} ({fit.lam_se:.3f})   true {cfg.lam:6.2f}")

# %%
# Direct effect is the unlagged coefficient, spillover its W_D counterpart.
def fmt(x):
    return "—" if x is None else f"{x:.3f}"


for e in effects_split(fit):
    print(f"{e.variable:10s} direct {fmt(e.direct):>6}  spillover {fmt(e.spillover):>6}"
          f"  total {fmt(e.total):>6}")
