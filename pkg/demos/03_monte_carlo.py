"""Parameter recovery over repeated draws from the same data-generating process."""

# %%
import sys

from odsdem.synth import DgpConfig, mc_study

R = int(sys.argv[1]) if len(sys.argv) > 1 else 50
summary = mc_study(DgpConfig(n=40, m=10, lam=0.5), R=R, workers=1)

# %%
print(f"{'parameter':14s} {'truth':>7s} {'bias':>7s} {'rmse':>6s} {'cover':>6s}")
for p in summary.parameters:
    print(f"{p.name:14s} {p.truth:7.3f} {p.bias:7.3f} {p.rmse:6.3f} {p.coverage:6.2f}")
print(f"failures {summary.failures}/{summary.R}, LR rejection {summary.lr_rejection_rate:.2f}")
