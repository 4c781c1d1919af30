"""How discretization errors shrink as the time step is halved.

Drivers are nested, so every resolution sees the same Brownian paths. The
flow identity residual is first order when flows carry no noise. Noisy
flows add a realized covariation between independent drivers, which only
shrinks like sqrt(dt); the single-fund identity inherits the same rate.

Run:  python demos/refinement_orders.py
"""
from pathlib import Path

from fundreturn import convergence_study, parse_scenario

ref = parse_scenario(Path(__file__).resolve().parents[1] / "scenarios" / "reference.yaml")
single = ref.with_changes(**ref.document["verify"]["property1"])
cases = [
    ("flow residual, quiet flows", ref.with_changes(funds={"flow_vol": [0.0, 0.0]}), "flow_residual"),
    ("flow residual, noisy flows", ref, "flow_residual"),
    ("single fund vs unit value", single, "unit_return"),
]
for label, sc, metric in cases:
    rep = convergence_study(sc, (64, 128, 256, 512, 1024), metric=metric, paths=128)
    errs = "  ".join(f"{row['error']:.2e}" for row in rep.statistics["table"])
    print(f"{label:<28} order {rep.statistics['order']:.2f}   {errs}")
