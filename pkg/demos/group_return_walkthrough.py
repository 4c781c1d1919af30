"""Two funds on two correlated assets, one simulated year.

Run:  python demos/group_return_walkthrough.py
"""
from pathlib import Path

import numpy as np

from fundreturn import average_return, parse_scenario, per_fund_return, simulate

sc = parse_scenario(Path(__file__).resolve().parents[1] / "scenarios" / "reference.yaml")
assets, funds = simulate(sc, paths=5)
K = sc.grid.steps

# %% Wealth and shares
print("A(0) per fund:", funds.A_i[0, 0])
print("share of fund 1 at t=0, 0.5, 1 on path 0:", funds.A_star[0, [0, K // 2, K], 0].round(4))

# %% Group return next to the funds' own unit-value returns
r_group = average_return(funds, 0, K)
r_funds = per_fund_return(funds.w, 0, K)
for p in range(funds.M):
    print(f"path {p}: group {r_group[p]:+.4f}   fund 1 {r_funds[p, 0]:+.4f}   fund 2 {r_funds[p, 1]:+.4f}")

# The group return is not the growth of total wealth: contributions and
# transfers move A without being earned.
A = funds.A
print("total wealth growth, path 0:", f"{A[0, -1] / A[0, 0] - 1:+.4f}")

# %% Splitting the year: returns compound exactly
h = K // 2
first, second = average_return(funds, 0, h), average_return(funds, h, K)
print("max |(1+r1)(1+r2) - (1+r)|:", np.max(np.abs((1 + first) * (1 + second) - (1 + r_group))))
