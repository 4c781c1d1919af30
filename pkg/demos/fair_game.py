"""With driftless prices the group return is a fair game.

Means of rbar(0, t) over many paths stay within a few standard errors of
zero; once every asset drifts upward the mean grows with t.

Run:  python demos/fair_game.py      (about half a minute)
"""
from pathlib import Path

from fundreturn import MartingaleTestSpec, martingale_test, parse_scenario, submartingale_test

sc = parse_scenario(Path(__file__).resolve().parents[1] / "scenarios" / "reference.yaml").with_grid(128)
spec = MartingaleTestSpec(paths=4000, base_paths=10, branches=400)

rep = martingale_test(sc, spec)
for c in rep.statistics["checkpoints"]:
    print(f"mu=0    t={c['t']:<5} mean {c['mean']:+.5f}  z {c['z']:+.2f}")
print("branch means inside their band:", rep.statistics["branching"]["fraction_inside"])

up = submartingale_test(sc.with_changes(market={"mu": [0.1, 0.1]}), spec, strict=True)
for m, t in zip(up.statistics["means"], spec.checkpoints):
    print(f"mu=0.1  t={t:<5} mean {m:+.5f}")
print("increase detected at every checkpoint:", up.passed)
