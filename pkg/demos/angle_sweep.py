"""Which pairs of viewing angles can show contradictory images?

For each azimuth separation we run a short black-versus-white optimization
with both cameras at 60 degrees elevation and print the final loss.  Views
that coincide cannot do better than a uniform gray (MSE 0.25); views far
apart see different faces of the bars and do much better.

    python demos/angle_sweep.py [steps]
"""
import sys

from viewdep import OptimizerConfig
from viewdep.experiments import sweep

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
cfg = OptimizerConfig(total_steps=steps)

rows, _ = sweep("azimuth", [0, 30, 60, 90, 120, 180], cfg, elevation=60.0)
print("separation  final MSE")
for r in rows:
    bar = "#" * int(round(r["final_mse"] * 100))
    print(f"{r['separation']:>8.0f}    {r['final_mse']:.4f}  {bar}")
