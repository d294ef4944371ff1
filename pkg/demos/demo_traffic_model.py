"""How much memory traffic the noise actually costs, per model preset.

Per-weight Gaussian draws dominate off-chip movement for ensemble
training: each of S samples needs one value per weight per step, and the
baseline writes then re-reads all of them.  The analytic model below
makes that concrete for five familiar network shapes.
"""

from shiftbnn import CostParams, MODEL_PRESETS, latency_energy, traffic_per_iteration
from shiftbnn.costmodel import dnn_traffic, footprint

params = CostParams()
S = 16

print(f"{'model':<10} {'total GB':>9} {'noise %':>8} {'vs point-est':>12} "
      f"{'footprint cut':>13} {'speedup':>8}")
for name, spec in MODEL_PRESETS.items():
    store = traffic_per_iteration(spec, S, "store", params)
    shift = traffic_per_iteration(spec, S, "shift", params)
    ratio = store.totals.traffic_bytes / dnn_traffic(spec, params)
    fp_store = sum(footprint(spec, S, "store", params).values())
    fp_shift = sum(footprint(spec, S, "shift", params).values())
    cyc_store, _ = latency_energy(spec, S, "store", params)
    cyc_shift, _ = latency_energy(spec, S, "shift", params)
    print(f"{name:<10} {store.totals.traffic_bytes / 1e9:>9.2f} "
          f"{100 * store.eps_share:>7.1f}% {ratio:>11.1f}x "
          f"{100 * (1 - fp_shift / fp_store):>12.1f}% "
          f"{cyc_store / cyc_shift:>7.2f}x")

print()
print("noise share grows with S; the regenerating strategy zeroes that")
print("entire column while leaving parameters and feature maps untouched")
