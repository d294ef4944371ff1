"""Compare PE-array mappings by the hardware each needs for reversal.

Retrieving noise in reverse interacts with how the conv loop nest is
parallelized: some mappings force values to swap between processing
elements or require duplicated reduction trees, others only need the
address generators to run their traversal backwards.
"""

from shiftbnn import mapping_overhead
from shiftbnn.costmodel import MAPPINGS

for n in (4, 16, 64):
    print(f"array {n}x{n}:")
    for mapping in MAPPINGS:
        r = mapping_overhead(mapping, n)
        flags = []
        if r.square_array_required:
            flags.append("square array only")
        if r.dual_input_buffers:
            flags.append("doubled input buffers")
        print(f"  {mapping:<6} wires={r.swap_wires:<5} "
              f"adder_trees={r.adder_trees:<3} modes={r.control_modes} "
              f"score={r.rank_score:<5} {'; '.join(flags)}")
    best = min(MAPPINGS, key=lambda m: mapping_overhead(m, n).rank_score)
    print(f"  -> lowest structural cost: {best}")
    print()

print("output-row/column parallelism wins at every size: reversal there")
print("is just a second traversal mode, no extra wires or adders at all")
