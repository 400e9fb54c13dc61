"""Tour of the four lattice families and the layer-size planner.

Shows filter footprints on each lattice, why simplex filters stay small
as dimension grows, and how the planner sizes a network's input field by
running the size recurrence backward from a final spatial size of 1.
"""

import numpy as np

from latticenet import (
    LatticeKind,
    filter_offsets,
    filter_volume,
    parse,
    plan,
    render,
    site_count,
)

print("=== filter footprints by lattice ===")
print(f"{'lattice':>12} {'f=1':>5} {'f=2':>5} {'f=3':>5} {'f=4':>5}")
for lattice in LatticeKind:
    row = [filter_volume(lattice, f) for f in (1, 2, 3, 4)]
    print(f"{lattice.value:>12} " + " ".join(f"{v:>5}" for v in row))

print()
print("A size-2 filter covers 2^d sites on box lattices but only d+1 on")
print("the simplex lattices, which is what makes them cheap:")
for lattice in (LatticeKind.TRIANGULAR, LatticeKind.TETRAHEDRAL):
    print(f"  {lattice.value}: offsets {filter_offsets(lattice, 2)}")

print()
print("=== grid sizes ===")
for lattice in LatticeKind:
    sizes = [site_count(lattice, m) for m in (4, 8, 16, 32)]
    print(f"{lattice.value:>12}: sites at m=4,8,16,32 -> {sizes}")

print()
print("=== planning a network ===")
arch = "32C2-MP3/2-64C2-MP3/2-96C2-output"
spec = plan(parse(arch, LatticeKind.TETRAHEDRAL, 1))
print(f"architecture {render(spec)}")
print(f"per-layer spatial sizes: {spec.planned_sizes}")
print("The first entry is the input field the data must be embedded into;")
print("convolutions here are unpadded, so the field is exact, and strides")
print("that do not divide are rejected rather than silently cropped.")

print()
print("Deeper pooling ladders need larger fields:")
for pools in range(2, 7):
    parts = []
    for i in range(pools):
        parts += [f"{32 * (i + 1)}C2", "MP3/2"]
    parts += [f"{32 * (pools + 1)}C2", "output"]
    spec = plan(parse("-".join(parts), LatticeKind.TETRAHEDRAL, 1))
    print(f"  {pools} pooling levels -> input field {spec.planned_sizes[0]}")
