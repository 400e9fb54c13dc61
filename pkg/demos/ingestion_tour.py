"""Every ingestion front-end in one pass.

Generates small inputs in memory (a sphere mesh, a two-stroke character,
a moving-square video, a gradient image) and pushes each through its
converter, printing the sparsity of what the network would consume.
"""

import numpy as np

from latticenet import DenseGrid, GridShape, LatticeKind
from latticenet.ingest import (
    FrameSequence,
    StrokeSample,
    TriangleMesh,
    frame_difference,
    random_rotation,
    square_to_triangular,
    strokes_to_spacetime,
    synth_knot,
    voxelize_mesh,
)


def stats(name, grid):
    frac = grid.a / grid.shape.num_sites
    print(f"{name:>28}: {grid.shape.lattice.value} m={grid.shape.m}, "
          f"{grid.a} active / {grid.shape.num_sites} ({100 * frac:.2f}%)")


def sphere_mesh(nu=24, nv=12):
    verts = []
    for i in range(nv + 1):
        th = np.pi * i / nv
        for j in range(nu):
            ph = 2 * np.pi * j / nu
            verts.append([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    tris = []
    for i in range(nv):
        for j in range(nu):
            a, b = i * nu + j, i * nu + (j + 1) % nu
            c, d = (i + 1) * nu + j, (i + 1) * nu + (j + 1) % nu
            tris += [(a, b, c), (b, d, c)]
    return TriangleMesh(np.array(verts), np.array(tris))


print("--- 3D object: triangle mesh -> surface voxels ---")
rng = np.random.default_rng(4)
mesh = sphere_mesh()
grid = voxelize_mesh(mesh, 40, rotation=random_rotation(rng))
stats("sphere surface at m=40", grid)
print("surfaces are 2D in a 3D grid, so occupancy stays low and the")
print("sparse engine skips the empty interior entirely")

print("\n--- drawn curve: knot -> 1-voxel-thick path ---")
sample = synth_knot("trefoil", 40, rng)
stats("trefoil at m=40", sample.grid)

print("\n--- online handwriting: strokes -> space-time paths ---")
char = StrokeSample([
    [[0.0, 0.0], [10.0, 10.0], [20.0, 0.0]],   # stroke 1: a caret
    [[5.0, 4.0], [15.0, 4.0]],                 # stroke 2: the crossbar
], label=0)
grid = strokes_to_spacetime(char, 40)
stats("two-stroke character", grid)
print("time is the cumulative point index, so stroke order survives")

print("\n--- video: frame differencing ---")
T, H, W = 12, 32, 32
frames = np.full((T, H, W), 80, dtype=np.uint8)
for t in range(T):  # a bright square and a faint one glide across a static scene
    x = 4 + 2 * t
    frames[t, 12:18, x:x + 5] = 200
    frames[t, 24:28, x:x + 4] = 110
video = FrameSequence(frames)
for pct in (5.0, 12.0, 30.0):
    stats(f"frame diff, threshold {pct:>4}%", frame_difference(video, pct))
print("only moving edges survive differencing; static pixels vanish")

print("\n--- 2D image -> triangular lattice ---")
m = 32
vals = np.fromfunction(lambda i, j: (i + 2 * j) / (3 * m), (m, m)).reshape(-1, 1)
img = DenseGrid(GridShape(LatticeKind.SQUARE, m), vals)
tri = square_to_triangular(img, 72)
stats("32x32 gradient image", tri)
print("the image keeps its pixel scale inside the triangle; triangular")
print("sites are denser per unit area, so the count exceeds 32*32")
