"""Data ingestion: everything that turns raw data into sparse grids.

Front-ends provided here:

* OFF triangle meshes -> surface-sampled cubic voxel grids, with uniform
  random rotation for pose-invariant training;
* 3D polylines -> 26-connected one-voxel-thick rasterized paths (used by
  the synthetic knot generator);
* ordered pen strokes -> 2+1 dimensional space-time paths, time being the
  cumulative point index;
* grayscale video -> thresholded successive-frame differences on a cubic
  grid with time as the leading axis;
* square images -> triangular-lattice grids via an affine placement and
  bilinear resampling;
* affine augmentation helpers and file formats (OFF, a trivial raw video
  container, stroke JSON, CIFAR-10 binary batches).

All randomness is drawn from explicit generators, so ingestion of a
sample is a pure function of its inputs and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .geometry import GridShape, LatticeKind, pack_sites, site_ordinal, sites_array
from .grid import DenseGrid, LabeledSample, SparseGrid

SQRT3 = np.sqrt(3.0)


# ---------------------------------------------------------------------------
# domain types


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray     # (F, 3) int vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face references a vertex that does not exist")


@dataclass
class StrokeSample:
    """Ordered pen strokes; each stroke is an (P, 2) array of points."""

    strokes: list
    label: int = -1

    def __post_init__(self):
        self.strokes = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in self.strokes]
        for s in self.strokes:
            if s.shape[0] < 1:
                raise ValueError("every stroke needs at least one point")
            if not np.isfinite(s).all():
                raise ValueError("stroke coordinates must be finite")


@dataclass
class FrameSequence:
    """8-bit grayscale frames in time order, shape (T, H, W)."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 3:
            raise ValueError("frames must be a (T, H, W) array")


# ---------------------------------------------------------------------------
# OFF meshes


def load_off(data) -> TriangleMesh:
    """Parse an ASCII OFF file; polygon faces are fan-triangulated."""
    if isinstance(data, bytes):
        data = data.decode("ascii", errors="replace")
    tokens: list[tuple[str, int]] = []  # (token, line number)
    for ln, line in enumerate(data.splitlines(), start=1):
        body = line.split("#", 1)[0]
        for tok in body.split():
            tokens.append((tok, ln))
    if not tokens:
        raise FormatError("empty OFF file", 1)
    pos = 0
    if tokens[0][0].upper() == "OFF":
        pos = 1
    elif tokens[0][0].upper().startswith("OFF"):
        # header glued to the first count, e.g. "OFF3 3 0"
        tokens[0] = (tokens[0][0][3:], tokens[0][1])
    else:
        raise FormatError("missing OFF header", tokens[0][1])

    def take(kind, what):
        nonlocal pos
        if pos >= len(tokens):
            last = tokens[-1][1] if tokens else 1
            raise FormatError(f"unexpected end of file while reading {what}", last)
        tok, ln = tokens[pos]
        pos += 1
        try:
            return kind(tok), ln
        except ValueError:
            raise FormatError(f"expected {what}, got {tok!r}", ln) from None

    nv, _ = take(int, "vertex count")
    nf, _ = take(int, "face count")
    take(int, "edge count")
    if nv < 0 or nf < 0:
        raise FormatError("negative counts in OFF header", tokens[0][1])
    verts = np.empty((nv, 3))
    for i in range(nv):
        for j in range(3):
            verts[i, j], _ = take(float, f"vertex {i} coordinate")
    tris = []
    for i in range(nf):
        k, ln = take(int, f"face {i} vertex count")
        if k < 3:
            raise FormatError(f"face {i} has {k} vertices", ln)
        idx = []
        for j in range(k):
            v, ln = take(int, f"face {i} index")
            if v < 0 or v >= nv:
                raise FormatError(f"face {i} references vertex {v} of {nv}", ln)
            idx.append(v)
        for j in range(1, k - 1):  # fan triangulation
            tris.append((idx[0], idx[j], idx[j + 1]))
    return TriangleMesh(verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3))


def save_off(mesh: TriangleMesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]} {v[1]} {v[2]}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


# ---------------------------------------------------------------------------
# rotations and affine helpers


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random 3D rotation via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def make_affine(d: int, rotation: float = 0.0, scale: float = 1.0, shear: float = 0.0,
                translation=None) -> tuple[np.ndarray, np.ndarray]:
    """Build (A, t) from simple parameters; rotation is radians in the
    first two axes."""
    A = np.eye(d) * scale
    if rotation:
        c, s = np.cos(rotation), np.sin(rotation)
        R = np.eye(d)
        R[0, 0], R[0, 1], R[1, 0], R[1, 1] = c, -s, s, c
        A = R @ A
    if shear:
        S = np.eye(d)
        S[0, 1] = shear
        A = A @ S
    t = np.zeros(d) if translation is None else np.asarray(translation, dtype=float)
    return A, t


def affine_augment(points: np.ndarray, A: np.ndarray, t=None) -> np.ndarray:
    """Apply ``x -> A x + t`` to an (N, d) point set."""
    A = np.asarray(A, dtype=float)
    if abs(np.linalg.det(A)) < 1e-6:
        raise ValueError(f"affine transform is singular (|det| = {abs(np.linalg.det(A)):.2e})")
    points = np.asarray(points, dtype=float)
    out = points @ A.T
    if t is not None:
        out = out + np.asarray(t, dtype=float)
    return out


def affine_augment_image(image: DenseGrid, A: np.ndarray, t=None) -> DenseGrid:
    """Inverse-map bilinear warp of a square-lattice image."""
    if image.shape.lattice is not LatticeKind.SQUARE:
        raise ValueError("image warping is defined for square-lattice grids")
    A = np.asarray(A, dtype=float)
    if abs(np.linalg.det(A)) < 1e-6:
        raise ValueError("affine transform is singular")
    t = np.zeros(2) if t is None else np.asarray(t, dtype=float)
    m = image.shape.m
    tgt = sites_array(LatticeKind.SQUARE, m).astype(float)
    src = (tgt - t) @ np.linalg.inv(A).T
    vals = _bilinear_sample(image, src)
    inside = ((src >= 0) & (src <= m - 1)).all(axis=1)
    vals[~inside] = 0.0
    return DenseGrid(image.shape, vals)


def _bilinear_sample(image: DenseGrid, pts: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (N, 2) point list; clamps to the border."""
    m = image.shape.m
    p = np.clip(pts, 0, m - 1)
    i0 = np.floor(p).astype(np.int64)
    i0 = np.minimum(i0, m - 2) if m > 1 else i0 * 0
    frac = p - i0
    def at(di, dj):
        idx = site_ordinal(LatticeKind.SQUARE, m, i0 + [di, dj])
        return image.values[idx]
    fx = frac[:, 0:1]
    fy = frac[:, 1:2]
    return ((1 - fx) * (1 - fy) * at(0, 0) + (1 - fx) * fy * at(0, 1)
            + fx * (1 - fy) * at(1, 0) + fx * fy * at(1, 1))


# ---------------------------------------------------------------------------
# fitting point clouds into grids


def fit_points(points: np.ndarray, shape: GridShape, margin: float = 1.0) -> np.ndarray:
    """Uniformly scale and translate points to fill the grid's valid region.

    Cubic/square grids fit the bounding box into ``[margin, m-1-margin]``;
    simplex grids solve the largest homothety that satisfies the coordinate
    and coordinate-sum constraints with the same margin.
    """
    points = np.asarray(points, dtype=float)
    span = shape.m - 1 - 2 * margin
    if span <= 0:
        raise ValueError(f"grid size {shape.m} leaves no room at margin {margin}")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    if not shape.lattice.is_simplex:
        extent = float((hi - lo).max())
        scale = span / extent if extent > 0 else 1.0
        fitted = (points - lo) * scale
        # center the smaller extents
        pad = (span - (hi - lo) * scale) / 2.0
        return fitted + pad + margin
    d = shape.ndim
    centered = points - lo
    sum_max = float(centered.sum(axis=1).max())
    denom = sum_max if sum_max > 0 else 1.0
    s_total = shape.m - 1 - (d + 1) * margin
    if s_total <= 0:
        raise ValueError(f"grid size {shape.m} leaves no room at margin {margin}")
    scale = s_total / denom
    fitted = centered * scale + margin
    slack = (shape.m - 1 - margin) - float(fitted.sum(axis=1).max())
    return fitted + slack / (d + 1)


# ---------------------------------------------------------------------------
# voxelization and rasterization


def voxelize_mesh(mesh: TriangleMesh, m: int, rotation: np.ndarray | None = None,
                  margin: float = 1.0, fit: bool = True) -> SparseGrid:
    """Surface-sample a triangle mesh into a cubic occupancy grid.

    The mesh is optionally rotated, then uniformly scaled and centered to
    fit the grid with a one-voxel margin (``fit=False`` keeps the mesh's
    own grid coordinates).  Each triangle is subdivided barycentrically
    until sub-triangle edges are shorter than half a voxel, and every
    voxel receiving a sample point becomes active with value 1.
    """
    if len(mesh.faces) < 1:
        raise ValueError("mesh has no faces to voxelize")
    if m < 2:
        raise ValueError(f"voxel grid must have size >= 2, got {m}")
    verts = mesh.vertices
    if rotation is not None:
        verts = verts @ np.asarray(rotation, dtype=float).T
    shape = GridShape(LatticeKind.CUBIC, m)
    if fit:
        verts = fit_points(verts, shape, margin=margin)

    keys = set()
    for (a, b, c) in mesh.faces:
        A, B, C = verts[a], verts[b], verts[c]
        edge = max(np.linalg.norm(B - A), np.linalg.norm(C - A), np.linalg.norm(C - B))
        n = max(1, int(np.ceil(edge / 0.45)))
        # barycentric lattice u/n, v/n with u+v <= n
        us = np.arange(n + 1)
        for u in us:
            v = np.arange(n + 1 - u)
            pts = A + np.outer(np.full(v.shape, u / n), (B - A)) + np.outer(v / n, (C - A))
            vox = np.rint(pts).astype(np.int64)
            np.clip(vox, 0, m - 1, out=vox)
            for k in pack_sites(vox):
                keys.add(int(k))
    key_arr = np.array(sorted(keys), dtype=np.int64)
    rows = np.ones((key_arr.shape[0], 1), dtype=np.float32)
    return SparseGrid(shape, key_arr, rows, np.zeros(1, dtype=np.float32))


def rasterize_polyline(points: np.ndarray, m: int, shape: GridShape | None = None) -> SparseGrid:
    """Trace line segments through the grid; visited voxels get value 1.

    Consecutive samples along each segment are spaced under half a voxel,
    so the voxel path is 26-connected.  Points outside the grid's valid
    region are an error.
    """
    if shape is None:
        shape = GridShape(LatticeKind.CUBIC, m)
    points = np.asarray(points, dtype=float).reshape(-1, shape.ndim)
    if points.shape[0] < 1:
        raise ValueError("need at least one point")
    keys = set()

    def mark(pts):
        vox = np.rint(pts).astype(np.int64).reshape(-1, shape.ndim)
        bad = (vox < 0).any(axis=1) | (vox >= shape.m).any(axis=1)
        if shape.lattice.is_simplex:
            bad |= vox.sum(axis=1) > shape.m - 1
        if bad.any():
            culprit = vox[np.argmax(bad)]
            raise ValueError(f"point maps to voxel {tuple(culprit)} outside the grid")
        for k in pack_sites(vox):
            keys.add(int(k))

    mark(points[0])
    for i in range(points.shape[0] - 1):
        a, b = points[i], points[i + 1]
        steps = max(1, int(np.ceil(np.abs(b - a).max() / 0.45)))
        ts = np.linspace(0.0, 1.0, steps + 1)
        mark(a + np.outer(ts, b - a))
    key_arr = np.array(sorted(keys), dtype=np.int64)
    rows = np.ones((key_arr.shape[0], 1), dtype=np.float32)
    return SparseGrid(shape, key_arr, rows, np.zeros(1, dtype=np.float32))


def strokes_to_spacetime(sample: StrokeSample, m: int = 40) -> SparseGrid:
    """Encode ordered strokes as paths in (x, y, time) space.

    x and y are scaled/centered into the grid; the time coordinate is the
    cumulative point index across all strokes scaled to the grid, so
    redrawing the same shape later lands in a different time slab.  No
    segments are drawn across stroke boundaries.
    """
    if not sample.strokes:
        raise ValueError("sample has no strokes")
    allp = np.vstack(sample.strokes)
    lo = allp.min(axis=0)
    hi = allp.max(axis=0)
    extent = float((hi - lo).max())
    scale = (m - 1) / extent if extent > 0 else 1.0
    pad = ((m - 1) - (hi - lo) * scale) / 2.0

    total = sum(len(s) for s in sample.strokes)
    tscale = (m - 1) / max(total - 1, 1)

    shape = GridShape(LatticeKind.CUBIC, m)
    keys = set()
    idx = 0
    for stroke in sample.strokes:
        xy = (stroke - lo) * scale + pad
        times = (np.arange(idx, idx + len(stroke)) * tscale).reshape(-1, 1)
        idx += len(stroke)
        pts = np.hstack([xy, times])
        sub = rasterize_polyline(pts, m, shape)
        keys.update(int(k) for k in sub.keys)
    key_arr = np.array(sorted(keys), dtype=np.int64)
    rows = np.ones((key_arr.shape[0], 1), dtype=np.float32)
    return SparseGrid(shape, key_arr, rows, np.zeros(1, dtype=np.float32))


def frame_difference(video: FrameSequence, threshold_pct: float) -> SparseGrid:
    """Successive-frame differences, zeroed below the threshold.

    The threshold is a percentage of the full 8-bit range (255).  The
    result is a cubic grid sized to fit (T-1, H, W) with the block
    centered; site (t, y, x) is active when ``|frame[t+1] - frame[t]|``
    at pixel (y, x) exceeds the threshold, with the signed difference
    scaled to [-1, 1] as its value.
    """
    if not 0 <= threshold_pct <= 100:
        raise ValueError(f"threshold must be in [0, 100], got {threshold_pct}")
    T, H, W = video.frames.shape
    if T < 2:
        raise ValueError(f"need at least 2 frames to difference, got {T}")
    diff = video.frames[1:].astype(np.int16) - video.frames[:-1].astype(np.int16)
    cut = threshold_pct / 100.0 * 255.0
    t, y, x = np.nonzero(np.abs(diff) > cut)
    m = max(T - 1, H, W)
    off = np.array([(m - (T - 1)) // 2, (m - H) // 2, (m - W) // 2], dtype=np.int64)
    sites = np.stack([t, y, x], axis=1) + off
    vals = (diff[t, y, x] / 255.0).astype(np.float32).reshape(-1, 1)
    shape = GridShape(LatticeKind.CUBIC, m)
    if sites.shape[0] == 0:
        return SparseGrid.empty(shape, np.zeros(1, dtype=np.float32))
    return SparseGrid.from_sites(shape, sites, vals, np.zeros(1, dtype=np.float32))


# ---------------------------------------------------------------------------
# square image -> triangular lattice


def triangular_plane_positions(m: int) -> np.ndarray:
    """Plane coordinates of all sites of a size-m triangular grid."""
    s = sites_array(LatticeKind.TRIANGULAR, m).astype(float)
    return np.stack([s[:, 0] + s[:, 1] / 2.0, s[:, 1] * SQRT3 / 2.0], axis=1)


def square_to_triangular(image: DenseGrid, m_tri: int) -> SparseGrid:
    """Resample a square-lattice image onto a triangular grid.

    The image keeps its pixel scale: its (w-1)-sized square footprint is
    placed base-centered inside the triangle spanned by the lattice, and
    every triangular site whose plane position falls inside the footprint
    bilinearly samples the image.  Sites outside stay inactive.
    """
    if image.shape.lattice is not LatticeKind.SQUARE:
        raise ValueError("source image must live on the square lattice")
    w = image.shape.m
    a = float(w - 1)
    L = float(m_tri - 1)
    # the square's top corners must stay inside the triangle
    if L < a * (1.0 + 2.0 / SQRT3) - 1e-9:
        raise ValueError(
            f"image footprint {w} exceeds what a size-{m_tri} triangular grid can hold"
        )
    tx = (L - a) / 2.0
    pos = triangular_plane_positions(m_tri)
    q = pos - np.array([tx, 0.0])
    inside = (q[:, 0] >= -1e-9) & (q[:, 0] <= a + 1e-9) & (q[:, 1] >= -1e-9) & (q[:, 1] <= a + 1e-9)
    tri_sites = sites_array(LatticeKind.TRIANGULAR, m_tri)[inside]
    vals = _bilinear_sample(image, q[inside]).astype(np.float32)
    shape = GridShape(LatticeKind.TRIANGULAR, m_tri)
    ground = np.zeros(image.n, dtype=np.float32)
    if tri_sites.shape[0] == 0:
        return SparseGrid.empty(shape, ground)
    return SparseGrid.from_sites(shape, tri_sites, vals, ground)


# ---------------------------------------------------------------------------
# synthetic knots


KNOT_KINDS = ("unknot", "trefoil", "figure_eight")


def knot_curve(kind: str, samples: int = 720) -> np.ndarray:
    """Closed parametric curve for the knot class, centered, unit radius."""
    t = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    if kind == "unknot":
        pts = np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=1)
    elif kind == "trefoil":
        pts = np.stack([
            np.sin(t) + 2 * np.sin(2 * t),
            np.cos(t) - 2 * np.cos(2 * t),
            -np.sin(3 * t),
        ], axis=1)
    elif kind == "figure_eight":
        pts = np.stack([
            (2 + np.cos(2 * t)) * np.cos(3 * t),
            (2 + np.cos(2 * t)) * np.sin(3 * t),
            np.sin(4 * t),
        ], axis=1)
    else:
        raise ValueError(f"unknown knot kind {kind!r}; expected one of {KNOT_KINDS}")
    pts -= pts.mean(axis=0)
    pts /= np.abs(pts).max()
    return pts


def synth_knot(kind: str, m: int, rng: np.random.Generator,
               lattice: LatticeKind = LatticeKind.CUBIC) -> LabeledSample:
    """One randomly rotated, jittered, rasterized knot sample."""
    pts = knot_curve(kind)
    pts = pts @ random_rotation(rng).T
    pts *= rng.uniform(0.88, 1.0)  # scale jitter
    shape = GridShape(lattice, m)
    fitted = fit_points(pts, shape, margin=0.6)
    closed = np.vstack([fitted, fitted[:1]])
    grid = rasterize_polyline(closed, m, shape)
    return LabeledSample(grid, KNOT_KINDS.index(kind))


def knot_dataset(m: int, per_class: int, rng: np.random.Generator,
                 lattice: LatticeKind = LatticeKind.CUBIC) -> list[LabeledSample]:
    """per_class samples of each knot kind, in class-major order."""
    out = []
    for kind in KNOT_KINDS:
        for _ in range(per_class):
            out.append(synth_knot(kind, m, rng, lattice))
    return out


# ---------------------------------------------------------------------------
# file formats: raw video container, stroke JSON, CIFAR batches


SVID_MAGIC = b"SVID"


def write_svid(path, video: FrameSequence):
    T, H, W = video.frames.shape
    with open(path, "wb") as fh:
        fh.write(SVID_MAGIC)
        fh.write(np.array([W, H, T], dtype="<u4").tobytes())
        fh.write(video.frames.tobytes())


def read_svid(path) -> FrameSequence:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SVID_MAGIC:
        raise FormatError(f"{path} is not a raw video container (bad magic)")
    W, H, T = np.frombuffer(data, "<u4", count=3, offset=4)
    need = 16 + T * H * W
    if len(data) < need:
        raise FormatError(f"truncated video: expected {need} bytes, got {len(data)}")
    frames = np.frombuffer(data, np.uint8, count=T * H * W, offset=16).reshape(T, H, W)
    return FrameSequence(frames.copy())


def read_strokes_json(path) -> StrokeSample:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: {e.msg}", e.lineno) from None
    if "strokes" not in doc:
        raise FormatError(f"{path}: missing 'strokes' field")
    return StrokeSample(doc["strokes"], int(doc.get("label", -1)))


def write_strokes_json(path, sample: StrokeSample):
    doc = {"label": sample.label, "strokes": [s.tolist() for s in sample.strokes]}
    with open(path, "w") as fh:
        json.dump(doc, fh)


CIFAR_RECORD = 3073  # label byte + 3 * 1024 channel-major pixels


def load_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Labels (N,) and images (N, 32, 32, 3) in [0, 1] from a binary batch."""
    with open(path, "rb") as fh:
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    if raw.size % CIFAR_RECORD != 0:
        raise FormatError(
            f"{path}: size {raw.size} is not a multiple of the {CIFAR_RECORD}-byte record"
        )
    raw = raw.reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    imgs = raw[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float32) / 255.0
    return labels, imgs


def image_to_dense(img: np.ndarray) -> DenseGrid:
    """(H, W) or (H, W, C) array -> square-lattice DenseGrid."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if h != w:
        raise ValueError(f"square-lattice images must be square, got {h}x{w}")
    return DenseGrid(GridShape(LatticeKind.SQUARE, h), img.reshape(h * w, c))
