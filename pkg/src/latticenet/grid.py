"""Sparse and dense spatial tensors.

A :class:`SparseGrid` stores one layer's state as an active-site index
plus a row matrix of feature vectors, together with the layer's ground
state: the single vector shared by every inactive site.  The dense value
at site ``x`` is ``rows[row_of(x)]`` when ``x`` is active and ``ground``
otherwise.

Sites are keyed by their packed int64 form (see ``geometry.pack_sites``);
rows are kept in ascending key order, which is the lexicographic site
order, so key arrays double as sorted search indexes.

:class:`DenseGrid` is the flat every-site table used by oracles and
ingestion; it stores one row per valid site in lexicographic order.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import (
    GridShape,
    LatticeKind,
    pack_sites,
    site_ordinal,
    sites_array,
    unpack_sites,
)

_LATTICE_CODES = {
    LatticeKind.SQUARE: 0,
    LatticeKind.TRIANGULAR: 1,
    LatticeKind.CUBIC: 2,
    LatticeKind.TETRAHEDRAL: 3,
}
_LATTICE_FROM_CODE = {v: k for k, v in _LATTICE_CODES.items()}

_HEADER = struct.Struct("<4sIIII")
_MAGIC = b"SGRD"


@dataclass
class DenseGrid:
    """Every-site value table; ``values`` is (num_sites, n), lexicographic order."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values))
        if self.values.shape[0] != self.shape.num_sites:
            raise ValueError(
                f"dense grid needs {self.shape.num_sites} rows, got {self.values.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def value_at(self, site) -> np.ndarray:
        ordn = site_ordinal(self.shape.lattice, self.shape.m, np.asarray(site))
        return self.values[int(ordn)]


@dataclass
class SparseGrid:
    """Active-site map + feature rows + ground-state vector for one layer.

    ``keys`` are packed sites in ascending order; ``rows[i]`` is the feature
    vector of the site with key ``keys[i]``.  Instances are treated as
    immutable after construction.
    """

    shape: GridShape
    keys: np.ndarray
    rows: np.ndarray
    ground: np.ndarray

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.int64).reshape(-1)
        self.rows = np.atleast_2d(np.asarray(self.rows))
        self.ground = np.asarray(self.ground).reshape(-1)
        if self.rows.shape[0] != self.keys.shape[0]:
            raise ValueError(
                f"{self.keys.shape[0]} keys but {self.rows.shape[0]} feature rows"
            )
        if self.rows.size and self.rows.shape[1] != self.ground.shape[0]:
            raise ValueError(
                f"feature width {self.rows.shape[1]} != ground width {self.ground.shape[0]}"
            )
        if self.rows.size == 0:
            self.rows = self.rows.reshape(0, self.ground.shape[0])

    # -- basic queries -------------------------------------------------

    @property
    def n(self) -> int:
        return self.ground.shape[0]

    @property
    def a(self) -> int:
        return self.keys.shape[0]

    def sites(self) -> np.ndarray:
        """Active sites as an (a, d) array in row order."""
        return unpack_sites(self.keys, self.shape.ndim)

    def lookup(self, query_keys: np.ndarray) -> np.ndarray:
        """Row index for each packed query key, -1 where inactive."""
        query_keys = np.asarray(query_keys, dtype=np.int64)
        if self.a == 0:
            return np.full(query_keys.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self.keys, query_keys)
        pos_c = np.minimum(pos, self.a - 1)
        hit = self.keys[pos_c] == query_keys
        return np.where(hit, pos_c, -1)

    def index(self) -> dict:
        """Site-tuple -> row dict view (for small grids / debugging)."""
        return {tuple(s): i for i, s in enumerate(self.sites())}

    def check_invariants(self):
        assert np.all(np.diff(self.keys) > 0), "keys must be strictly increasing"
        assert self.a <= self.shape.num_sites
        sites = self.sites()
        assert np.all(sites >= 0)
        assert np.all(sites < self.shape.m)
        if self.shape.lattice.is_simplex:
            assert np.all(sites.sum(axis=1) <= self.shape.m - 1)

    # -- construction / conversion -------------------------------------

    @classmethod
    def empty(cls, shape: GridShape, ground: np.ndarray) -> "SparseGrid":
        ground = np.asarray(ground).reshape(-1)
        return cls(shape, np.empty(0, np.int64), np.empty((0, ground.shape[0])), ground)

    @classmethod
    def from_sites(cls, shape: GridShape, sites, rows, ground) -> "SparseGrid":
        """Build from possibly unsorted (a, d) sites; rows are reordered to match."""
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, shape.ndim)
        rows = np.atleast_2d(np.asarray(rows))
        keys = pack_sites(sites)
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        if np.any(np.diff(keys) == 0):
            raise ValueError("duplicate active sites")
        return cls(shape, keys, rows[order], ground)

    @classmethod
    def from_dense(cls, dense: DenseGrid, ground) -> "SparseGrid":
        """Index exactly the sites whose vector differs from ``ground``."""
        ground = np.asarray(ground).reshape(-1)
        if ground.shape[0] != dense.n:
            raise ValueError(
                f"ground has {ground.shape[0]} components, grid has {dense.n}"
            )
        active = np.any(dense.values != ground, axis=1)
        all_sites = sites_array(dense.shape.lattice, dense.shape.m)
        keys = pack_sites(all_sites[active])  # lexicographic order already
        return cls(dense.shape, keys, dense.values[active].copy(), ground.copy())

    def to_dense(self) -> DenseGrid:
        values = np.tile(self.ground, (self.shape.num_sites, 1)).astype(
            np.result_type(self.rows, self.ground), copy=False
        )
        if self.a:
            ords = site_ordinal(self.shape.lattice, self.shape.m, self.sites())
            values[ords] = self.rows
        return DenseGrid(self.shape, values)

    def embed(self, fieldshape: GridShape, offset) -> "SparseGrid":
        """Translate all active sites by ``offset`` into a larger field."""
        if fieldshape.lattice is not self.shape.lattice:
            raise ValueError(
                f"cannot embed {self.shape.lattice.value} grid into "
                f"{fieldshape.lattice.value} field"
            )
        offset = np.asarray(offset, dtype=np.int64).reshape(-1)
        if offset.shape[0] != self.shape.ndim:
            raise ValueError(f"offset must have {self.shape.ndim} coordinates")
        sites = self.sites() + offset
        bad = (sites < 0).any(axis=1) | (sites >= fieldshape.m).any(axis=1)
        if fieldshape.lattice.is_simplex:
            bad |= sites.sum(axis=1) > fieldshape.m - 1
        if bad.any():
            first = sites[np.argmax(bad)]
            raise ValueError(
                f"embed offset {tuple(offset)} pushes site {tuple(first)} outside "
                f"the size-{fieldshape.m} {fieldshape.lattice.value} field"
            )
        # translation preserves lexicographic order, so rows stay aligned
        return SparseGrid(fieldshape, pack_sites(sites), self.rows, self.ground)

    # -- serialization ---------------------------------------------------
    #
    # Binary record layout (little-endian throughout):
    #   "SGRD", lattice code u32, m u32, n u32, a u32
    #   a   * int64   packed site keys (row order)
    #   a*n * float32 feature rows (row-major)
    #   n   * float32 ground vector

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(
            _HEADER.pack(_MAGIC, _LATTICE_CODES[self.shape.lattice], self.shape.m, self.n, self.a)
        )
        buf.write(self.keys.astype("<i8").tobytes())
        buf.write(self.rows.astype("<f4").tobytes())
        buf.write(self.ground.astype("<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SparseGrid":
        magic, code, m, n, a = _HEADER.unpack_from(data, 0)
        if magic != _MAGIC:
            raise ValueError("not a sparse grid record (bad magic)")
        off = _HEADER.size
        keys = np.frombuffer(data, "<i8", count=a, offset=off).astype(np.int64)
        off += 8 * a
        rows = np.frombuffer(data, "<f4", count=a * n, offset=off).reshape(a, n)
        off += 4 * a * n
        ground = np.frombuffer(data, "<f4", count=n, offset=off)
        shape = GridShape(_LATTICE_FROM_CODE[code], m)
        return cls(shape, keys, rows.astype(np.float32), ground.astype(np.float32))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SparseGrid":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def active_count(grid: SparseGrid) -> int:
    """Number of active sites (the row count of the feature matrix)."""
    return grid.a


@dataclass
class LabeledSample:
    """A sparse grid paired with its class label."""

    grid: SparseGrid
    label: int
