"""Lattice families, filter footprints and layer-size arithmetic.

Four lattices are supported.  Square and cubic grids are the ordinary
integer boxes.  The triangular and tetrahedral grids are the simplex
subsets of the integer grid: a site ``(x1..xd)`` is valid when every
coordinate is non-negative and the coordinate sum is at most ``m - 1``.
On those lattices a filter of linear size ``f`` covers the simplex of
offsets with coordinate sum below ``f``, so the smallest non-trivial
filter touches only ``d + 1`` sites instead of ``2**d``.

All functions here are pure and cheap; the rest of the package treats
this module as the single authority on what a site, a footprint and a
layer size mean.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import SizeMismatchError

# Site coordinates are packed into one int64 key, 21 bits per coordinate,
# so coordinate values must stay below 2**21.
COORD_BITS = 21
MAX_COORD = 1 << COORD_BITS


class LatticeKind(Enum):
    SQUARE = "square"
    TRIANGULAR = "triangular"
    CUBIC = "cubic"
    TETRAHEDRAL = "tetrahedral"

    @property
    def ndim(self) -> int:
        return 2 if self in (LatticeKind.SQUARE, LatticeKind.TRIANGULAR) else 3

    @property
    def is_simplex(self) -> bool:
        """True for the triangular/tetrahedral (simplex-shaped) families."""
        return self in (LatticeKind.TRIANGULAR, LatticeKind.TETRAHEDRAL)

    @classmethod
    def from_name(cls, name: str) -> "LatticeKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown lattice {name!r}; expected one of "
                "square, triangular, cubic, tetrahedral"
            ) from None


def filter_volume(lattice: LatticeKind, f: int) -> int:
    """Number of input sites a filter of linear size ``f`` covers."""
    if f < 1:
        raise ValueError(f"filter size must be >= 1, got {f}")
    if lattice is LatticeKind.SQUARE:
        return f * f
    if lattice is LatticeKind.CUBIC:
        return f * f * f
    if lattice is LatticeKind.TRIANGULAR:
        return f * (f + 1) // 2
    return f * (f + 1) * (f + 2) // 6


@lru_cache(maxsize=None)
def filter_offsets(lattice: LatticeKind, f: int) -> tuple[tuple[int, ...], ...]:
    """Canonical (lexicographically sorted) offset list of a size-f filter.

    The order returned here defines the row-block layout of convolution
    weight matrices, so it must never change.
    """
    if f < 1:
        raise ValueError(f"filter size must be >= 1, got {f}")
    d = lattice.ndim
    offs = itertools.product(range(f), repeat=d)
    if lattice.is_simplex:
        offs = (o for o in offs if sum(o) <= f - 1)
    out = tuple(sorted(offs))
    assert len(out) == filter_volume(lattice, f)
    return out


def site_count(lattice: LatticeKind, m: int) -> int:
    """Total number of valid sites of a grid with linear size ``m``."""
    if m < 1:
        raise ValueError(f"grid size must be >= 1, got {m}")
    if lattice is LatticeKind.SQUARE:
        return m * m
    if lattice is LatticeKind.CUBIC:
        return m * m * m
    if lattice is LatticeKind.TRIANGULAR:
        return m * (m + 1) // 2
    return m * (m + 1) * (m + 2) // 6


@dataclass(frozen=True)
class GridShape:
    """Spatial extent of one layer: a lattice kind plus a linear size."""

    lattice: LatticeKind
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"grid size must be >= 1, got {self.m}")
        if self.m > MAX_COORD:
            raise ValueError(f"grid size {self.m} exceeds packable maximum {MAX_COORD}")

    @property
    def ndim(self) -> int:
        return self.lattice.ndim

    @property
    def num_sites(self) -> int:
        return site_count(self.lattice, self.m)

    def contains(self, site) -> bool:
        if len(site) != self.ndim:
            return False
        if any(c < 0 or c >= self.m for c in site):
            return False
        if self.lattice.is_simplex and sum(site) > self.m - 1:
            return False
        return True

    def sites(self):
        """Iterate all valid sites in lexicographic order."""
        d = self.ndim
        for s in itertools.product(range(self.m), repeat=d):
            if self.lattice.is_simplex and sum(s) > self.m - 1:
                continue
            yield s


@lru_cache(maxsize=256)
def sites_array(lattice: LatticeKind, m: int) -> np.ndarray:
    """All valid sites as an (N, d) int64 array, lexicographic order."""
    arr = np.array(list(GridShape(lattice, m).sites()), dtype=np.int64)
    return arr.reshape(site_count(lattice, m), lattice.ndim)


def site_ordinal(lattice: LatticeKind, m: int, sites: np.ndarray) -> np.ndarray:
    """Position of each site in the lexicographic enumeration.

    ``sites`` is (..., d).  Closed-form; used by the dense representation
    to index the flat value table.
    """
    sites = np.asarray(sites, dtype=np.int64)
    x = sites[..., 0]
    y = sites[..., 1]
    if lattice is LatticeKind.SQUARE:
        return x * m + y
    if lattice is LatticeKind.CUBIC:
        return (x * m + y) * m + sites[..., 2]
    if lattice is LatticeKind.TRIANGULAR:
        # row x holds m - x sites
        return x * m - x * (x - 1) // 2 + y
    # tetrahedral: slab x is a triangular grid of size m - x
    z = sites[..., 2]

    def tet(k):
        return k * (k + 1) * (k + 2) // 6

    rest = m - x
    return tet(m) - tet(rest) + y * rest - y * (y - 1) // 2 + z


def pack_sites(sites: np.ndarray) -> np.ndarray:
    """Pack (..., d) integer sites into int64 keys, 21 bits per coordinate.

    Packing is big-endian in coordinate order, so integer order on keys
    equals lexicographic order on sites.
    """
    sites = np.asarray(sites, dtype=np.int64)
    d = sites.shape[-1]
    key = sites[..., 0]
    for i in range(1, d):
        key = (key << COORD_BITS) | sites[..., i]
    return key


def unpack_sites(keys: np.ndarray, ndim: int) -> np.ndarray:
    """Inverse of :func:`pack_sites`; returns an (..., ndim) int64 array."""
    keys = np.asarray(keys, dtype=np.int64)
    mask = MAX_COORD - 1
    coords = []
    for i in range(ndim):
        shift = COORD_BITS * (ndim - 1 - i)
        coords.append((keys >> shift) & mask)
    return np.stack(coords, axis=-1)


def out_size(m_in: int, k: int, s: int, layer: str = "") -> int:
    """Output linear size of a footprint-k, stride-s layer (no padding).

    Raises :class:`SizeMismatchError` when the stride does not divide
    evenly; nothing in this package ever crops silently.
    """
    if m_in < k:
        where = f" in layer {layer}" if layer else ""
        raise SizeMismatchError(
            f"input size {m_in} smaller than footprint {k}{where}"
        )
    if (m_in - k) % s != 0:
        where = f" in layer {layer}" if layer else ""
        raise SizeMismatchError(
            f"stride {s} does not divide input size {m_in} with footprint {k}{where}"
        )
    return (m_in - k) // s + 1


def in_size(m_out: int, k: int, s: int) -> int:
    """Input size that a footprint-k stride-s layer needs to emit ``m_out``."""
    return s * (m_out - 1) + k
