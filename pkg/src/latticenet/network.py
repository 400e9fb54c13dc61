"""Network assembly: parameterized layer stack, batching, checkpoints.

A :class:`Network` materializes a planned :class:`~latticenet.netspec.NetworkSpec`
into parameterized layers: every convolution is followed by a rectifier,
and the ``output`` token becomes a size-1 convolution producing the class
logits.  Mini-batch forward passes build one gather plan per sample but
concatenate the gather matrices so each convolution performs a single
dense multiply per batch; the backward pass mirrors that, so gradient
accumulation order is fixed and results are bit-identical regardless of
the worker-thread count used for plan building.
"""

from __future__ import annotations

import io
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autograd import ParamState, pool_backward, relu_backward
from .geometry import GridShape, LatticeKind
from .grid import SparseGrid
from .netspec import ConvSpec, FMPSpec, NetworkSpec, OutputSpec, PoolSpec, parse, plan, render
from .ops import (
    ConvLayer,
    FilterGeometry,
    FMPLayer,
    PoolLayer,
    build_gather,
    conv_active_sites,
    fmp_forward,
    fmp_regions,
    pool_forward,
    relu_forward,
)

_LATTICE_CODES = {
    LatticeKind.SQUARE: 0,
    LatticeKind.TRIANGULAR: 1,
    LatticeKind.CUBIC: 2,
    LatticeKind.TETRAHEDRAL: 3,
}
_LATTICE_FROM_CODE = {v: k for k, v in _LATTICE_CODES.items()}
_CKPT_MAGIC = b"LNCK"


def _map_ordered(fn, items, threads: int):
    """Map preserving order; thread count never changes the result."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class _Block:
    kind: str  # conv | relu | pool | fmp | classifier
    layer: object = None


class Network:
    """A sparse CNN with one classifier head, built from a planned spec."""

    def __init__(self, spec: NetworkSpec, classes: int, rng: np.random.Generator,
                 dtype=np.float32, fmp_eval_seed: int = 0):
        if spec.planned_sizes is None:
            raise ValueError("network needs a planned spec (call netspec.plan first)")
        self.spec = spec
        self.classes = classes
        self.dtype = dtype
        self.fmp_eval_seed = fmp_eval_seed
        self.threads = 1
        self.blocks: list[_Block] = []
        n = spec.n_input
        for ls in spec.layers:
            if isinstance(ls, ConvSpec):
                geom = FilterGeometry(spec.lattice, ls.f, ls.s)
                conv = ConvLayer.init(geom, n, ls.n_out, rng, dtype=dtype)
                self.blocks.append(_Block("conv", conv))
                self.blocks.append(_Block("relu"))
                n = ls.n_out
            elif isinstance(ls, PoolSpec):
                self.blocks.append(_Block("pool", PoolLayer(spec.lattice, ls.p, ls.s)))
            elif isinstance(ls, FMPSpec):
                self.blocks.append(_Block("fmp", FMPLayer(spec.lattice, ls.ratio, fmp_eval_seed)))
            elif isinstance(ls, OutputSpec):
                geom = FilterGeometry(spec.lattice, 1, 1)
                head = ConvLayer.init(geom, n, classes, rng, dtype=dtype)
                self.blocks.append(_Block("classifier", head))
        self._params = []
        for b in self.blocks:
            if b.kind in ("conv", "classifier"):
                self._params.append(ParamState(b.layer.W))
                self._params.append(ParamState(b.layer.B))

    # -- parameters -----------------------------------------------------

    def params(self) -> list[ParamState]:
        return self._params

    def param_count(self) -> int:
        return sum(p.values.size for p in self._params)

    def input_shape(self) -> GridShape:
        return GridShape(self.spec.lattice, self.spec.planned_sizes[0])

    # -- forward / backward ----------------------------------------------

    def forward_batch(self, grids: list[SparseGrid], *, train_rng: np.random.Generator | None = None,
                      keep_tape: bool = False):
        """Logits for a batch; one dense multiply per convolution.

        Returns ``(logits, tape, macs)`` where ``macs`` is the total
        multiply-accumulate count actually performed on active sites.
        """
        states = list(grids)
        B = len(states)
        tape = []
        macs = 0
        for block in self.blocks:
            if block.kind == "conv":
                layer = block.layer
                geom = layer.geometry

                def build(g, geom=geom):
                    keys, oshape = conv_active_sites(g, geom)
                    return build_gather(g, keys, geom, oshape)

                plans = _map_ordered(build, states, self.threads)
                Q = np.vstack([p.Q for p in plans])
                M = Q @ layer.W + layer.B
                macs += Q.shape[0] * Q.shape[1] * layer.n_out
                grounds = np.stack([np.tile(g.ground, geom.volume) for g in states])
                g_out = grounds.astype(layer.W.dtype) @ layer.W + layer.B
                new_states = []
                pos = 0
                for i, p in enumerate(plans):
                    rows = M[pos:pos + p.a_out]
                    pos += p.a_out
                    new_states.append(SparseGrid(p.out_shape, p.out_keys, rows, g_out[i]))
                states = new_states
                if keep_tape:
                    tape.append(("conv", layer, plans))
            elif block.kind == "relu":
                outs = [relu_forward(g, keep_mask=keep_tape) for g in states]
                if keep_tape:
                    states = [o[0] for o in outs]
                    tape.append(("relu", [o[1] for o in outs]))
                else:
                    states = outs
            elif block.kind == "pool":
                outs = _map_ordered(
                    lambda g: pool_forward(g, block.layer, keep_plan=True), states, self.threads
                )
                states = [o[0] for o in outs]
                if keep_tape:
                    tape.append(("pool", [o[1] for o in outs]))
            elif block.kind == "fmp":
                layer = block.layer
                if train_rng is not None:
                    seed = int(train_rng.integers(0, 2**31))
                else:
                    seed = layer.seed
                regions = fmp_regions(states[0].shape.m, layer.ratio, seed)
                outs = [fmp_forward(g, layer, regions, keep_plan=True) for g in states]
                states = [o[0] for o in outs]
                if keep_tape:
                    tape.append(("pool", [o[1] for o in outs]))
            elif block.kind == "classifier":
                layer = block.layer

                def build_head(g, geom=layer.geometry):
                    keys, oshape = conv_active_sites(g, geom)
                    return build_gather(g, keys, geom, oshape)

                plans = _map_ordered(build_head, states, self.threads)
                Q = np.vstack([p.Q for p in plans])
                M = Q @ layer.W + layer.B
                macs += Q.shape[0] * Q.shape[1] * layer.n_out
                logits = np.empty((B, self.classes), dtype=M.dtype)
                g_stack = np.stack([g.ground for g in states]).astype(layer.W.dtype)
                g_logits = g_stack @ layer.W + layer.B
                pos = 0
                for i, p in enumerate(plans):
                    if p.a_out:
                        logits[i] = M[pos]
                        pos += p.a_out
                    else:
                        logits[i] = g_logits[i]  # inactive head site: ground logits
                if keep_tape:
                    tape.append(("classifier", layer, plans))
                return logits, tape, macs
        raise AssertionError("network has no classifier head")

    def forward(self, grid: SparseGrid) -> np.ndarray:
        logits, _, _ = self.forward_batch([grid])
        return logits[0]

    def backward_batch(self, tape, d_logits: np.ndarray):
        """Accumulate parameter gradients from a forward tape."""
        d_states: list[np.ndarray] | None = None
        param_idx = {id(p.values): p for p in self._params}
        for entry in reversed(tape):
            kind = entry[0]
            if kind == "classifier":
                _, layer, plans = entry
                d_rows = []
                for i, p in enumerate(plans):
                    if p.a_out:
                        d_rows.append(d_logits[i:i + 1])
                    else:
                        d_rows.append(np.zeros((0, layer.n_out), dtype=d_logits.dtype))
                d_states = self._conv_block_backward(layer, plans, d_rows, param_idx)
            elif kind == "conv":
                _, layer, plans = entry
                d_states = self._conv_block_backward(layer, plans, d_states, param_idx)
            elif kind == "relu":
                _, masks = entry
                d_states = [relu_backward(d, m) for d, m in zip(d_states, masks)]
            elif kind == "pool":
                _, plans = entry
                d_states = [pool_backward(d, p) for d, p in zip(d_states, plans)]
        return d_states

    def _conv_block_backward(self, layer, plans, d_rows, param_idx):
        d_cat = np.vstack(d_rows)
        Q = np.vstack([p.Q for p in plans])
        dW = Q.T @ d_cat
        dB = d_cat.sum(axis=0)
        param_idx[id(layer.W)].grad += dW.astype(layer.W.dtype)
        param_idx[id(layer.B)].grad += dB.astype(layer.B.dtype)
        if d_cat.shape[0]:
            dQ = (d_cat @ layer.W.T).reshape(d_cat.shape[0], layer.geometry.volume, layer.n_in)
        d_ins = []
        pos = 0
        for p in plans:
            d_in = np.zeros((p.a_in, layer.n_in), dtype=d_cat.dtype)
            if p.a_out:
                block = dQ[pos:pos + p.a_out]
                valid = p.src >= 0
                np.add.at(d_in, p.src[valid], block[valid])
            pos += p.a_out
            d_ins.append(d_in)
        return d_ins

    # -- ground states ----------------------------------------------------

    def ground_states(self) -> list[np.ndarray]:
        """Per-block output ground vectors (an all-ground field's values)."""
        g = SparseGrid.empty(self.input_shape(), np.zeros(self.spec.n_input, self.dtype))
        grounds = []
        for block in self.blocks:
            if block.kind == "conv":
                from .ops import conv_forward
                g = conv_forward(g, block.layer)
            elif block.kind == "relu":
                g = relu_forward(g)
            elif block.kind == "pool":
                g = pool_forward(g, block.layer)
            elif block.kind == "fmp":
                regions = fmp_regions(g.shape.m, block.layer.ratio, block.layer.seed)
                g = fmp_forward(g, block.layer, regions)
            elif block.kind == "classifier":
                from .ops import conv_forward
                g = conv_forward(g, block.layer)
            grounds.append(g.ground.copy())
        return grounds

    # -- checkpoints --------------------------------------------------------
    #
    # Layout (little-endian):
    #   "LNCK" u32 version, u32 lattice, u32 n_input, u32 classes,
    #   u32 input field size, u32 arch length, arch utf-8,
    #   u32 block count, then per block:
    #     u8 kind (0 conv, 1 pool, 2 fmp, 3 classifier)
    #     conv/classifier: u32 f, u32 s, u32 n_in, u32 n_out,
    #                      W float32 row-major, B float32
    #     pool:            u32 p, u32 s
    #     fmp:             f64 ratio, u64 seed

    def save(self, path):
        buf = io.BytesIO()
        arch = render(self.spec).encode()
        buf.write(_CKPT_MAGIC)
        buf.write(struct.pack("<IIIII", 1, _LATTICE_CODES[self.spec.lattice],
                              self.spec.n_input, self.classes, self.spec.planned_sizes[0]))
        buf.write(struct.pack("<I", len(arch)))
        buf.write(arch)
        param_blocks = [b for b in self.blocks if b.kind != "relu"]
        buf.write(struct.pack("<I", len(param_blocks)))
        for b in param_blocks:
            if b.kind in ("conv", "classifier"):
                code = 0 if b.kind == "conv" else 3
                l = b.layer
                buf.write(struct.pack("<BIIII", code, l.geometry.f, l.geometry.s, l.n_in, l.n_out))
                buf.write(l.W.astype("<f4").tobytes())
                buf.write(l.B.astype("<f4").tobytes())
            elif b.kind == "pool":
                buf.write(struct.pack("<BII", 1, b.layer.p, b.layer.s))
            elif b.kind == "fmp":
                buf.write(struct.pack("<BdQ", 2, b.layer.ratio, b.layer.seed))
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Network":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a network checkpoint")
        off = 4
        version, lat, n_input, classes, field = struct.unpack_from("<IIIII", data, off)
        off += 20
        (alen,) = struct.unpack_from("<I", data, off)
        off += 4
        arch = data[off:off + alen].decode()
        off += alen
        lattice = _LATTICE_FROM_CODE[lat]
        spec = plan(parse(arch, lattice, n_input),
                    input_size=field if "FMP" in arch else None)
        net = cls(spec, classes, np.random.default_rng(0))
        (nblocks,) = struct.unpack_from("<I", data, off)
        off += 4
        param_blocks = [b for b in net.blocks if b.kind != "relu"]
        if nblocks != len(param_blocks):
            raise ValueError("checkpoint does not match architecture")
        for b in param_blocks:
            (code,) = struct.unpack_from("<B", data, off)
            if code in (0, 3):
                f, s, n_in, n_out = struct.unpack_from("<IIII", data, off + 1)
                off += 1 + 16
                l = b.layer
                if (f, s, n_in, n_out) != (l.geometry.f, l.geometry.s, l.n_in, l.n_out):
                    raise ValueError("checkpoint layer shape mismatch")
                nW = l.W.size
                l.W[...] = np.frombuffer(data, "<f4", count=nW, offset=off).reshape(l.W.shape)
                off += 4 * nW
                l.B[...] = np.frombuffer(data, "<f4", count=l.B.size, offset=off)
                off += 4 * l.B.size
            elif code == 1:
                p, s = struct.unpack_from("<II", data, off + 1)
                off += 1 + 8
                if (p, s) != (b.layer.p, b.layer.s):
                    raise ValueError("checkpoint pool shape mismatch")
            elif code == 2:
                ratio, seed = struct.unpack_from("<dQ", data, off + 1)
                off += 1 + 16
                b.layer.ratio = ratio
                b.layer.seed = int(seed)
        return net
