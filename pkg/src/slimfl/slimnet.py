"""Width-slimmable dense networks stored as flat parameter vectors.

A network is a stack of dense layers with ReLU6 (clamp to [0, 6]) between
them and raw logits at the output.  A narrow configuration keeps the first
ceil(dim * ratio) rows/columns of every slimmable dimension, so each
sub-width is nested inside the full-width parameter vector and can be
selected with a binary mask over the flat storage.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

_KIND_CODES = {"input": 0, "dense": 1, "output": 2}
_KIND_NAMES = {code: kind for kind, code in _KIND_CODES.items()}


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: weight block (out_dim, in_dim) followed by bias (out_dim)."""

    kind: str
    in_dim: int
    out_dim: int
    slim_input: bool
    slim_output: bool

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be >= 1")

    @property
    def size(self) -> int:
        return self.out_dim * self.in_dim + self.out_dim


@dataclass(frozen=True)
class Layout:
    """Ordered layer specs plus flat-vector offsets."""

    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("layout needs at least one layer")
        if self.layers[0].slim_input:
            raise ValueError("first layer must keep its raw input features whole")
        if self.layers[-1].slim_output:
            raise ValueError("last layer must keep its logits whole")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"adjacent layers disagree: out_dim {prev.out_dim} vs in_dim {nxt.in_dim}"
                )

    @cached_property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        """(weight_offset, bias_offset) of each layer into the flat vector."""
        out = []
        pos = 0
        for spec in self.layers:
            out.append((pos, pos + spec.out_dim * spec.in_dim))
            pos += spec.size
        return tuple(out)

    @cached_property
    def size(self) -> int:
        return sum(spec.size for spec in self.layers)

    @staticmethod
    def mlp(in_dim: int, hidden_dims: tuple[int, ...] | list[int], out_dim: int) -> "Layout":
        """Slimmable MLP: hidden widths shrink with the ratio, input/output stay whole."""
        hidden_dims = tuple(hidden_dims)
        if not hidden_dims:
            return Layout((LayerSpec("output", in_dim, out_dim, False, False),))
        layers = [LayerSpec("input", in_dim, hidden_dims[0], False, True)]
        for a, b in zip(hidden_dims, hidden_dims[1:]):
            layers.append(LayerSpec("dense", a, b, True, True))
        layers.append(LayerSpec("output", hidden_dims[-1], out_dim, True, False))
        return Layout(tuple(layers))


@dataclass(frozen=True, eq=False)
class SlimmableParams:
    """Flat float64 parameter vector with its layout.

    Treated as immutable by forward/backward; updates go through the
    optimizer, which returns a fresh vector.
    """

    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.layout.size,):
            raise ValueError(
                f"parameter vector has length {values.shape}, layout needs {self.layout.size}"
            )
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "SlimmableParams":
        return SlimmableParams(self.layout, values)


@dataclass(frozen=True, eq=False)
class WidthMask:
    """Binary selector over the flat parameter vector for one width ratio."""

    ratio: float
    bits: np.ndarray


def _ceil_dim(x: float) -> int:
    # small backoff so exact products like 10 * 0.1 do not round up a slot
    return max(1, math.ceil(x - 1e-9))


def active_dims(spec: LayerSpec, ratio: float) -> tuple[int, int]:
    """Kept (rows, cols) of a layer's weight block at the given width ratio."""
    rows = _ceil_dim(spec.out_dim * ratio) if spec.slim_output else spec.out_dim
    cols = _ceil_dim(spec.in_dim * ratio) if spec.slim_input else spec.in_dim
    return rows, cols


def build_mask(layout: Layout, ratio: float) -> WidthMask:
    """Mask keeping the first rows/columns of every slimmable dimension."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"width ratio must be in (0, 1], got {ratio}")
    bits = np.zeros(layout.size, dtype=bool)
    for spec, (w_off, b_off) in zip(layout.layers, layout.offsets):
        rows, cols = active_dims(spec, ratio)
        w_bits = bits[w_off:b_off].reshape(spec.out_dim, spec.in_dim)
        w_bits[:rows, :cols] = True
        bits[b_off : b_off + rows] = True
    return WidthMask(ratio=ratio, bits=bits)


def complement_bits(mask: WidthMask) -> np.ndarray:
    """Selector for everything outside the mask (the remaining segment)."""
    return ~mask.bits


@lru_cache(maxsize=None)
def masks_for(layout: Layout, ratios: tuple[float, ...]) -> tuple[WidthMask, ...]:
    return tuple(build_mask(layout, r) for r in ratios)


def _layer_views(params: SlimmableParams, mask: WidthMask, index: int):
    spec = params.layout.layers[index]
    w_off, b_off = params.layout.offsets[index]
    w = params.values[w_off:b_off].reshape(spec.out_dim, spec.in_dim)
    b = params.values[b_off : b_off + spec.out_dim]
    w_bits = mask.bits[w_off:b_off].reshape(spec.out_dim, spec.in_dim)
    b_bits = mask.bits[b_off : b_off + spec.out_dim]
    return spec, (w_off, b_off), w * w_bits, b * b_bits, w_bits, b_bits


def _check_batch(layout: Layout, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != layout.layers[0].in_dim:
        raise ValueError(
            f"batch shape {batch.shape} does not match input dimension "
            f"{layout.layers[0].in_dim}"
        )
    return batch


def _traced_forward(params: SlimmableParams, mask: WidthMask, batch: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    h = batch
    inputs, preacts = [], []
    n_layers = len(params.layout.layers)
    for i in range(n_layers):
        _, _, w_m, b_m, _, _ = _layer_views(params, mask, i)
        inputs.append(h)
        z = h @ w_m.T + b_m
        preacts.append(z)
        h = np.clip(z, 0.0, 6.0) if i < n_layers - 1 else z
    return h, inputs, preacts


def forward(params: SlimmableParams, mask: WidthMask, batch: np.ndarray) -> np.ndarray:
    """Logits of the masked network; equals the physically extracted sub-network."""
    batch = _check_batch(params.layout, batch)
    logits, _, _ = _traced_forward(params, mask, batch)
    return logits


def backward(
    params: SlimmableParams,
    mask: WidthMask,
    batch: np.ndarray,
    logits_grad: np.ndarray,
) -> np.ndarray:
    """Gradient of the loss w.r.t. the flat vector, given d(loss)/d(logits).

    Coordinates outside the mask receive exactly zero.
    """
    batch = _check_batch(params.layout, batch)
    logits_grad = np.asarray(logits_grad, dtype=np.float64)
    out_dim = params.layout.layers[-1].out_dim
    if logits_grad.shape != (batch.shape[0], out_dim):
        raise ValueError(
            f"logits gradient shape {logits_grad.shape} does not match "
            f"({batch.shape[0]}, {out_dim})"
        )
    _, inputs, preacts = _traced_forward(params, mask, batch)
    grad = np.zeros(params.layout.size, dtype=np.float64)
    g = logits_grad
    for i in reversed(range(len(params.layout.layers))):
        spec, (w_off, b_off), w_m, _, w_bits, b_bits = _layer_views(params, mask, i)
        grad[w_off:b_off] = ((g.T @ inputs[i]) * w_bits).ravel()
        grad[b_off : b_off + spec.out_dim] = g.sum(axis=0) * b_bits
        if i > 0:
            z = preacts[i - 1]
            g = (g @ w_m) * ((z > 0.0) & (z < 6.0))
    return grad


@dataclass(frozen=True)
class ModelCost:
    flops_per_image: int
    param_count: int
    bits_per_round: int


def model_cost(layout: Layout, mask: WidthMask, bits_per_param: float = 32.0) -> ModelCost:
    """Dense-layer multiply-add FLOPs plus one clamp per hidden activation."""
    flops = 0
    n_layers = len(layout.layers)
    for i, spec in enumerate(layout.layers):
        rows, cols = active_dims(spec, mask.ratio)
        flops += 2 * rows * cols
        if i < n_layers - 1:
            flops += rows
    param_count = int(mask.bits.sum())
    return ModelCost(
        flops_per_image=flops,
        param_count=param_count,
        bits_per_round=int(round(param_count * bits_per_param)),
    )


@dataclass(frozen=True)
class ReferenceCost:
    mflops_per_round: float
    param_count: int
    bits_per_round: int


# Per-round cost figures of the reference ultra-light MobileNet profile,
# carried as constants for energy accounting.  The desk-scale MLP has its
# own computed costs via model_cost().
REFERENCE_COST_HALF = ReferenceCost(mflops_per_round=0.79, param_count=2293, bits_per_round=86344)
REFERENCE_COST_FULL = ReferenceCost(mflops_per_round=2.76, param_count=4586, bits_per_round=172688)


def init_params(layout: Layout, rng: np.random.Generator) -> SlimmableParams:
    """He-style normal init for the clamped activation; biases start at zero."""
    values = np.zeros(layout.size, dtype=np.float64)
    for spec, (w_off, b_off) in zip(layout.layers, layout.offsets):
        scale = math.sqrt(2.0 / spec.in_dim)
        values[w_off:b_off] = rng.normal(0.0, scale, size=spec.out_dim * spec.in_dim)
    return SlimmableParams(layout, values)


_CHECKPOINT_FLAG_SLIM_INPUT = 1
_CHECKPOINT_FLAG_SLIM_OUTPUT = 2


def save_checkpoint(path, params: SlimmableParams) -> None:
    """Little-endian file: u32 layer count, per-layer u32 kind/in/out/flags, f64 values."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(params.layout.layers)))
        for spec in params.layout.layers:
            flags = 0
            if spec.slim_input:
                flags |= _CHECKPOINT_FLAG_SLIM_INPUT
            if spec.slim_output:
                flags |= _CHECKPOINT_FLAG_SLIM_OUTPUT
            fh.write(struct.pack("<IIII", _KIND_CODES[spec.kind], spec.in_dim, spec.out_dim, flags))
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> SlimmableParams:
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) < 4:
            raise ValueError("checkpoint truncated: missing layer count")
        (n_layers,) = struct.unpack("<I", raw)
        layers = []
        for i in range(n_layers):
            raw = fh.read(16)
            if len(raw) < 16:
                raise ValueError(f"checkpoint truncated: layer {i} header incomplete")
            kind_code, in_dim, out_dim, flags = struct.unpack("<IIII", raw)
            if kind_code not in _KIND_NAMES:
                raise ValueError(f"checkpoint layer {i}: unknown kind code {kind_code}")
            layers.append(
                LayerSpec(
                    kind=_KIND_NAMES[kind_code],
                    in_dim=in_dim,
                    out_dim=out_dim,
                    slim_input=bool(flags & _CHECKPOINT_FLAG_SLIM_INPUT),
                    slim_output=bool(flags & _CHECKPOINT_FLAG_SLIM_OUTPUT),
                )
            )
        layout = Layout(tuple(layers))
        data = fh.read(layout.size * 8)
        if len(data) < layout.size * 8:
            raise ValueError("checkpoint truncated: parameter vector incomplete")
        values = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return SlimmableParams(layout, values)
