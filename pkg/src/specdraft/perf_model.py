"""Roofline cost model for verifying a draft of s_q tokens in one pass.

Per transformer layer and operation, the model counts matmul FLOPs and
the tensor/weight bytes moved, then charges each operation the larger of
its compute time (FLOPs / peak) and its memory time (bytes / bandwidth).
Dimensions follow the usual decoder layout: hidden size ``h = n * d``
(attention heads times head dim), MLP width ``h_mlp``, batch ``b``,
``s_q`` query positions and ``s_kv`` cached positions.

Two planning quantities fall out of the model: the free speculation
budget (the b*s_q product at which the q/k/v/o projections stop being
memory-bound, beyond which extra draft tokens cost full compute) and the
expected end-to-end speedup (accepted tokens per step divided by the
relative cost of the wider forward pass).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import kvconfig

OP_NAMES = ("q_proj", "k_proj", "v_proj", "attention", "o_proj", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    h: int
    n: int
    d: int
    h_mlp: int
    n_layers: int
    bytes_per_param: int = 2

    def __post_init__(self) -> None:
        for name in ("h", "n", "d", "h_mlp", "n_layers", "bytes_per_param"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.h != self.n * self.d:
            raise ValueError(f"h must equal n * d, got h={self.h}, n*d={self.n * self.d}")


@dataclass(frozen=True)
class HardwareSpec:
    peak_flops: float
    mem_bandwidth: float

    def __post_init__(self) -> None:
        if self.peak_flops <= 0:
            raise ValueError(f"peak_flops must be positive, got {self.peak_flops}")
        if self.mem_bandwidth <= 0:
            raise ValueError(f"mem_bandwidth must be positive, got {self.mem_bandwidth}")


@dataclass(frozen=True)
class CostRow:
    """Per-layer cost of one operation.  ``flops_to_io`` is FLOPs per moved
    element (bytes divided by the parameter width), the intensity the
    roofline compares against peak-FLOPs/bandwidth."""

    flops: float
    bytes_read: float
    bytes_written: float
    flops_to_io: float


@dataclass(frozen=True)
class CostTable:
    q_proj: CostRow
    k_proj: CostRow
    v_proj: CostRow
    attention: CostRow
    o_proj: CostRow
    mlp: CostRow

    def rows(self) -> dict[str, CostRow]:
        return {name: getattr(self, name) for name in OP_NAMES}


def op_costs(
    m: ModelSpec,
    b: float,
    s_q: float,
    s_kv: float,
    include_mask_io: bool = False,
) -> CostTable:
    """Per-layer cost rows for a forward pass of ``s_q`` draft positions.

    ``include_mask_io`` adds the packed tree-attention mask (b * s_q^2
    bits) to the attention reads; it is negligible and off by default.
    """
    if b < 1 or s_q < 1:
        raise ValueError(f"b and s_q must be >= 1, got b={b}, s_q={s_q}")
    if s_kv < 0:
        raise ValueError(f"s_kv must be >= 0, got {s_kv}")
    bp = float(m.bytes_per_param)

    def row(flops: float, read_elems: float, write_elems: float, extra_read_bytes: float = 0.0) -> CostRow:
        read_bytes = read_elems * bp + extra_read_bytes
        write_bytes = write_elems * bp
        return CostRow(flops, read_bytes, write_bytes, flops / ((read_bytes + write_bytes) / bp))

    proj = row(2 * b * s_q * m.h**2, b * s_q * m.h + m.h**2, b * s_q * m.h)
    mask_bytes = b * s_q * s_q / 8 if include_mask_io else 0.0
    attention = row(
        4 * b * s_q * (s_q + s_kv) * m.n * m.d,
        b * m.n * (2 * s_kv + 3 * s_q) * m.d,
        b * m.n * s_q * m.d,
        extra_read_bytes=mask_bytes,
    )
    mlp = row(4 * b * s_q * m.h * m.h_mlp, b * s_q * m.h + 2 * m.h * m.h_mlp, b * s_q * m.h)
    return CostTable(proj, proj, proj, attention, proj, mlp)


def forward_time(
    hw: HardwareSpec,
    m: ModelSpec,
    b: float,
    s_q: float,
    s_kv: float,
    include_mask_io: bool = False,
) -> float:
    """Modeled seconds for one forward pass over all layers."""
    table = op_costs(m, b, s_q, s_kv, include_mask_io=include_mask_io)
    total = 0.0
    for op in table.rows().values():
        total += max(op.flops / hw.peak_flops, (op.bytes_read + op.bytes_written) / hw.mem_bandwidth)
    return m.n_layers * total


def relative_cost(hw: HardwareSpec, m: ModelSpec, b: float, s_q: float, s_kv: float) -> float:
    """Forward time normalized to a single-position (s_q=1) pass."""
    return forward_time(hw, m, b, s_q, s_kv) / forward_time(hw, m, b, 1, s_kv)


def cost_curve(
    hw: HardwareSpec,
    m: ModelSpec,
    b: float,
    s_q_values: Sequence[int],
    s_kv: float,
) -> dict[int, float]:
    base = forward_time(hw, m, b, 1, s_kv)
    return {int(s): forward_time(hw, m, b, s, s_kv) / base for s in s_q_values}


def free_budget(hw: HardwareSpec, m: ModelSpec) -> float:
    """The b*s_q product at which the projection matmuls turn compute-bound.

    Solves flops/peak == bytes/bandwidth for a projection, whose intensity
    in elements is 1 / (1/h + 1/(2 b s_q)); with the byte width folded in,
    the budget is 1 / (2 * (1/(bytes_per_param * ratio) - 1/h)) for ratio =
    peak_flops / mem_bandwidth.  Below the budget extra draft positions
    ride along nearly free; returns +inf when the projections stay
    memory-bound for every finite b*s_q.
    """
    ratio = hw.peak_flops / hw.mem_bandwidth
    gap = 1.0 / (m.bytes_per_param * ratio) - 1.0 / m.h
    if gap <= 0:
        return math.inf
    return 1.0 / (2.0 * gap)


def slope_breakpoint(s_q_values: Sequence[float], times: Sequence[float], rel_tol: float = 0.01) -> float:
    """First grid point where the curve reaches its final (steepest) slope.

    Time-vs-s_q curves from this model are convex piecewise-linear: each
    operation contributes a kink where it turns compute-bound, and past
    the last kink the slope is constant.  The returned value is the s_q at
    which the final linear regime begins, i.e. where the free speculation
    budget is exhausted.
    """
    if len(s_q_values) != len(times):
        raise ValueError("s_q_values and times must align")
    if len(s_q_values) < 2:
        raise ValueError("need at least two points")
    slopes = [
        (times[i + 1] - times[i]) / (s_q_values[i + 1] - s_q_values[i])
        for i in range(len(times) - 1)
    ]
    final = slopes[-1]
    for i, slope in enumerate(slopes):
        if slope >= (1.0 - rel_tol) * final:
            return s_q_values[i]
    return s_q_values[-1]  # pragma: no cover - final slope always qualifies


def expected_speedup(
    accept_curve: Mapping[int, float],
    cost_curve: Mapping[int, float],
) -> tuple[int, float]:
    """Best speculation length and its speedup: argmax accept(s)/cost(s).

    Both curves must cover the same s_q values including 1, normalized so
    accept(1) == cost(1) == 1.  Ties prefer the smaller s_q.
    """
    if set(accept_curve) != set(cost_curve):
        raise ValueError("domain mismatch between acceptance and cost curves")
    if 1 not in accept_curve:
        raise ValueError("curves must include s_q=1")
    if abs(accept_curve[1] - 1.0) > 1e-6 or abs(cost_curve[1] - 1.0) > 1e-6:
        raise ValueError("curves must be normalized to accept(1) == cost(1) == 1")
    best_s, best_ratio = 1, accept_curve[1] / cost_curve[1]
    for s in sorted(accept_curve):
        ratio = accept_curve[s] / cost_curve[s]
        if ratio > best_ratio:
            best_s, best_ratio = s, ratio
    return best_s, best_ratio


_MODEL_KEYS = ("h", "n", "d", "h_mlp", "n_layers", "bytes_per_param")
_HW_KEYS = ("peak_flops", "mem_bandwidth")


def load_model_spec(path: str | os.PathLike) -> ModelSpec:
    items = kvconfig.read_kv(path)
    unknown = set(items) - set(_MODEL_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown model keys {sorted(unknown)}")
    missing = set(_MODEL_KEYS) - {"bytes_per_param"} - set(items)
    if missing:
        raise ValueError(f"{path}: missing model keys {sorted(missing)}")
    values = {key: int(items[key]) for key in items}
    return ModelSpec(**values)


def load_hardware_spec(path: str | os.PathLike) -> HardwareSpec:
    items = kvconfig.read_kv(path)
    unknown = set(items) - set(_HW_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown hardware keys {sorted(unknown)}")
    missing = set(_HW_KEYS) - set(items)
    if missing:
        raise ValueError(f"{path}: missing hardware keys {sorted(missing)}")
    return HardwareSpec(float(items["peak_flops"]), float(items["mem_bandwidth"]))
