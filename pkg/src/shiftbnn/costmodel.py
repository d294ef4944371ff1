"""Analytic off-chip traffic, footprint, latency and energy model.

Compares the two noise-handling strategies on fixed network presets:
STORE writes every per-weight Gaussian draw off-chip during the forward
pass and reads it back for the fused backward/gradient pass; SHIFT
regenerates the draws on chip by reversing the generator, so its noise
traffic is exactly zero.  Everything else (parameter and feature-map
movement, MAC counts) is identical between the strategies.

Accounting rules, per layer l with |W_l| weights and D_l output values,
S ensemble samples, b bytes per value:

  noise (STORE):   S*|W_l|*b written in FW + S*|W_l|*b read in BW/GC
                   (fused consumption counted as one read; set
                   eps_double_read to charge BW and GC separately)
  parameters:      2*|W_l|*b read in FW, again in BW, written at update
  feature maps:    D_l written in FW and read in GC, errors E_l written
                   and read in BW, each scaled by S
  MACs:            one multiply-accumulate per weight-position per
                   output element, per stage (FW, BW, GC), per sample

No tiling is modeled: buffers are assumed large enough that each tensor
crosses the off-chip boundary the minimal number of times above.  The
point-estimate ("DNN") baseline uses the same shapes with one sample,
no noise traffic and single-copy weights.

Latency assumes double buffering: a layer costs
max(macs / macs_per_cycle, traffic_bytes / bw_dram) cycles.  Energy is
e_dram * bytes + e_mac * macs.  The shipped constants are a documented
profile, not measurements; headline comparisons are ratios, which cancel
the constants wherever both sides share them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

STAGES = ("fw", "bw", "gc")


@dataclass(frozen=True)
class CostParams:
    bytes_per_value: int = 2          # 16-bit values
    e_dram: float = 20.0              # pJ per byte moved off-chip
    e_mac: float = 0.5                # pJ per MAC
    bw_dram: float = 43.0             # bytes per cycle; calibrated, see README
    macs_per_cycle: int = 256         # 16 tiles x 16 PEs
    frequency: float = 200e6          # Hz
    eps_double_read: bool = False     # charge the noise read in BW and GC

    def __post_init__(self):
        for name in ("bytes_per_value", "e_dram", "e_mac", "bw_dram",
                     "macs_per_cycle", "frequency"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LayerCost:
    """Shape-derived counts for one weight layer."""

    name: str
    kind: str          # "conv" | "fc"
    weights: int       # |W_l|
    out_acts: int      # D_l, output values of this layer
    macs: int          # MACs of one forward evaluation, one sample

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.weights, self.out_acts, self.macs) <= 0:
            raise ValueError(f"layer {self.name}: counts must be positive")


def conv_cost(name: str, n_in: int, m_out: int, k: int, out_hw: int) -> LayerCost:
    w = m_out * n_in * k * k
    return LayerCost(name, "conv", w, m_out * out_hw * out_hw, w * out_hw * out_hw)


def fc_cost(name: str, n_in: int, m_out: int) -> LayerCost:
    return LayerCost(name, "fc", m_out * n_in, m_out, m_out * n_in)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple[LayerCost, ...]

    @property
    def total_weights(self) -> int:
        return sum(l.weights for l in self.layers)

    @property
    def total_acts(self) -> int:
        return sum(l.out_acts for l in self.layers)


def _vgg16_layers() -> tuple[LayerCost, ...]:
    cfg = [(64, 224), (64, 224), (128, 112), (128, 112),
           (256, 56), (256, 56), (256, 56),
           (512, 28), (512, 28), (512, 28),
           (512, 14), (512, 14), (512, 14)]
    layers = []
    n_in = 3
    for i, (m, hw) in enumerate(cfg):
        layers.append(conv_cost(f"conv{i + 1}", n_in, m, 3, hw))
        n_in = m
    layers.append(fc_cost("fc1", 512 * 7 * 7, 4096))
    layers.append(fc_cost("fc2", 4096, 4096))
    layers.append(fc_cost("fc3", 4096, 1000))
    return tuple(layers)


def _resnet18_layers() -> tuple[LayerCost, ...]:
    layers = [conv_cost("conv1", 3, 64, 7, 112)]
    stages = [(64, 64, 56, False), (64, 128, 28, True),
              (128, 256, 14, True), (256, 512, 7, True)]
    for si, (n_in, m, hw, down) in enumerate(stages, start=2):
        layers.append(conv_cost(f"conv{si}a1", n_in, m, 3, hw))
        layers.append(conv_cost(f"conv{si}a2", m, m, 3, hw))
        if down:
            layers.append(conv_cost(f"conv{si}ds", n_in, m, 1, hw))
        layers.append(conv_cost(f"conv{si}b1", m, m, 3, hw))
        layers.append(conv_cost(f"conv{si}b2", m, m, 3, hw))
    layers.append(fc_cost("fc", 512, 1000))
    return tuple(layers)


MODEL_PRESETS = {
    "b-mlp": ModelSpec("b-mlp", (
        fc_cost("fc1", 784, 400),
        fc_cost("fc2", 400, 400),
        fc_cost("fc3", 400, 10),
    )),
    "b-lenet": ModelSpec("b-lenet", (
        conv_cost("conv1", 3, 6, 5, 28),
        conv_cost("conv2", 6, 16, 5, 10),
        fc_cost("fc1", 400, 120),
        fc_cost("fc2", 120, 84),
        fc_cost("fc3", 84, 10),
    )),
    "b-alexnet": ModelSpec("b-alexnet", (
        conv_cost("conv1", 3, 96, 11, 55),
        conv_cost("conv2", 96, 256, 5, 27),
        conv_cost("conv3", 256, 384, 3, 13),
        conv_cost("conv4", 384, 384, 3, 13),
        conv_cost("conv5", 384, 256, 3, 13),
        fc_cost("fc1", 256 * 6 * 6, 4096),
        fc_cost("fc2", 4096, 4096),
        fc_cost("fc3", 4096, 1000),
    )),
    "b-vgg": ModelSpec("b-vgg", _vgg16_layers()),
    "b-resnet": ModelSpec("b-resnet", _resnet18_layers()),
}


@dataclass(frozen=True)
class StageTraffic:
    eps_bytes: int = 0
    param_bytes: int = 0
    fmap_bytes: int = 0
    macs: int = 0

    @property
    def traffic_bytes(self) -> int:
        return self.eps_bytes + self.param_bytes + self.fmap_bytes


@dataclass
class TrafficReport:
    model: str
    strategy: str
    S: int
    # per_layer[layer_name][stage] -> StageTraffic
    per_layer: dict[str, dict[str, StageTraffic]] = field(default_factory=dict)

    def layer_total(self, layer: str) -> StageTraffic:
        stages = self.per_layer[layer].values()
        return StageTraffic(
            sum(s.eps_bytes for s in stages),
            sum(s.param_bytes for s in stages),
            sum(s.fmap_bytes for s in stages),
            sum(s.macs for s in stages),
        )

    @property
    def totals(self) -> StageTraffic:
        parts = [self.layer_total(name) for name in self.per_layer]
        return StageTraffic(
            sum(p.eps_bytes for p in parts),
            sum(p.param_bytes for p in parts),
            sum(p.fmap_bytes for p in parts),
            sum(p.macs for p in parts),
        )

    @property
    def eps_share(self) -> float:
        t = self.totals
        return t.eps_bytes / t.traffic_bytes


def traffic_per_iteration(model: ModelSpec, S: int, strategy: str,
                          params: CostParams) -> TrafficReport:
    """Off-chip bytes and MACs for one example-iteration (batch of one)."""
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    if strategy not in ("store", "shift"):
        raise ValueError(f"unknown strategy {strategy!r}")
    b = params.bytes_per_value
    report = TrafficReport(model.name, strategy, S)
    for layer in model.layers:
        eps = S * layer.weights * b if strategy == "store" else 0
        pw = 2 * layer.weights * b  # mu and sigma
        d = S * layer.out_acts * b
        macs = S * layer.macs
        eps_gc = eps if (strategy == "store" and params.eps_double_read) else 0
        report.per_layer[layer.name] = {
            # FW: write noise, read params, write activations
            "fw": StageTraffic(eps, pw, d, macs),
            # BW: read noise back, read params, write and read errors
            "bw": StageTraffic(eps, pw, 2 * d, macs),
            # GC: re-read activations, write updated params
            "gc": StageTraffic(eps_gc, pw, d, macs),
        }
    return report


def dnn_traffic(model: ModelSpec, params: CostParams) -> int:
    """Point-estimate baseline bytes: one sample, one weight copy, no noise."""
    b = params.bytes_per_value
    return sum(3 * l.weights * b + 4 * l.out_acts * b for l in model.layers)


def footprint(model: ModelSpec, S: int, strategy: str,
              params: CostParams) -> dict[str, int]:
    """Peak off-chip residency in bytes, by category.

    STORE must hold every drawn noise value from the forward pass until
    its fused backward consumption; SHIFT holds none.  Both keep the
    parameter pairs with their gradient accumulators and the retained
    per-sample activations.
    """
    b = params.bytes_per_value
    eps = S * model.total_weights * b if strategy == "store" else 0
    return {
        "eps": eps,
        "params": 4 * model.total_weights * b,  # mu, sigma + two accumulators
        "fmaps": S * model.total_acts * b,
    }


def latency_energy(model: ModelSpec, S: int, strategy: str,
                   params: CostParams) -> tuple[float, float]:
    """(cycles, energy) for one iteration under double buffering."""
    report = traffic_per_iteration(model, S, strategy, params)
    cycles = 0.0
    energy = 0.0
    for layer in model.layers:
        t = report.layer_total(layer.name)
        cycles += max(t.macs / params.macs_per_cycle,
                      t.traffic_bytes / params.bw_dram)
        energy += params.e_dram * t.traffic_bytes + params.e_mac * t.macs
    return cycles, energy


def layer_cycles(layer: LayerCost, stage_traffic: StageTraffic,
                 params: CostParams) -> float:
    return max(stage_traffic.macs / params.macs_per_cycle,
               stage_traffic.traffic_bytes / params.bw_dram)


# ---------------------------------------------------------------------------
# Mapping-scheme overhead comparator.
#
# Five ways to parallelize the conv loop nest over an n x n PE array,
# scored by the extra structure each needs to keep the backward pass's
# reorganized kernels flowing without re-fetching noise values.
# ---------------------------------------------------------------------------

MAPPINGS = ("MN_V1", "MN_V2", "RC", "K_V1", "BM_V1")


@dataclass(frozen=True)
class OverheadReport:
    mapping: str
    array_n: int
    swap_wires: int = 0
    adder_trees: int = 0          # extra n-input adder trees
    control_modes: int = 0
    square_array_required: bool = False
    dual_input_buffers: bool = False

    @property
    def rank_score(self) -> int:
        """Weighted structural cost; lower is better.

        Wires and control modes count singly, each extra n-input adder
        tree counts as n units of logic, and each structural constraint
        (square array, duplicated buffers) carries a fixed 10-unit
        penalty for the design freedom it removes.
        """
        flags = int(self.square_array_required) + int(self.dual_input_buffers)
        return (self.swap_wires + self.array_n * self.adder_trees
                + self.control_modes + 10 * flags)


def mapping_overhead(mapping: str, array_n: int) -> OverheadReport:
    """Structural overhead of retrieving noise in reverse under a mapping.

    MN_V1 swaps values between PE (m, n) and PE (n, m), needing a wire
    per ordered pair and a square array.  MN_V2 instead duplicates the
    per-column reduction, one extra n-input adder tree per column.  K_V1
    swaps along the kernel dimension, wire count like MN_V1 plus two
    control modes.  BM_V1 re-reduces across the batch-channel split with
    n extra adder trees and doubled input buffering.  RC retrieves along
    the output rows/columns, which only needs a second traversal mode in
    the existing address generators.
    """
    if array_n < 1:
        raise ValueError(f"array_n must be >= 1, got {array_n}")
    if mapping == "MN_V1":
        return OverheadReport(mapping, array_n,
                              swap_wires=array_n * (array_n - 1),
                              square_array_required=True)
    if mapping == "MN_V2":
        return OverheadReport(mapping, array_n, adder_trees=array_n)
    if mapping == "RC":
        return OverheadReport(mapping, array_n, control_modes=2)
    if mapping == "K_V1":
        return OverheadReport(mapping, array_n,
                              swap_wires=array_n * (array_n - 1),
                              control_modes=2)
    if mapping == "BM_V1":
        return OverheadReport(mapping, array_n, adder_trees=array_n,
                              dual_input_buffers=True)
    raise ValueError(f"unknown mapping {mapping!r}")


# ---------------------------------------------------------------------------
# CSV report I/O.
# ---------------------------------------------------------------------------

CSV_HEADER = ["model", "layer", "stage", "strategy", "eps_bytes",
              "param_bytes", "fmap_bytes", "macs", "cycles", "energy"]


def report_rows(model: ModelSpec, report: TrafficReport,
                params: CostParams) -> list[dict]:
    rows = []
    by_name = {l.name: l for l in model.layers}
    for name, stages in report.per_layer.items():
        for stage in STAGES:
            t = stages[stage]
            rows.append({
                "model": report.model, "layer": name, "stage": stage,
                "strategy": report.strategy,
                "eps_bytes": t.eps_bytes, "param_bytes": t.param_bytes,
                "fmap_bytes": t.fmap_bytes, "macs": t.macs,
                "cycles": layer_cycles(by_name[name], t, params),
                "energy": params.e_dram * t.traffic_bytes + params.e_mac * t.macs,
            })
    total = report.totals
    cycles, energy = latency_energy(model, report.S, report.strategy, params)
    rows.append({
        "model": report.model, "layer": "all", "stage": "total",
        "strategy": report.strategy,
        "eps_bytes": total.eps_bytes, "param_bytes": total.param_bytes,
        "fmap_bytes": total.fmap_bytes, "macs": total.macs,
        "cycles": cycles, "energy": energy,
    })
    return rows


def write_csv(path_or_file, rows: list[dict]) -> None:
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        f = open(path_or_file, "w", newline="")
        close = True
    else:
        f = path_or_file
    try:
        writer = csv.DictWriter(f, fieldnames=CSV_HEADER)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if close:
            f.close()


def read_csv(path_or_file) -> list[dict]:
    """Parse a report CSV back into typed row dicts."""
    if isinstance(path_or_file, io.TextIOBase):
        f, close = path_or_file, False
    else:
        f, close = open(path_or_file, newline=""), True
    try:
        rows = []
        for raw in csv.DictReader(f):
            row = dict(raw)
            for key in ("eps_bytes", "param_bytes", "fmap_bytes", "macs"):
                row[key] = int(row[key])
            for key in ("cycles", "energy"):
                row[key] = float(row[key])
            rows.append(row)
        return rows
    finally:
        if close:
            f.close()
