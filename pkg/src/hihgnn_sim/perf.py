"""Throughput-level hardware model: replay an event trace into metrics.

Costs come from operation sizes, not port-level simulation: matrix-vector
work runs on per-lane systolic arrays (8x8 MAC tiles, 8 cycles per tile,
16-cycle fill/drain per dispatch), elementwise work on per-lane 8-way SIMD
cores, and an extra SIMD module outside the lanes handles global fusion and
the final division. DRAM is a bandwidth abstraction (64-byte lines at a
fixed bytes/cycle); on-chip buffers are LRU-managed byte pools. Intermediate
values produced on chip cost nothing on first touch, are written back once
when evicted, and are re-read from DRAM on a later miss.

Fused mode overlaps each lane's systolic and SIMD streams and floors the
makespan at total DRAM cycles. Staged mode serializes the kernel phases
(projection | coefficients | aggregation | local fusion | global fusion |
final) granting each phase the whole machine, which mirrors the traditional
kernel-by-kernel execution flow and guarantees fused <= staged.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, asdict

import numpy as np

from . import fusion
from .models import model_dispatch

MB = 1 << 20


@dataclass
class HardwareConfig:
    """Machine description; power figures are for the four-lane part and
    scale linearly per lane."""

    num_lanes: int = 4
    clock_hz: float = 1.0e9
    systolic_arrays_per_lane: int = 96
    array_dim: int = 8                      # 8x8 MACs per array
    simd_cores_per_lane: int = 128
    simd_width: int = 8
    fp_buf_bytes: int = int(2.44 * MB)
    na_buf_bytes: int = int(14.52 * MB)
    sf_buf_bytes: int = int(0.12 * MB)
    att_buf_bytes: int = int(0.38 * MB)
    dram_bytes_per_cycle: int = 512         # 512 GB/s HBM at 1 GHz
    dram_line_bytes: int = 64
    dram_energy_per_bit: float = 7.0e-12
    element_bytes: int = 4
    crossbar_bytes_per_cycle: int = 64
    na_queue_capacity: int = 4096           # default balancing threshold
    # module power (W) at four lanes, from the synthesis characteristics
    systolic_w: float = 6.7584
    simd_w: float = 3.2768
    fp_buf_w: float = 0.20290
    na_buf_w: float = 1.20742
    sf_buf_w: float = 0.00998
    att_buf_w: float = 0.03160
    crossbar_w: float = 0.44082
    others_w: float = 0.07395

    def __post_init__(self):
        numeric = {k: v for k, v in asdict(self).items()}
        for name, value in numeric.items():
            if isinstance(value, (int, float)) and value <= 0:
                raise ValueError(f"hardware config field {name} must be positive")
        row = 64 * self.element_bytes
        for name in ("fp_buf_bytes", "na_buf_bytes", "sf_buf_bytes", "att_buf_bytes"):
            if getattr(self, name) < row:
                raise ValueError(f"{name} smaller than one feature row")

    @classmethod
    def from_overrides(cls, overrides: dict | None) -> "HardwareConfig":
        return cls(**(overrides or {}))

    def to_json(self) -> dict:
        return asdict(self)


def mvm_cycles(rows: int, cols: int, arrays_available: int, array_dim: int = 8) -> int:
    """Tiled matrix-vector multiply: ceil(rows/8)*ceil(cols/8) tiles, 8 cycles
    each in steady state, spread over the available arrays, plus a 16-cycle
    fill/drain for the dispatch."""
    tiles = -(-rows // array_dim) * (-(-cols // array_dim))
    arrays_used = max(1, min(arrays_available, tiles))
    return -(-tiles // arrays_used) * array_dim + 2 * array_dim


def mvm_occupancy(rows: int, cols: int, arrays_available: int,
                  array_dim: int = 8) -> float:
    """Array-seconds of one dispatch as lane-equivalent cycles.

    A dispatch smaller than the lane's array count leaves the other arrays
    free for concurrent dispatches, so its occupancy is its wall time scaled
    by the fraction of arrays it holds. A lane's systolic time is then
    max(sum of occupancies, longest single dispatch): work-conserving
    sharing with the single-dispatch latency as the span floor.
    """
    tiles = -(-rows // array_dim) * (-(-cols // array_dim))
    arrays_used = max(1, min(arrays_available, tiles))
    wall = mvm_cycles(rows, cols, arrays_available, array_dim)
    return wall * arrays_used / arrays_available


def simd_cycles(elements: int, cores_available: int, width: int = 8) -> int:
    return -(-elements // (cores_available * width))


class BufferModel:
    """LRU byte pool with cold/capacity miss distinction.

    First touch of a key is a cold fill (produced on chip, no DRAM read);
    a miss on a previously seen key reads its bytes back from DRAM. Evicted
    entries write back when dirty. `resident` tracks bytes <= capacity.
    """

    def __init__(self, name: str, capacity: int):
        self.name = name
        self.capacity = capacity
        self.entries: OrderedDict = OrderedDict()  # key -> [bytes, dirty]
        self.known: set = set()
        self.resident = 0
        self.hits = 0
        self.misses = 0
        self.cold = 0

    def touch(self, key, nbytes: int, dirty: bool):
        """Returns (dram_read_bytes, dram_write_bytes) caused by this access."""
        read = write = 0
        entry = self.entries.get(key)
        if entry is not None:
            self.hits += 1
            entry[1] = entry[1] or dirty
            self.entries.move_to_end(key)
            return 0, 0
        if key in self.known:
            self.misses += 1
            read = nbytes
        else:
            self.cold += 1
            self.known.add(key)
        while self.resident + nbytes > self.capacity and self.entries:
            _, (ebytes, edirty) = self.entries.popitem(last=False)
            self.resident -= ebytes
            if edirty:
                write += ebytes
        self.resident += nbytes
        self.entries[key] = [nbytes, dirty]
        return read, write

    @property
    def accesses(self) -> int:
        return self.hits + self.misses + self.cold

    def hit_rate(self) -> float:
        return self.hits / self.accesses if self.accesses else 1.0


def dram_access(nbytes: int, cfg: HardwareConfig, buffer: BufferModel, key):
    """Access DRAM-resident data through a buffer: hit costs nothing, a miss
    charges the line-rounded bytes at the DRAM bandwidth and installs the
    entry (LRU eviction on overflow)."""
    buffer.known.add(key)  # DRAM-resident: even the first miss reads
    rounded = round_to_line(nbytes, cfg.dram_line_bytes)
    read, write = buffer.touch(key, rounded, dirty=False)
    bytes_from_dram = read + write
    cycles = -(-bytes_from_dram // cfg.dram_bytes_per_cycle) if bytes_from_dram else 0
    return cycles, bytes_from_dram


def round_to_line(nbytes: int, line: int) -> int:
    return -(-nbytes // line) * line


@dataclass
class MetricsReport:
    mode: str
    num_lanes: int
    total_cycles: int
    stage_cycles: dict           # work totals per stage
    dram_read_bytes: int
    dram_write_bytes: int
    buffer_hit_rates: dict
    lane_busy: list
    energy_j: dict
    na_deferred: int
    event_count: int
    speedup_vs: dict | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    def csv_header(self) -> list:
        row = self.to_csv_row()
        return list(row.keys())

    def to_csv_row(self) -> dict:
        flat = {
            "mode": self.mode,
            "num_lanes": self.num_lanes,
            "total_cycles": self.total_cycles,
            "dram_read_bytes": self.dram_read_bytes,
            "dram_write_bytes": self.dram_write_bytes,
            "na_deferred": self.na_deferred,
            "event_count": self.event_count,
        }
        for k in sorted(self.stage_cycles):
            flat[f"cycles_{k}"] = self.stage_cycles[k]
        for k in sorted(self.buffer_hit_rates):
            flat[f"hit_{k}"] = repr(self.buffer_hit_rates[k])
        for k in sorted(self.energy_j):
            flat[f"energy_{k}_j"] = repr(self.energy_j[k])
        flat["lane_busy_min"] = repr(min(self.lane_busy) if self.lane_busy else 0.0)
        flat["lane_busy_max"] = repr(max(self.lane_busy) if self.lane_busy else 0.0)
        if self.speedup_vs:
            flat["baseline"] = self.speedup_vs.get("baseline", "")
            flat["speedup"] = repr(self.speedup_vs.get("speedup", 1.0))
        return flat


# phase order for the staged (kernel-serial) mode
_PHASES = (fusion.FP, fusion.THETA, fusion.NA, fusion.LSF, fusion.GSF, fusion.FINAL)
_PHASE_OF = {fusion.FP: fusion.FP, fusion.THETA: fusion.THETA,
             fusion.NA: fusion.NA, fusion.NA_DEFER: fusion.NA,
             fusion.LSF: fusion.LSF, fusion.SYNC: fusion.LSF,
             fusion.GSF: fusion.GSF, fusion.FINAL: fusion.FINAL}
_STAGE_LABEL = {fusion.FP: "FP", fusion.THETA: "NA", fusion.NA: "NA",
                fusion.NA_DEFER: "NA", fusion.SYNC: "LSF",
                fusion.LSF: "LSF", fusion.GSF: "GSF", fusion.FINAL: "FINAL"}


def replay(trace, order, plan, cfg: HardwareConfig, mode: str = "fused") -> MetricsReport:
    """Replay a trace against the hardware model.

    Fused: per-lane systolic/SIMD overlap, DRAM-bandwidth floor. Staged:
    kernel phases serialize, each getting the full machine. The same trace
    (same work, same reuse) feeds both modes.
    """
    if mode not in ("fused", "staged"):
        raise ValueError(f"unknown replay mode {mode!r}")
    if plan is not None and plan.num_lanes != cfg.num_lanes:
        raise ValueError(
            f"trace/plan mismatch: plan has {plan.num_lanes} lanes, "
            f"config has {cfg.num_lanes}")
    if order is not None:
        if set(order.ids) != set(trace.sg_ids):
            raise ValueError("trace/plan mismatch: order ids differ from trace")

    behavior = model_dispatch(trace.model_kind)
    hidden = trace.hidden_dim
    L = cfg.num_lanes
    arrays = cfg.systolic_arrays_per_lane
    cores = cfg.simd_cores_per_lane
    width = cfg.simd_width
    ebytes = cfg.element_bytes
    line = cfg.dram_line_bytes
    row_bytes = round_to_line(hidden * ebytes, line)
    part_bytes = round_to_line(hidden * ebytes + ebytes, line)
    theta_bytes = 2 * ebytes
    is_han = trace.model_kind == "HAN"
    uses_theta = behavior.na in ("attn", "shgn")

    fp_buf = BufferModel("fp_buf", cfg.fp_buf_bytes)
    na_buf = BufferModel("na_buf", cfg.na_buf_bytes)
    sf_buf = BufferModel("sf_buf", cfg.sf_buf_bytes)
    att_buf = BufferModel("att_buf", cfg.att_buf_bytes)

    # (phase, lane) work accumulators; SIMD column L is the external module.
    # Systolic work is tracked as fractional occupancy plus a span floor.
    syst = np.zeros((len(_PHASES), L))
    syst_span = np.zeros((len(_PHASES), L))
    simd = np.zeros((len(_PHASES), L + 1), dtype=np.int64)
    xbar = np.zeros(len(_PHASES), dtype=np.int64)
    dram_phase = np.zeros(len(_PHASES), dtype=np.int64)
    stage_work: dict = {"FP": 0, "NA": 0, "LSF": 0, "GSF": 0, "FINAL": 0}
    read_bytes = 0
    write_bytes = 0
    deferred = 0

    cost_mvm_theta = mvm_occupancy(1, hidden, arrays, cfg.array_dim)
    span_theta = mvm_cycles(1, hidden, arrays, cfg.array_dim)
    cost_simd_na = simd_cycles(hidden + 2, cores, width)
    # the staged flow materializes the softmax weights in a separate
    # edge-wise pass before aggregating; the decomposed pipeline folds the
    # exponentiation into the aggregation dispatch
    cost_simd_na_staged = cost_simd_na + (
        simd_cycles(2 * hidden, cores, width) if uses_theta else 0)
    cost_simd_lsf = simd_cycles((3 * hidden if is_han else hidden) + 2, cores, width)
    cost_mvm_lsf = mvm_occupancy(hidden, hidden, arrays, cfg.array_dim) \
        if is_han else 0.0
    span_lsf = mvm_cycles(hidden, hidden, arrays, cfg.array_dim) if is_han else 0
    cost_simd_gsf = simd_cycles(hidden + 1, cores, width)
    cost_simd_final = simd_cycles(hidden, cores, width)
    staged = mode == "staged"
    phase_index = {p: i for i, p in enumerate(_PHASES)}

    stages = trace.column("stage").tolist()
    layers = trace.column("layer").tolist()
    sgs_c = trace.column("sg").tolist()
    lanes_c = trace.column("lane").tolist()
    vts = trace.column("vt").tolist()
    us = trace.column("u").tolist()
    vs = trace.column("v").tolist()
    colss = trace.column("cols").tolist()
    bytess = trace.column("bytes").tolist()

    type_scope = behavior.fp_scope == "type"
    FPc, THETAc, NAc, NADEFc = fusion.FP, fusion.THETA, fusion.NA, fusion.NA_DEFER
    LSFc, GSFc, FINALc, SYNCc = fusion.LSF, fusion.GSF, fusion.FINAL, fusion.SYNC

    def hkey(layer, sg, vt, idx):
        # projected-feature identity mirrors the bitmap reuse scope
        if sg < 0:
            return ("h", layer, "self", vt, idx)
        if type_scope:
            return ("h", layer, vt, idx)
        return ("h", layer, sg, vt, idx)

    for i in range(len(stages)):
        st = stages[i]
        lane = lanes_c[i]
        pi = phase_index[_PHASE_OF[st]]
        dr = dw = 0
        if st == NAc:
            u, v, sg, layer = us[i], vs[i], sgs_c[i], layers[i]
            r1, w1 = fp_buf.touch(hkey(layer, sg, vts[i], u), row_bytes, False)
            r2, w2 = na_buf.touch(("p", layer, sg, v), part_bytes, True)
            dr, dw = r1 + r2, w1 + w2
            if uses_theta:
                r3, w3 = att_buf.touch(("th", layer, sg, 0, u), theta_bytes, False)
                r4, w4 = att_buf.touch(("th", layer, sg, 1, v), theta_bytes, False)
                dr += r3 + r4
                dw += w3 + w4
            simd[pi, lane] += cost_simd_na_staged if staged else cost_simd_na
        elif st == NADEFc:
            deferred += 1
        elif st == FPc:
            u, layer, sg, cols = us[i], layers[i], sgs_c[i], colss[i]
            if lane < 0:
                lane = u % L  # self-projection work spreads round-robin
            syst[pi, lane] += mvm_occupancy(hidden, cols, arrays, cfg.array_dim)
            wall = mvm_cycles(hidden, cols, arrays, cfg.array_dim)
            if wall > syst_span[pi, lane]:
                syst_span[pi, lane] = wall
            dr = round_to_line(cols * ebytes, line)  # raw feature fetch
            r1, w1 = fp_buf.touch(hkey(layer, sg, vts[i], u), row_bytes, True)
            dr += r1
            dw += w1
        elif st == THETAc:
            u, layer, sg, half = us[i], layers[i], sgs_c[i], vs[i]
            syst[pi, lane] += cost_mvm_theta
            if span_theta > syst_span[pi, lane]:
                syst_span[pi, lane] = span_theta
            r1, w1 = fp_buf.touch(hkey(layer, sg, vts[i], u), row_bytes, False)
            r2, w2 = att_buf.touch(("th", layer, sg, half, u), theta_bytes, True)
            dr, dw = r1 + r2, w1 + w2
        elif st == LSFc:
            v, layer, sg = vs[i], layers[i], sgs_c[i]
            simd[pi, lane] += cost_simd_lsf
            if cost_mvm_lsf:
                syst[pi, lane] += cost_mvm_lsf
                if span_lsf > syst_span[pi, lane]:
                    syst_span[pi, lane] = span_lsf
            r1, w1 = na_buf.touch(("p", layer, sg, v), part_bytes, False)
            r2, w2 = na_buf.touch(("z", layer, sg, v), row_bytes, True)
            dr, dw = r1 + r2, w1 + w2
        elif st == SYNCc:
            cyc = -(-bytess[i] // cfg.crossbar_bytes_per_cycle)
            xbar[pi] += cyc
            simd[pi, lane] += cyc  # the native lane stalls on the transfer
        elif st == GSFc:
            v, layer, sg, vt = vs[i], layers[i], sgs_c[i], vts[i]
            simd[pi, L] += cost_simd_gsf
            r1, w1 = na_buf.touch(("z", layer, sg, v), row_bytes, False)
            r2, w2 = sf_buf.touch(("g", layer, vt, v), row_bytes, True)
            dr, dw = r1 + r2, w1 + w2
        elif st == FINALc:
            u, layer, vt = us[i], layers[i], vts[i]
            simd[pi, L] += cost_simd_final
            r1, w1 = sf_buf.touch(("g", layer, vt, u), row_bytes, False)
            dr, dw = r1, w1 + row_bytes  # final embeddings stream out
        read_bytes += dr
        write_bytes += dw
        dram_phase[pi] += dr + dw

    # per-stage work totals (cycles of work, lanes summed; crossbar transfer
    # cycles are already inside the native lane's SIMD column)
    for pi, phase in enumerate(_PHASES):
        label = _STAGE_LABEL[phase]
        stage_work[label] = stage_work.get(label, 0) + int(syst[pi].sum()) \
            + int(simd[pi].sum())

    dram_cycles_total = -(-(read_bytes + write_bytes) // cfg.dram_bytes_per_cycle)
    # lane systolic time: work-conserving occupancy with a span floor
    lane_syst = np.ceil(np.maximum(syst.sum(axis=0), syst_span.max(axis=0)))
    lane_simd = simd.sum(axis=0)[:L]
    ext_simd = int(simd[:, L].sum())

    if mode == "fused":
        lane_time = np.maximum(lane_syst, lane_simd)
        compute = int(lane_time.max()) + ext_simd
        total = max(compute, int(dram_cycles_total))
    else:
        total = 0
        for pi in range(len(_PHASES)):
            syst_t = np.ceil(np.maximum(syst[pi], syst_span[pi])).max()
            t = max(int(syst_t),
                    int(simd[pi, :L].max()),
                    int(simd[pi, L]),
                    -(-int(dram_phase[pi]) // cfg.dram_bytes_per_cycle))
            total += t
        lane_time = np.maximum(lane_syst, lane_simd)

    busy = [float(t) / total if total else 0.0 for t in lane_time.tolist()]

    energy = _energy(cfg, total, lane_syst, lane_simd, ext_simd, int(xbar.sum()),
                     read_bytes + write_bytes)
    return MetricsReport(
        mode=mode,
        num_lanes=L,
        total_cycles=int(total),
        stage_cycles={k: int(v) for k, v in stage_work.items()},
        dram_read_bytes=int(read_bytes),
        dram_write_bytes=int(write_bytes),
        buffer_hit_rates={b.name: b.hit_rate()
                          for b in (fp_buf, na_buf, sf_buf, att_buf)},
        lane_busy=busy,
        energy_j=energy,
        na_deferred=int(deferred),
        event_count=len(trace),
    )


def _energy(cfg, total_cycles, lane_syst, lane_simd, ext_simd, xbar_cycles,
            dram_bytes):
    """Joules per component: DRAM at pJ/bit, compute modules on busy cycles,
    buffers as always-on power over the run."""
    t = 1.0 / cfg.clock_hz
    lane_scale = cfg.num_lanes / 4.0
    syst_w_lane = cfg.systolic_w / 4.0
    simd_w_lane = cfg.simd_w / 4.0
    buffers_w = (cfg.fp_buf_w + cfg.na_buf_w + cfg.sf_buf_w + cfg.att_buf_w
                 + cfg.others_w) * lane_scale
    return {
        "dram": float(dram_bytes * 8 * cfg.dram_energy_per_bit),
        "systolic": float(int(lane_syst.sum()) * t * syst_w_lane),
        "simd": float((int(lane_simd.sum()) + ext_simd) * t * simd_w_lane),
        "buffers": float(total_cycles * t * buffers_w),
        "crossbar": float(xbar_cycles * t * cfg.crossbar_w * lane_scale),
    }


def energy(report: MetricsReport, cfg: HardwareConfig) -> dict:
    """Recompute the energy breakdown from a report (pJ/bit DRAM accounting
    plus busy-cycle module power); matches the replay's own numbers."""
    bits = (report.dram_read_bytes + report.dram_write_bytes) * 8
    out = dict(report.energy_j)
    out["dram"] = float(bits * cfg.dram_energy_per_bit)
    return out


def save_metrics_json(report: MetricsReport, path):
    with open(path, "w") as f:
        json.dump(report.to_json(), f, indent=1, sort_keys=True)
        f.write("\n")


def save_metrics_csv(report: MetricsReport, path):
    row = report.to_csv_row()
    with open(path, "w") as f:
        f.write(",".join(row.keys()) + "\n")
        f.write(",".join(str(v) for v in row.values()) + "\n")
