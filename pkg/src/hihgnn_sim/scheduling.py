"""Workload balancing across lanes and similarity-aware execution ordering.

Balancing follows the threshold/overflow procedure: per round every
still-pending task list is clipped at the per-lane threshold and assigned to
its native lane; the excess feeds an overflow pool that first fills lanes
with no native work this round, then tops up under-threshold lanes, both in
ascending lane order. Task lists are handled as counts with half-open
position ranges so multi-million-edge workloads plan in microseconds.

Execution ordering builds a similarity hypergraph over semantic graphs
(edge weight 1 - eta/sum(eta), eta = number of common endpoint vertex
types), augments it with weight-1 completion edges and two zero-weight
virtual endpoints, and extracts the minimum-cost Hamiltonian path (exact
bitmask DP up to 20 nodes, nearest-neighbor + 2-opt beyond). Cost ties are
broken toward the lexicographically smallest id sequence.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

EXACT_HAMILTON_LIMIT = 20
_COST_TOL = 1e-9


@dataclass(frozen=True)
class LaneAssignment:
    round: int
    lane: int
    sg_id: str
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass
class LanePlan:
    num_lanes: int
    threshold: int
    rounds: list = field(default_factory=list)  # list of per-round assignment lists

    def assignments(self):
        for rnd in self.rounds:
            yield from rnd

    def lane_of_positions(self, sg_id: str, count: int) -> np.ndarray:
        """Position -> lane map for one task list."""
        lanes = np.full(count, -1, dtype=np.int32)
        for a in self.assignments():
            if a.sg_id == sg_id:
                lanes[a.start:a.stop] = a.lane
        if count and np.any(lanes < 0):
            raise ValueError(f"plan does not cover task list {sg_id!r}")
        return lanes

    def native_lane(self, sg_index: int) -> int:
        return sg_index % self.num_lanes

    def to_json(self) -> dict:
        return {
            "num_lanes": self.num_lanes,
            "threshold": self.threshold,
            "rounds": [[[a.round, a.lane, a.sg_id, a.start, a.stop] for a in rnd]
                       for rnd in self.rounds],
        }

    @classmethod
    def from_json(cls, d: dict) -> "LanePlan":
        plan = cls(int(d["num_lanes"]), int(d["threshold"]))
        plan.rounds = [[LaneAssignment(r, l, s, a, b) for (r, l, s, a, b) in rnd]
                       for rnd in d["rounds"]]
        return plan


def single_lane_plan(task_lists) -> "LanePlan":
    """Everything on lane 0 in one round per list (balancing disabled)."""
    plan = LanePlan(num_lanes=1, threshold=0)
    plan.rounds = [[LaneAssignment(0, 0, sg_id, 0, count)
                    for (sg_id, count) in task_lists]]
    return plan


def native_only_plan(task_lists, num_lanes: int) -> "LanePlan":
    """Each list entirely on its native lane; no overflow redistribution."""
    plan = LanePlan(num_lanes=num_lanes, threshold=0)
    plan.rounds = [[LaneAssignment(0, i % num_lanes, sg_id, 0, count)
                    for i, (sg_id, count) in enumerate(task_lists)]]
    return plan


def balance_workloads(task_lists, num_lanes: int, threshold: int) -> LanePlan:
    """Round-based threshold/overflow balancing over (sg_id, count) lists."""
    if num_lanes < 1 or threshold < 1:
        raise ValueError("num_lanes and threshold must be >= 1")
    ids = [sg_id for sg_id, _ in task_lists]
    remaining = [int(c) for _, c in task_lists]
    if any(c < 0 for c in remaining):
        raise ValueError("negative task count")
    next_pos = [0] * len(ids)
    plan = LanePlan(num_lanes=num_lanes, threshold=threshold)
    rnd = 0
    while any(remaining):
        assigned = [0] * num_lanes
        round_asgs = []

        def give(lane, i, amount):
            a = LaneAssignment(rnd, lane, ids[i], next_pos[i], next_pos[i] + amount)
            round_asgs.append(a)
            next_pos[i] += amount
            remaining[i] -= amount
            assigned[lane] += amount

        # native assignment, clipped at the threshold
        for i in range(len(ids)):
            if remaining[i] == 0:
                continue
            lane = i % num_lanes
            take = min(remaining[i], threshold - assigned[lane])
            if take > 0:
                give(lane, i, take)
        # overflow: idle lanes first, then under-threshold lanes
        pool = [i for i in range(len(ids)) if remaining[i] > 0]
        for lane_group in (
                [l for l in range(num_lanes) if assigned[l] == 0],
                [l for l in range(num_lanes) if 0 < assigned[l] < threshold]):
            for lane in lane_group:
                while assigned[lane] < threshold and pool:
                    i = pool[0]
                    take = min(remaining[i], threshold - assigned[lane])
                    give(lane, i, take)
                    if remaining[i] == 0:
                        pool.pop(0)
        plan.rounds.append(round_asgs)
        rnd += 1
    return plan


def sync_partials(plan, lane_partials, merged_registry: set | None = None):
    """Merge per-lane (numerator, denominator) partials across lanes.

    lane_partials: {lane: {vertex: (num_vector, den_scalar)}}. Lanes merge in
    ascending order. A vertex may be merged once per run; pass a registry set
    to assert against double merges.
    """
    merged = {}
    for lane in sorted(lane_partials):
        for v, (num, den) in lane_partials[lane].items():
            if v in merged:
                acc_num, acc_den = merged[v]
                merged[v] = (acc_num + num, acc_den + den)
            else:
                merged[v] = (np.array(num, dtype=np.float64, copy=True), float(den))
    if merged_registry is not None:
        for v in merged:
            assert v not in merged_registry, f"vertex {v} merged twice"
            merged_registry.add(v)
    return merged


# ---------------------------------------------------------------------------
# Similarity hypergraph + Hamilton path
# ---------------------------------------------------------------------------

@dataclass
class SimilarityHypergraph:
    ids: list
    eta: np.ndarray      # pairwise shared-type counts (n x n, zero diagonal)
    weights: np.ndarray  # n x n: real edges 1 - eta/sum(eta), completion edges 1

    @property
    def n(self) -> int:
        return len(self.ids)

    def augmented(self) -> np.ndarray:
        """Full matrix with two virtual endpoints (indices n, n+1) at weight 0."""
        n = self.n
        full = np.ones((n + 2, n + 2))
        full[:n, :n] = self.weights
        full[n:, :] = 0.0
        full[:, n:] = 0.0
        return full


def build_hypergraph(sgs) -> SimilarityHypergraph:
    """One node per semantic graph; edges weighted by shared endpoint types."""
    if not sgs:
        raise ValueError("need at least one semantic graph")
    ids = [sg.id for sg in sgs]
    touched = [frozenset(sg.vertex_types_touched) for sg in sgs]
    n = len(ids)
    eta = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            eta[i, j] = eta[j, i] = len(touched[i] & touched[j])
    total = int(eta.sum() // 2)
    weights = np.ones((n, n))
    np.fill_diagonal(weights, 0.0)
    if total > 0:
        shared = eta > 0
        weights[shared] = 1.0 - eta[shared] / total
    return SimilarityHypergraph(ids=ids, eta=eta, weights=weights)


@dataclass
class ExecutionOrder:
    ids: list
    cost: float | None = None

    def to_json(self) -> dict:
        return {"ids": list(self.ids), "cost": self.cost}

    @classmethod
    def from_json(cls, d: dict) -> "ExecutionOrder":
        return cls(ids=list(d["ids"]), cost=d.get("cost"))


def order_cost(h: SimilarityHypergraph, ids) -> float:
    """Path cost of an id sequence (virtual endpoint legs cost 0)."""
    idx = {sid: i for i, sid in enumerate(h.ids)}
    cost = 0.0
    for a, b in zip(ids, ids[1:]):
        cost += h.weights[idx[a], idx[b]]
    return cost


def _hamilton_dp(W: np.ndarray):
    """D[mask][last] = min cost over paths from a virtual start visiting
    exactly `mask`, ending at `last` (virtual legs cost 0)."""
    n = W.shape[0]
    full = (1 << n) - 1
    D = np.full((full + 1, n), np.inf)
    for k in range(n):
        D[1 << k, k] = 0.0
    for mask in range(1, full + 1):
        row = D[mask]
        if not np.any(np.isfinite(row)):
            continue
        candidates = np.min(row[:, None] + W, axis=0)
        free = [k for k in range(n) if not mask & (1 << k)]
        for k in free:
            nxt = mask | (1 << k)
            if candidates[k] < D[nxt, k]:
                D[nxt, k] = candidates[k]
    return D


def _lex_reconstruct(h: SimilarityHypergraph, D: np.ndarray, opt: float):
    """Greedy forward walk picking the smallest id whose prefix + best suffix
    still meets the optimal cost (within tolerance)."""
    n = h.n
    W = h.weights
    order_by_id = sorted(range(n), key=lambda i: h.ids[i])
    tol = _COST_TOL * max(1.0, abs(opt))
    seq = []
    visited = 0
    cost_so_far = 0.0
    prev = None
    for _ in range(n):
        for k in order_by_id:
            if visited & (1 << k):
                continue
            step = 0.0 if prev is None else W[prev, k]
            rest = ((1 << n) - 1) & ~visited & ~(1 << k)
            suffix = D[rest | (1 << k), k] if rest else 0.0
            # D already charges 0 for the virtual leg at the far end
            if rest == 0:
                suffix = 0.0
            if cost_so_far + step + suffix <= opt + tol:
                seq.append(k)
                visited |= 1 << k
                cost_so_far += step
                prev = k
                break
        else:
            raise AssertionError("reconstruction failed to extend the path")
    return seq, cost_so_far


def _nearest_neighbor_2opt(h: SimilarityHypergraph):
    n = h.n
    W = h.weights
    order_by_id = sorted(range(n), key=lambda i: h.ids[i])
    seq = []
    visited = set()
    prev = None
    for _ in range(n):
        best = None
        for k in order_by_id:
            if k in visited:
                continue
            step = 0.0 if prev is None else W[prev, k]
            if best is None or step < best[0] - _COST_TOL:
                best = (step, k)
        seq.append(best[1])
        visited.add(best[1])
        prev = best[1]
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                cand = seq[:i] + seq[i:j + 1][::-1] + seq[j + 1:]
                if _seq_cost(W, cand) < _seq_cost(W, seq) - _COST_TOL:
                    seq = cand
                    improved = True
    return seq, _seq_cost(W, seq)


def _seq_cost(W, seq):
    return float(sum(W[a, b] for a, b in zip(seq, seq[1:])))


def shortest_hamilton_path(h: SimilarityHypergraph) -> ExecutionOrder:
    """Minimum-cost path through all semantic graphs between the two virtual
    endpoints; exact for n <= 20, heuristic beyond."""
    n = h.n
    if n == 1:
        return ExecutionOrder(ids=list(h.ids), cost=0.0)
    if n <= EXACT_HAMILTON_LIMIT:
        D = _hamilton_dp(h.weights)
        full = (1 << n) - 1
        opt = float(np.min(D[full]))
        seq, cost = _lex_reconstruct(h, D, opt)
    else:
        seq, cost = _nearest_neighbor_2opt(h)
    return ExecutionOrder(ids=[h.ids[k] for k in seq], cost=float(cost))


def random_order(ids, seed: int) -> ExecutionOrder:
    """Seeded Fisher-Yates permutation (baseline scheduling)."""
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    return ExecutionOrder(ids=shuffled, cost=None)


def save_schedule(path, order: ExecutionOrder, plan: LanePlan | None = None):
    doc = {"order": order.to_json()}
    if plan is not None:
        doc["plan"] = plan.to_json()
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_schedule(path):
    with open(path) as f:
        doc = json.load(f)
    order = ExecutionOrder.from_json(doc["order"])
    plan = LanePlan.from_json(doc["plan"]) if "plan" in doc else None
    return order, plan
