"""Exact layered flows on lattice graphs.

A pair of consecutive mass layers is matched by a source/sink network whose
maximum flow, when it saturates the source, yields a one-step transport plan.
Iterating over layers produces a transport plan per transition, and dividing
by the site masses turns the plans into Markov transition kernels whose path
measure reproduces every layer exactly.

All arithmetic on weights and flows is integer (shared denominator), so the
marginal identities below are exact equalities.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

from .lattice import LatticeGraph, StructuralError, WeightLayers


class FlowInfeasibleError(Exception):
    """Local conservation fails: some site set holds more mass than its
    one-step neighborhood can receive.

    Attributes: ``cut`` (the violating site set), ``deficit`` (numerator of
    the unroutable mass), ``layer`` (transition index, when known).
    """

    def __init__(self, cut, deficit, layer=None):
        self.cut = frozenset(cut)
        self.deficit = deficit
        self.layer = layer
        where = "" if layer is None else f" at transition {layer}"
        super().__init__(
            f"mass cannot be transported{where}: set {sorted(self.cut)} "
            f"overfills its neighborhood by {deficit} quanta"
        )


class PathCountError(Exception):
    """Path enumeration exceeded the configured cap."""


@dataclass(frozen=True)
class FlowNetwork:
    """Finite source/sink network with one-directional integer capacities."""

    n_nodes: int
    source: int
    sink: int
    capacities: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        seen = {}
        for u, v, c in self.capacities:
            if c < 0:
                raise StructuralError(f"negative capacity on ({u},{v})")
            if u == v:
                raise StructuralError(f"capacity on a self pair ({u},{u})")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise StructuralError(f"capacity on unknown nodes ({u},{v})")
            seen[(u, v)] = c
        for (u, v), c in seen.items():
            if c > 0 and seen.get((v, u), 0) > 0:
                raise StructuralError(f"two-directional capacity between {u} and {v}")

    @classmethod
    def layered(cls, w1, w2, graph: LatticeGraph) -> "FlowNetwork":
        """Two-layer transport network.

        Nodes: 0 = source, 1 = sink, then one copy of the sites per layer.
        Source edges carry w1, interior edges (u -> out-neighbor) carry w1(u),
        sink edges carry w2.
        """
        n = graph.n_sites
        if len(w1) != n or len(w2) != n:
            raise StructuralError(
                f"weights cover {len(w1)}/{len(w2)} sites, graph has {n}"
            )
        if any(x < 0 for x in w1) or any(x < 0 for x in w2):
            raise StructuralError("negative weights")
        caps = []
        for u in range(n):
            caps.append((0, 2 + u, w1[u]))
        for u in range(n):
            for v in graph.out_neighbors(u):
                caps.append((2 + u, 2 + n + v, w1[u]))
        for v in range(n):
            caps.append((2 + n + v, 1, w2[v]))
        return cls(2 + 2 * n, 0, 1, tuple(caps))

    def layer_nodes(self, n_sites: int):
        v1 = range(2, 2 + n_sites)
        v2 = range(2 + n_sites, 2 + 2 * n_sites)
        return v1, v2


class _Dinic:
    """Dinic's algorithm on integer capacities; deterministic given edge order."""

    def __init__(self, n: int):
        self.n = n
        self.to: list[int] = []
        self.cap: list[int] = []
        self.adj: list[list[int]] = [[] for _ in range(n)]

    def add_edge(self, u: int, v: int, c: int) -> int:
        idx = len(self.to)
        self.to.append(v)
        self.cap.append(c)
        self.adj[u].append(idx)
        self.to.append(u)
        self.cap.append(0)
        self.adj[v].append(idx + 1)
        return idx

    def _levels(self, s: int, t: int):
        level = [-1] * self.n
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for idx in self.adj[u]:
                v = self.to[idx]
                if self.cap[idx] > 0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[t] >= 0 else None

    def _blocking(self, s: int, t: int, level, it):
        total = 0
        # Iterative DFS with per-node edge pointers.
        stack = [(s, 0)]
        path: list[int] = []
        INF = 1 << 200
        while stack:
            u, _ = stack[-1]
            if u == t:
                pushed = min(self.cap[idx] for idx in path) if path else INF
                for idx in path:
                    self.cap[idx] -= pushed
                    self.cap[idx ^ 1] += pushed
                total += pushed
                # Backtrack to the lowest saturated edge.
                cut = next(i for i, idx in enumerate(path) if self.cap[idx] == 0)
                del stack[cut + 1:]
                del path[cut:]
                continue
            advanced = False
            while it[u] < len(self.adj[u]):
                idx = self.adj[u][it[u]]
                v = self.to[idx]
                if self.cap[idx] > 0 and level[v] == level[u] + 1:
                    stack.append((v, 0))
                    path.append(idx)
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                level[u] = -1
                stack.pop()
                if path:
                    path.pop()
                if stack:
                    it[stack[-1][0]] += 1
        return total

    def run(self, s: int, t: int) -> int:
        value = 0
        while True:
            level = self._levels(s, t)
            if level is None:
                return value
            it = [0] * self.n
            value += self._blocking(s, t, level, it)

    def residual_reachable(self, s: int) -> frozenset[int]:
        seen = {s}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for idx in self.adj[u]:
                v = self.to[idx]
                if self.cap[idx] > 0 and v not in seen:
                    seen.add(v)
                    queue.append(v)
        return frozenset(seen)


def max_flow(net: FlowNetwork):
    """Exact maximum flow.

    Returns ``(flows, value, cut)`` where ``flows`` maps saturating node pairs
    to integer flow, ``value`` equals the minimum cut capacity, and ``cut`` is
    the source side of a minimum cut (residual-reachable nodes).
    """
    engine = _Dinic(net.n_nodes)
    handles = []
    for u, v, c in net.capacities:
        handles.append((u, v, c, engine.add_edge(u, v, c)))
    value = engine.run(net.source, net.sink)
    flows = {}
    for u, v, c, idx in handles:
        f = c - engine.cap[idx]
        if f > 0:
            flows[(u, v)] = flows.get((u, v), 0) + f
    return flows, value, engine.residual_reachable(net.source)


def min_cut_value(net: FlowNetwork) -> int:
    return max_flow(net)[1]


def _violating_set(cut, graph: LatticeGraph, n: int) -> frozenset[int]:
    """Read a conservation violation off a deficient min cut.

    With S1/S2 the per-layer cut slices, the sites of S1 whose whole
    out-neighborhood lies in S2 overfill that neighborhood.
    """
    s1 = {u for u in range(n) if (2 + u) in cut}
    s2 = {v for v in range(n) if (2 + n + v) in cut}
    return frozenset(u for u in s1 if set(graph.out_neighbors(u)) <= s2)


def one_layer_flow(w1, w2, graph: LatticeGraph, sink_slack_bits: int | None = None):
    """Transport plan between two consecutive layers.

    Returns ``(flow, slack_used)``: ``flow`` maps site pairs (u, v in N+(u))
    to integer mass with out-marginal exactly w1 and in-marginal exactly w2
    when no slack is involved.  Raises FlowInfeasibleError with a violating
    site set when the local conservation law fails.

    ``sink_slack_bits``: optionally inflate sink capacities by 2^-bits to
    absorb quantization-level near-violations; any slack use is reported via
    the returned flag and relaxes the in-marginal by at most that factor.
    """
    total1, total2 = sum(w1), sum(w2)
    if total1 != total2:
        raise StructuralError(f"global conservation fails: {total1} != {total2}")
    net = FlowNetwork.layered(w1, w2, graph)
    flows, value, cut = max_flow(net)
    slack_used = False
    if value < total1 and sink_slack_bits is not None:
        slack_used = True
        n = graph.n_sites
        inflated = list(net.capacities)
        for i, (u, v, c) in enumerate(inflated):
            if v == 1:
                inflated[i] = (u, v, c + (c >> sink_slack_bits))
        net2 = FlowNetwork(net.n_nodes, 0, 1, tuple(inflated))
        flows, value, cut = max_flow(net2)
    if value < total1:
        bad = _violating_set(cut, graph, graph.n_sites)
        raise FlowInfeasibleError(bad, total1 - value)
    n = graph.n_sites
    plan = {}
    for (u, v), f in flows.items():
        if u >= 2 and v >= 2 + n:
            plan[(u - 2, v - 2 - n)] = f
    return plan, slack_used


@dataclass(frozen=True)
class LayeredFlow:
    """One transport plan per layer transition; all values exact integers."""

    den: int
    n_sites: int
    plans: tuple[tuple[tuple[int, int, int], ...], ...]
    slack_layers: tuple[int, ...] = ()

    @property
    def n_transitions(self) -> int:
        return len(self.plans)

    def edge_flows(self, i: int) -> dict[tuple[int, int], int]:
        return {(u, v): f for u, v, f in self.plans[i]}

    def out_marginal(self, i: int) -> tuple[int, ...]:
        out = [0] * self.n_sites
        for u, _, f in self.plans[i]:
            out[u] += f
        return tuple(out)

    def in_marginal(self, i: int) -> tuple[int, ...]:
        acc = [0] * self.n_sites
        for _, v, f in self.plans[i]:
            acc[v] += f
        return tuple(acc)

    def to_triples(self) -> list[tuple[int, int, int, int]]:
        """Sparse export: rows (transition, u, v, numerator)."""
        rows = []
        for i, plan in enumerate(self.plans):
            for u, v, f in plan:
                rows.append((i, u, v, f))
        return rows

    @classmethod
    def from_triples(cls, den, n_sites, n_transitions, rows) -> "LayeredFlow":
        plans: list[list[tuple[int, int, int]]] = [[] for _ in range(n_transitions)]
        for i, u, v, f in rows:
            plans[i].append((int(u), int(v), int(f)))
        return cls(den, n_sites, tuple(tuple(sorted(p)) for p in plans))


def layered_decomposition(weights: WeightLayers, graph: LatticeGraph,
                          sink_slack_bits: int | None = None) -> LayeredFlow:
    """One one-layer flow per consecutive pair of layers."""
    if weights.n_sites != graph.n_sites:
        raise StructuralError(
            f"weights cover {weights.n_sites} sites, graph has {graph.n_sites}"
        )
    plans = []
    slacked = []
    for i in range(weights.n_layers - 1):
        try:
            plan, slack_used = one_layer_flow(
                weights.layer(i), weights.layer(i + 1), graph, sink_slack_bits
            )
        except FlowInfeasibleError as err:
            raise FlowInfeasibleError(err.cut, err.deficit, layer=i) from None
        if slack_used:
            slacked.append(i)
        plans.append(tuple(sorted((u, v, f) for (u, v), f in plan.items())))
    return LayeredFlow(weights.den, weights.n_sites, tuple(plans), tuple(slacked))


@dataclass(frozen=True)
class PathEnsemble:
    """Markov path measure induced by a layered flow.

    The initial distribution is the normalized first layer; the transition
    kernel at step i sends u to v with probability f(i,u,v)/w_i(u).  Path
    weights are Z times the chain probabilities, where Z is the layer total.
    """

    weights: WeightLayers
    flow: LayeredFlow

    def __post_init__(self):
        w, lf = self.weights, self.flow
        if w.n_sites != lf.n_sites or w.n_layers != lf.n_transitions + 1:
            raise StructuralError("weights and flow shapes disagree")
        for i in range(lf.n_transitions):
            if lf.out_marginal(i) != w.layer(i):
                raise StructuralError(f"out-marginal mismatch at transition {i}")
            if lf.in_marginal(i) != w.layer(i + 1) and i not in lf.slack_layers:
                raise StructuralError(f"in-marginal mismatch at transition {i}")

    @property
    def n_layers(self) -> int:
        return self.weights.n_layers

    @property
    def total(self) -> Fraction:
        return Fraction(self.weights.layer_total, self.weights.den)

    def kernel(self, i: int) -> dict[int, list[tuple[int, Fraction]]]:
        """Row-stochastic transition map on the support of layer i."""
        w = self.weights.layer(i)
        rows: dict[int, list[tuple[int, Fraction]]] = {}
        for u, v, f in self.flow.plans[i]:
            if f > 0:
                rows.setdefault(u, []).append((v, Fraction(f, w[u])))
        return rows

    def initial_distribution(self) -> dict[int, Fraction]:
        total = self.weights.layer_total
        return {u: Fraction(n, total)
                for u, n in enumerate(self.weights.layer(0)) if n > 0}

    def push_forward(self) -> list[dict[int, Fraction]]:
        """Chain marginals per layer, exact; equals the normalized layers."""
        total = self.weights.layer_total
        dist = self.initial_distribution()
        out = [dict(dist)]
        for i in range(self.flow.n_transitions):
            nxt: dict[int, Fraction] = {}
            for u, v, f in self.flow.plans[i]:
                if f > 0:
                    nxt[v] = nxt.get(v, Fraction(0)) + Fraction(f, total)
            out.append(nxt)
            dist = nxt
        return out

    def enumerate_paths(self, min_weight=Fraction(0), cap: int = 200_000):
        """All paths with weight >= min_weight, exact.

        Weights are alpha(p) = Z * w1(p0)/Z * prod P_i = masses over the shared
        denominator.  With min_weight = 0 the full support is enumerated and
        the weights sum to the layer total; enumeration aborts with
        PathCountError beyond ``cap`` paths.
        """
        min_weight = Fraction(min_weight)
        den = self.weights.den
        plans = [self.flow.edge_flows(i) for i in range(self.flow.n_transitions)]
        succ: list[dict[int, list[int]]] = []
        for plan in plans:
            by_u: dict[int, list[int]] = {}
            for (u, v), f in sorted(plan.items()):
                if f > 0:
                    by_u.setdefault(u, []).append(v)
            succ.append(by_u)
        results: list[tuple[tuple[int, ...], Fraction]] = []

        def extend(prefix: list[int], weight: Fraction, depth: int):
            if weight < min_weight:
                return
            if depth == self.flow.n_transitions:
                results.append((tuple(prefix), weight))
                if len(results) > cap:
                    raise PathCountError(f"more than {cap} paths above weight {min_weight}")
                return
            u = prefix[-1]
            wu = self.weights.layer(depth)[u]
            for v in succ[depth].get(u, ()):
                f = plans[depth][(u, v)]
                prefix.append(v)
                extend(prefix, weight * Fraction(f, wu), depth + 1)
                prefix.pop()

        for u, n in enumerate(self.weights.layer(0)):
            if n > 0:
                extend([u], Fraction(n, den), 0)
        return results


def path_ensemble(flow: LayeredFlow, weights: WeightLayers) -> PathEnsemble:
    return PathEnsemble(weights, flow)


@dataclass(frozen=True)
class ConservationViolation:
    layer: int
    sites: frozenset[int]
    held: int
    receivable: int


@dataclass(frozen=True)
class ConservationReport:
    mode: str
    feasible: bool
    violations: tuple[ConservationViolation, ...]


def verify_local_conservation(weights: WeightLayers, graph: LatticeGraph,
                              mode: str = "cut-feasibility") -> ConservationReport:
    """Check sum_A w_i <= sum_{N+(A)} w_{i+1} for every site set A.

    ``cut-feasibility`` settles all subsets at once per transition by checking
    that the max-flow value saturates the layer total (the min-cut argument
    ties any deficiency to a violating set).  ``brute-force`` enumerates every
    subset directly and requires at most 20 sites.
    """
    n = graph.n_sites
    if weights.n_sites != n:
        raise StructuralError("weights do not match the graph")
    violations: list[ConservationViolation] = []
    if mode == "cut-feasibility":
        for i in range(weights.n_layers - 1):
            net = FlowNetwork.layered(weights.layer(i), weights.layer(i + 1), graph)
            _, value, cut = max_flow(net)
            if value < weights.layer_total:
                bad = _violating_set(cut, graph, n)
                held = sum(weights.layer(i)[u] for u in bad)
                recv = sum(weights.layer(i + 1)[v] for v in graph.neighborhood(bad))
                violations.append(ConservationViolation(i, bad, held, recv))
    elif mode == "brute-force":
        if n > 20:
            raise StructuralError(f"brute-force mode limited to 20 sites, got {n}")
        nbr_mask = []
        for u in range(n):
            m = 0
            for v in graph.out_neighbors(u):
                m |= 1 << v
            nbr_mask.append(m)
        for i in range(weights.n_layers - 1):
            wi = weights.layer(i)
            wj = weights.layer(i + 1)
            best: ConservationViolation | None = None
            for mask in range(1, 1 << n):
                held = 0
                reach = 0
                m = mask
                while m:
                    b = m & -m
                    u = b.bit_length() - 1
                    held += wi[u]
                    reach |= nbr_mask[u]
                    m ^= b
                recv = 0
                r = reach
                while r:
                    b = r & -r
                    recv += wj[b.bit_length() - 1]
                    r ^= b
                if held > recv:
                    cand = ConservationViolation(
                        i, frozenset(u for u in range(n) if mask >> u & 1), held, recv
                    )
                    if best is None or cand.held - cand.receivable > best.held - best.receivable:
                        best = cand
            if best is not None:
                violations.append(best)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ConservationReport(mode, not violations, tuple(violations))
