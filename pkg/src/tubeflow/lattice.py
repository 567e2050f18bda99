"""Periodic lattice graphs and exact fixed-point mass layers.

All mass bookkeeping downstream of the flow solver is exact: weights are
integers over a shared power-of-two denominator, so conservation checks are
equalities rather than tolerance tests.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

DEFAULT_DENOMINATOR_BITS = 40


class StructuralError(ValueError):
    """Shapes, site sets or totals of the inputs do not line up."""


@dataclass(frozen=True)
class LatticeGraph:
    """Periodic integer lattice with the one-step ell-infinity neighborhood.

    Sites are the points of a d-dimensional torus of side ``S`` indexed in
    row-major order.  The default adjacency connects each site to the 3^d
    sites (self included) within ell-infinity distance one, with wraparound.
    A custom adjacency callback (site index -> iterable of out-neighbor
    indices) may replace the default rule; the callback must be deterministic.
    """

    d: int
    S: int
    adjacency: Callable[[int], Sequence[int]] | None = None
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise StructuralError(f"dimension must be positive, got {self.d}")
        if self.S < 3:
            raise StructuralError(f"torus side must be at least 3, got {self.S}")
        n = self.n_sites
        if self.adjacency is None:
            out = tuple(self._h_neighbors(i) for i in range(n))
        else:
            out = tuple(tuple(self.adjacency(i)) for i in range(n))
        incoming: list[list[int]] = [[] for _ in range(n)]
        for u in range(n):
            for v in out[u]:
                if not 0 <= v < n:
                    raise StructuralError(f"adjacency of site {u} leaves the lattice: {v}")
                incoming[v].append(u)
        object.__setattr__(self, "_out", out)
        object.__setattr__(self, "_in", tuple(tuple(vs) for vs in incoming))

    @property
    def n_sites(self) -> int:
        return self.S**self.d

    def site_coords(self, i: int) -> tuple[int, ...]:
        coords = []
        for _ in range(self.d):
            coords.append(i % self.S)
            i //= self.S
        return tuple(reversed(coords))

    def site_index(self, coords: Sequence[int]) -> int:
        i = 0
        for c in coords:
            i = i * self.S + (c % self.S)
        return i

    def _h_neighbors(self, i: int) -> tuple[int, ...]:
        # Self-loop first, then ascending index: a deterministic edge order
        # under which stationary mass is routed through the self edge.
        coords = self.site_coords(i)
        others = sorted(
            self.site_index([c + o for c, o in zip(coords, offs)])
            for offs in itertools.product((-1, 0, 1), repeat=self.d)
            if any(offs)
        )
        return (i, *others)

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        return self._out[i]

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        return self._in[i]

    def neighborhood(self, sites) -> frozenset[int]:
        """N+(A): every site reachable in one step from A."""
        result: set[int] = set()
        for a in sites:
            result.update(self._out[a])
        return frozenset(result)


@dataclass(frozen=True)
class WeightLayers:
    """Nonnegative site masses per time layer, exact over a shared denominator.

    Every layer must sum to the same ``layer_total`` (global conservation);
    violating inputs are rejected at construction.
    """

    den: int
    layers: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.den <= 0:
            raise StructuralError("denominator must be positive")
        if len(self.layers) < 2:
            raise StructuralError("need at least two layers")
        sizes = {len(layer) for layer in self.layers}
        if len(sizes) != 1:
            raise StructuralError(f"layers have mismatched site counts: {sorted(sizes)}")
        totals = []
        for n, layer in enumerate(self.layers):
            if any(w < 0 for w in layer):
                raise StructuralError(f"negative weight in layer {n}")
            totals.append(sum(layer))
        if len(set(totals)) != 1:
            raise StructuralError(f"layer totals differ: {totals}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_sites(self) -> int:
        return len(self.layers[0])

    @property
    def layer_total(self) -> int:
        return sum(self.layers[0])

    def layer(self, i: int) -> tuple[int, ...]:
        return self.layers[i]

    def to_json(self, d: int, S: int) -> str:
        if S**d != self.n_sites:
            raise StructuralError(f"S^d = {S**d} does not match {self.n_sites} sites")
        doc = {"d": d, "S": S, "denominator": self.den,
               "layers": [list(layer) for layer in self.layers]}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> tuple["WeightLayers", LatticeGraph]:
        doc = json.loads(text)
        graph = LatticeGraph(int(doc["d"]), int(doc["S"]))
        layers = tuple(tuple(int(w) for w in layer) for layer in doc["layers"])
        weights = cls(int(doc["denominator"]), layers)
        if weights.n_sites != graph.n_sites:
            raise StructuralError("layer size does not match the declared torus")
        return weights, graph


def quantize_layers(float_layers, den_bits: int = DEFAULT_DENOMINATOR_BITS,
                    target_total: float | None = None):
    """Quantize real layers to a shared power-of-two denominator.

    Each layer is scaled to ``target_total`` (default: the first layer's sum)
    and rounded to integer numerators; the per-layer rounding residue is added
    to the heaviest site so that all integer totals agree exactly.  Returns
    the WeightLayers plus the residues (in quanta) that were absorbed.
    """
    den = 1 << den_bits
    raw = [list(map(float, layer)) for layer in float_layers]
    if target_total is None:
        target_total = sum(raw[0])
    total_int = round(target_total * den)
    layers = []
    residues = []
    for layer in raw:
        s = sum(layer)
        if s <= 0.0:
            if total_int != 0:
                raise StructuralError("cannot renormalize an all-zero layer to positive total")
            layers.append(tuple(0 for _ in layer))
            residues.append(0)
            continue
        scale = target_total / s
        nums = [round(w * scale * den) for w in layer]
        residue = total_int - sum(nums)
        rich = max(range(len(nums)), key=lambda i: (nums[i], -i))
        nums[rich] += residue
        if nums[rich] < 0:
            raise StructuralError("quantization residue exceeds the heaviest site")
        layers.append(tuple(nums))
        residues.append(residue)
    return WeightLayers(den, tuple(layers)), tuple(residues)
