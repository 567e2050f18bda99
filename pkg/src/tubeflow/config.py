"""Experiment configuration: JSON documents validated into frozen dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .schrodinger import Grid


class ConfigError(ValueError):
    """Configuration document failed validation; message carries the key path."""


def _require(doc: dict, key: str, kind, where: str, default=None, required=False):
    if key not in doc:
        if required:
            raise ConfigError(f"{where}.{key}: missing required key")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class GridConfig:
    dimension: int = 1
    lattice_side: int = 16
    points_per_cell: int = 4

    def grid(self) -> Grid:
        return Grid(self.dimension, float(self.lattice_side),
                    self.lattice_side * self.points_per_cell)

    @classmethod
    def parse(cls, doc: dict, where: str = "grid") -> "GridConfig":
        cfg = cls(
            _require(doc, "dimension", int, where, 1),
            _require(doc, "lattice_side", int, where, 16),
            _require(doc, "points_per_cell", int, where, 4),
        )
        if cfg.dimension not in (1, 2):
            raise ConfigError(f"{where}.dimension: must be 1 or 2")
        if cfg.lattice_side < 3:
            raise ConfigError(f"{where}.lattice_side: must be at least 3")
        if cfg.points_per_cell < 4:
            raise ConfigError(f"{where}.points_per_cell: must be at least 4")
        m = cfg.lattice_side * cfg.points_per_cell
        if m < 16 or m & (m - 1):
            raise ConfigError(f"{where}: grid points per axis {m} must be a power of two >= 16")
        return cfg


@dataclass(frozen=True)
class KernelConfig:
    dilation: float = 2.0
    denominator_bits: int = 40

    @classmethod
    def parse(cls, doc: dict, where: str = "kernel") -> "KernelConfig":
        cfg = cls(
            _require(doc, "dilation", float, where, 2.0),
            _require(doc, "denominator_bits", int, where, 40),
        )
        if cfg.dilation < 1.0:
            raise ConfigError(f"{where}.dilation: must be at least 1")
        if not 8 <= cfg.denominator_bits <= 62:
            raise ConfigError(f"{where}.denominator_bits: must be in [8, 62]")
        return cfg


@dataclass(frozen=True)
class TauConfig:
    policy: str = "calibrate"
    value: float | None = None
    max: float = 1.0
    ensemble_fields: int = 4
    subsets: int = 32
    seed: int = 0

    @classmethod
    def parse(cls, doc: dict, where: str = "tau") -> "TauConfig":
        policy = _require(doc, "policy", str, where, "calibrate")
        if policy not in ("fixed", "calibrate"):
            raise ConfigError(f"{where}.policy: must be 'fixed' or 'calibrate'")
        value = _require(doc, "value", float, where)
        if policy == "fixed" and (value is None or value <= 0):
            raise ConfigError(f"{where}.value: fixed policy needs a positive timestep")
        return cls(
            policy, value,
            _require(doc, "max", float, where, 1.0),
            _require(doc, "ensemble_fields", int, where, 4),
            _require(doc, "subsets", int, where, 32),
            _require(doc, "seed", int, where, 0),
        )


@dataclass(frozen=True)
class FieldConfig:
    profile: str = "random-phase"
    window_center: tuple[float, ...] = (0.0,)
    window_radius: float = 1.0
    seed: int = 0

    @classmethod
    def parse(cls, doc: dict, dimension: int, where: str = "field") -> "FieldConfig":
        profile = _require(doc, "profile", str, where, "random-phase")
        if profile not in ("gaussian", "bump", "random-phase"):
            raise ConfigError(f"{where}.profile: unknown profile {profile!r}")
        center = doc.get("window_center", [0.0] * dimension)
        if not isinstance(center, list) or len(center) != dimension:
            raise ConfigError(f"{where}.window_center: need {dimension} coordinates")
        return cls(
            profile,
            tuple(float(c) for c in center),
            _require(doc, "window_radius", float, where, 1.0),
            _require(doc, "seed", int, where, 0),
        )


@dataclass(frozen=True)
class DecompositionConfig:
    time_radius: float = 0.5
    layers: int | None = None      # overrides time_radius: half-window = layers * tau / 2
    tube_threshold: float = 1e-3
    domination_time_samples: int = 4

    @classmethod
    def parse(cls, doc: dict, where: str = "decomposition") -> "DecompositionConfig":
        layers = _require(doc, "layers", int, where)
        if layers is not None and (layers < 2 or layers % 2):
            raise ConfigError(f"{where}.layers: must be an even count >= 2")
        return cls(
            _require(doc, "time_radius", float, where, 0.5),
            layers,
            _require(doc, "tube_threshold", float, where, 1e-3),
            _require(doc, "domination_time_samples", int, where, 4),
        )


@dataclass(frozen=True)
class VerifyConfig:
    fs_fields: int = 4
    fs_subsets: int = 48
    lc_fields: int = 4
    seed: int = 1

    @classmethod
    def parse(cls, doc: dict, where: str = "verify") -> "VerifyConfig":
        return cls(
            _require(doc, "fs_fields", int, where, 4),
            _require(doc, "fs_subsets", int, where, 48),
            _require(doc, "lc_fields", int, where, 4),
            _require(doc, "seed", int, where, 1),
        )


@dataclass(frozen=True)
class BilinearConfig:
    pairs: tuple[tuple[float, float], ...] = ()
    time_radius: float = 1.0
    nt: int = 65
    seeds: tuple[int, ...] = (0,)
    sandwich: bool = True
    sandwich_time_radius: float = 0.5
    tau: float = 0.25
    u_window_fraction: float = 0.125   # u window radius = fraction * N
    v_center: float = 1.25
    v_radius: float = 0.7

    @classmethod
    def parse(cls, doc: dict, where: str = "bilinear") -> "BilinearConfig":
        pairs = doc.get("pairs")
        if not isinstance(pairs, list) or not pairs:
            raise ConfigError(f"{where}.pairs: need a non-empty list of [m, n] pairs")
        parsed = []
        for i, pair in enumerate(pairs):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ConfigError(f"{where}.pairs[{i}]: expected [m, n]")
            m, n = float(pair[0]), float(pair[1])
            if m > n / 4:
                raise ConfigError(f"{where}.pairs[{i}]: need m <= n/4, got ({m}, {n})")
            parsed.append((m, n))
        seeds = doc.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError(f"{where}.seeds: need a non-empty list")
        return cls(
            tuple(parsed),
            _require(doc, "time_radius", float, where, 1.0),
            _require(doc, "nt", int, where, 65),
            tuple(int(s) for s in seeds),
            _require(doc, "sandwich", bool, where, True),
            _require(doc, "sandwich_time_radius", float, where, 0.5),
            _require(doc, "tau", float, where, 0.25),
            _require(doc, "u_window_fraction", float, where, 0.125),
            _require(doc, "v_center", float, where, 1.25),
            _require(doc, "v_radius", float, where, 0.7),
        )


@dataclass(frozen=True)
class KakeyaConfig:
    radii: tuple[float, ...] = (8.0, 16.0)
    tubes_per_family: int = 6
    delta: float = 0.05
    nu: float = 0.1
    seed: int = 10
    base_spread: float = 4.0

    @classmethod
    def parse(cls, doc: dict, where: str = "kakeya") -> "KakeyaConfig":
        radii = doc.get("radii")
        if not isinstance(radii, list) or not radii:
            raise ConfigError(f"{where}.radii: need a non-empty list")
        return cls(
            tuple(float(r) for r in radii),
            _require(doc, "tubes_per_family", int, where, 6),
            _require(doc, "delta", float, where, 0.05),
            _require(doc, "nu", float, where, 0.1),
            _require(doc, "seed", int, where, 10),
            _require(doc, "base_spread", float, where, 4.0),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = GridConfig()
    kernel: KernelConfig = KernelConfig()
    tau: TauConfig = TauConfig()
    field: FieldConfig = FieldConfig()
    decomposition: DecompositionConfig = DecompositionConfig()
    verify: VerifyConfig = VerifyConfig()
    bilinear: BilinearConfig | None = None
    kakeya: KakeyaConfig | None = None
    out_dir: str | None = None
    raw: dict = dataclasses.field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def parse(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("top level: expected a JSON object")
        known = {"grid", "kernel", "tau", "field", "decomposition", "verify",
                 "bilinear", "kakeya", "out_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"top level: unknown keys {sorted(unknown)}")
        grid = GridConfig.parse(doc.get("grid", {}))
        return cls(
            grid,
            KernelConfig.parse(doc.get("kernel", {})),
            TauConfig.parse(doc.get("tau", {})),
            FieldConfig.parse(doc.get("field", {}), grid.dimension),
            DecompositionConfig.parse(doc.get("decomposition", {})),
            VerifyConfig.parse(doc.get("verify", {})),
            BilinearConfig.parse(doc["bilinear"]) if doc.get("bilinear") else None,
            KakeyaConfig.parse(doc["kakeya"]) if doc.get("kakeya") else None,
            doc.get("out_dir"),
            doc,
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(
            self,
            tau=replace(self.tau, seed=seed),
            field=replace(self.field, seed=seed),
            verify=replace(self.verify, seed=seed),
            bilinear=replace(self.bilinear, seeds=(seed,)) if self.bilinear else None,
            kakeya=replace(self.kakeya, seed=seed) if self.kakeya else None,
        )

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()
        ).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return ExperimentConfig.parse(doc)
