"""Locally-constant partition-of-unity kernel and lattice mass weights.

The kernel is a dilated power-law profile (1 + |x/R|^2)^(-5d), periodized
over the torus and divided by the sum of its own lattice translates, so the
translates form an exact partition of unity.  Site masses are kernel-weighted
integrals of |u|^2; summed over the one-step cube neighborhood they give the
layers fed to the flow solver.

Two empirical inequalities are measured here: the pointwise intensity is
controlled by the kernel average (locally-constant), and kernel-weighted mass
over a site set at one time is dominated by mass over the enlarged set a
short time earlier or later (finite speed).  The admissible timestep is
calibrated, not prescribed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .lattice import DEFAULT_DENOMINATOR_BITS, WeightLayers, quantize_layers
from .schrodinger import Grid, WaveField, intensity, mass, propagate

PARTITION_TOL = 1e-10


class KernelBuildError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


class NumericalIntegrityError(RuntimeError):
    """Quadrature drift exceeded the configured budget."""


def h_offsets(d: int):
    return list(itertools.product((-1, 0, 1), repeat=d))


@dataclass(frozen=True)
class PartitionKernel:
    """Kernel samples on the grid, centered at lattice site 0."""

    d: int
    S: int
    k: int              # grid points per unit lattice cell
    R: float
    grid: Grid
    values: np.ndarray
    decay_lo: float
    decay_hi: float

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def n_sites(self) -> int:
        return self.S**self.d

    def site_coords(self, i: int) -> tuple[int, ...]:
        coords = []
        for _ in range(self.d):
            coords.append(i % self.S)
            i //= self.S
        return tuple(reversed(coords))

    def translate(self, site_coords) -> np.ndarray:
        shift = tuple(int(c) * self.k for c in site_coords)
        return np.roll(self.values, shift, axis=tuple(range(self.d)))

    def partition_sum(self) -> np.ndarray:
        """Sum of all lattice translates; 1 everywhere up to rounding."""
        total = np.zeros_like(self.values)
        for coords in itertools.product(range(self.S), repeat=self.d):
            total += self.translate(coords)
        return total

    def set_indicator(self, sites) -> np.ndarray:
        """Kernel sum over a site set, as a grid function."""
        total = np.zeros_like(self.values)
        for i in sites:
            total += self.translate(self.site_coords(i))
        return total


def build_kernel(grid: Grid, R: float = 2.0, images: int = 3) -> PartitionKernel:
    """Kernel on the unit lattice subdividing the grid.

    Requires an integer torus side and an integer number of grid points per
    lattice cell.  ``images`` bounds the wraparound copies summed into the
    periodized profile.
    """
    if R < 1:
        raise KernelBuildError(f"dilation must be >= 1, got {R}")
    S = round(grid.L)
    if abs(grid.L - S) > 1e-12 or S < 3:
        raise KernelBuildError(f"torus side must be an integer >= 3, got {grid.L}")
    if grid.M % S:
        raise KernelBuildError(f"{grid.M} points do not subdivide {S} lattice cells")
    k = grid.M // S
    if k < 4:
        raise KernelBuildError(f"need at least 4 grid points per cell, got {k}")
    mesh = grid.wrapped_points()
    power = 5 * grid.d
    base = np.zeros(grid.shape)
    for shifts in itertools.product(range(-images, images + 1), repeat=grid.d):
        r_sq = sum((x + s * S) ** 2 for x, s in zip(mesh, shifts))
        base += (1.0 + r_sq / R**2) ** (-power)
    partition = np.zeros_like(base)
    for coords in itertools.product(range(S), repeat=grid.d):
        partition += np.roll(base, tuple(c * k for c in coords), axis=tuple(range(grid.d)))
    values = base / partition
    dist = np.sqrt(sum(x**2 for x in mesh))
    ring = (dist >= 1.0) & (dist <= S / 4.0)
    scaled = values[ring] * dist[ring] ** (10 * grid.d)
    kernel = PartitionKernel(grid.d, S, k, R, grid, values,
                             float(scaled.min()), float(scaled.max()))
    check = kernel.partition_sum()
    err = float(np.max(np.abs(check - 1.0)))
    if err > PARTITION_TOL:
        raise KernelBuildError(f"partition of unity off by {err:.3e}")
    return kernel


def site_correlations(kernel: PartitionKernel, values: np.ndarray) -> np.ndarray:
    """integral of values * kernel(x - a) for every lattice site a.

    Returns an array of shape (S,)*d indexed by site coordinates.
    """
    grid = kernel.grid
    spec = np.fft.fftn(values) * np.conj(np.fft.fftn(kernel.values))
    corr = np.fft.ifftn(spec).real * grid.h**grid.d
    sub = corr[(slice(None, None, kernel.k),) * kernel.d]
    return sub


def cube_neighborhood_sum(kernel: PartitionKernel, site_values: np.ndarray) -> np.ndarray:
    """Sum over the 3^d cube of neighboring sites, with wraparound."""
    total = np.zeros_like(site_values)
    for offs in h_offsets(kernel.d):
        total += np.roll(site_values, offs, axis=tuple(range(kernel.d)))
    return total


def verify_lc(u0: WaveField, kernel: PartitionKernel) -> float:
    """Largest ratio of ball-sup intensity to the kernel-weighted average.

    The sup is over the unit ball around each grid point; the average is the
    kernel convolution.  Zero field returns 0.
    """
    grid = kernel.grid
    if grid is not u0.grid and grid != u0.grid:
        raise KernelBuildError("field and kernel live on different grids")
    inten = intensity(u0)
    if not inten.any():
        return 0.0
    avg = np.fft.ifftn(np.fft.fftn(inten) * np.fft.fftn(kernel.values)).real * grid.h**grid.d
    footprint = _ball_footprint(grid.d, kernel.k)
    sup = ndimage.maximum_filter(inten, footprint=footprint, mode="wrap")
    return float(np.max(sup / avg))


def _ball_footprint(d: int, k: int) -> np.ndarray:
    idx = np.arange(-k, k + 1)
    mesh = np.meshgrid(*([idx] * d), indexing="ij")
    return sum(m**2 for m in mesh) <= k**2


@dataclass(frozen=True)
class FsCheck:
    t: float
    subset_kind: str
    subset_size: int
    margin: float


@dataclass(frozen=True)
class FsReport:
    tau: float
    margin_min: float
    worst: FsCheck | None
    n_checks: int

    @property
    def passed(self) -> bool:
        return self.margin_min >= 0.0


def _sample_subsets(kernel: PartitionKernel, trials: int, rng):
    """Structured families plus random subsets of the site set."""
    n = kernel.n_sites
    subsets: list[tuple[str, frozenset[int]]] = [("all", frozenset(range(n)))]
    for i in rng.choice(n, size=min(n, 8), replace=False):
        subsets.append(("singleton", frozenset({int(i)})))
    for cut in range(1, kernel.S, max(1, kernel.S // 4)):
        half = [i for i in range(n) if kernel.site_coords(i)[0] < cut]
        subsets.append(("half-space", frozenset(half)))
    while len(subsets) < trials:
        p = rng.uniform(0.1, 0.9)
        mask = rng.random(n) < p
        chosen = frozenset(int(i) for i in np.flatnonzero(mask))
        if chosen:
            subsets.append(("random", chosen))
    return subsets[:max(trials, len(subsets))]


def verify_fs(u0: WaveField, kernel: PartitionKernel, tau: float,
              trials: int = 64, seed: int = 0, times=None) -> FsReport:
    """Check the finite-speed inequalities for sampled subsets and times.

    For every sampled subset A and |t| <= tau, both directions are tested:
    mass of u_t over A against mass of u_0 over the cube-enlarged A, and the
    same with the roles of the two times swapped.  Violations show up as
    negative margins; the worst margin is reported, not asserted.

    Margins within 1e-12 (relative) of zero are clamped to zero: subsets whose
    enlargement is themselves achieve exact equality, and the propagator only
    conserves mass to that accuracy.
    """
    rng = np.random.default_rng(seed)
    if times is None:
        times = [f * tau for f in (0.25, 0.5, 0.75, 1.0)]
        times += [-t for t in times]
    subsets = _sample_subsets(kernel, trials, rng)
    g0 = site_correlations(kernel, intensity(u0))
    worst: FsCheck | None = None
    n_checks = 0
    for t in times:
        gt = site_correlations(kernel, intensity(propagate(u0, t)))
        for kind, sites in subsets:
            enlarged = _enlarge(kernel, sites)
            lhs_t = _subset_mass(kernel, gt, sites)
            rhs_0 = _subset_mass(kernel, g0, enlarged)
            lhs_0 = _subset_mass(kernel, g0, sites)
            rhs_t = _subset_mass(kernel, gt, enlarged)
            for lhs, rhs in ((lhs_t, rhs_0), (lhs_0, rhs_t)):
                margin = rhs - lhs
                if abs(margin) <= 1e-12 * max(abs(lhs), abs(rhs)):
                    margin = 0.0
                n_checks += 1
                check = FsCheck(t, kind, len(sites), margin)
                if worst is None or margin < worst.margin:
                    worst = check
    return FsReport(tau, worst.margin if worst else 0.0, worst, n_checks)


def _subset_mass(kernel: PartitionKernel, site_values: np.ndarray, sites) -> float:
    if not sites:
        return 0.0
    coords = tuple(np.array([kernel.site_coords(i) for i in sites]).T)
    return float(site_values[coords].sum())


def _enlarge(kernel: PartitionKernel, sites) -> frozenset[int]:
    S, d = kernel.S, kernel.d
    out: set[int] = set()
    for i in sites:
        coords = kernel.site_coords(i)
        for offs in h_offsets(d):
            j = 0
            for c, o in zip(coords, offs):
                j = j * S + (c + o) % S
            out.add(j)
    return frozenset(out)


@dataclass(frozen=True)
class EnsembleSpec:
    """Deterministic family of unit-window test fields."""

    count: int = 8
    profile: str = "random-phase"
    seed: int = 0
    window_radius: float = 1.0

    def fields(self, grid: Grid):
        from .schrodinger import FrequencyWindow, make_band_limited

        window = FrequencyWindow((0.0,) * grid.d, self.window_radius)
        for i in range(self.count):
            yield make_band_limited(grid, window, self.profile, seed=self.seed + i)


@dataclass(frozen=True)
class CalibrationResult:
    tau: float
    feasible_tau: float
    margin: float
    iterations: int


def calibrate_tau(spec: EnsembleSpec, kernel: PartitionKernel, tau_max: float,
                  trials: int = 48, seed: int = 0, floor: float = 1e-4,
                  safety: float = 0.5, iterations: int = 12) -> CalibrationResult:
    """Largest timestep for which the finite-speed check passes on the ensemble.

    Bisects down from ``tau_max``; the returned step carries a safety factor.
    Deterministic given the spec and seed.
    """
    fields = list(spec.fields(kernel.grid))

    def margin_at(tau: float) -> float:
        worst = np.inf
        for u in fields:
            report = verify_fs(u, kernel, tau, trials=trials, seed=seed)
            worst = min(worst, report.margin_min)
        return worst

    m = margin_at(tau_max)
    if m >= 0:
        return CalibrationResult(safety * tau_max, tau_max, m, 1)
    lo, hi = floor, tau_max
    m_lo = margin_at(lo)
    if m_lo < 0:
        raise CalibrationError(
            f"no admissible timestep above {floor} (margin {m_lo:.3e} at the floor)"
        )
    used = 2
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        used += 1
        if margin_at(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return CalibrationResult(safety * lo, lo, margin_at(lo), used)


@dataclass(frozen=True)
class LemmaReport:
    gradient_constants: tuple[float, ...]
    convolution_constants: tuple[float, ...]
    translate_constant: float


def verify_kernel_lemmas(kernel: PartitionKernel, sets, test_kernels=()) -> LemmaReport:
    """Measure the constants in the kernel comparison bounds.

    For each site set A: the best C with |d/dx_j kernel_A| <= C kernel_{boundary A}
    (gradient taken spectrally).  For each test kernel K: the best C with
    |K * kernel_B| <= C (integral of |K| (1+|y|^{10d}))) kernel_B, B the full
    site set.  Also the translate comparison kernel(x - y) <= C (1+|y|^{10d})
    kernel(x) over a coarse sample of shifts y.
    """
    grid = kernel.grid
    power = 10 * kernel.d
    grad_consts = []
    for sites in sets:
        sites = frozenset(sites)
        indicator = kernel.set_indicator(sites)
        boundary = _enlarge(kernel, sites) - sites
        worst = 0.0
        if boundary:
            denom = kernel.set_indicator(boundary)
            spec = np.fft.fftn(indicator)
            for mesh_k in grid.frequency_mesh():
                grad = np.fft.ifftn(1j * mesh_k * spec).real
                worst = max(worst, float(np.max(np.abs(grad) / denom)))
        else:
            # A empty or the full torus: kernel_A is constant, gradient ~ 0.
            spec = np.fft.fftn(indicator)
            for mesh_k in grid.frequency_mesh():
                grad = np.fft.ifftn(1j * mesh_k * spec).real
                if float(np.max(np.abs(grad))) > 1e-8:
                    worst = np.inf
        grad_consts.append(worst)
    mesh = grid.wrapped_points()
    moment = 1.0 + np.sqrt(sum(x**2 for x in mesh)) ** power
    indicators = [kernel.set_indicator(s) for s in sets if s] or [kernel.values]
    conv_consts = []
    for K in test_kernels:
        weight = float(np.sum(np.abs(K) * moment) * grid.h**grid.d)
        spec_k = np.fft.fftn(K)
        worst = 0.0
        for ind in indicators:
            conv = np.fft.ifftn(spec_k * np.fft.fftn(ind)).real * grid.h**grid.d
            worst = max(worst, float(np.max(np.abs(conv) / (weight * ind))))
        conv_consts.append(worst)
    translate = 0.0
    step = max(1, kernel.k // 2)
    base = kernel.values
    for shift in range(0, grid.M, step * 4):
        shifted = np.roll(base, shift, axis=0)
        y = min(shift, grid.M - shift) * grid.h
        bound = (1.0 + y**power) * base
        translate = max(translate, float(np.max(shifted / bound)))
    return LemmaReport(tuple(grad_consts), tuple(conv_consts), translate)


@dataclass(frozen=True)
class MassWeights:
    """Quantized kernel masses per site and time layer.

    Layer index n runs over -N/2 .. N/2 - 1 at times n * tau relative to the
    field's clock; pre-quantization totals and absorbed residues are kept for
    diagnostics.
    """

    tau: float
    weights: WeightLayers
    pre_totals: tuple[float, ...]
    residues: tuple[int, ...]

    @property
    def n_layers(self) -> int:
        return self.weights.n_layers

    def layer_time(self, index: int) -> float:
        return (index - self.n_layers // 2) * self.tau


def mass_weights(u0: WaveField, kernel: PartitionKernel, tau: float, N: int,
                 den_bits: int = DEFAULT_DENOMINATOR_BITS,
                 drift_tol: float = 1e-6) -> MassWeights:
    """Cube-neighborhood kernel masses for N layers centered on the field's time.

    Layer totals all equal 3^d times the field mass (partition of unity);
    drift beyond ``drift_tol`` relative aborts, smaller drift is renormalized
    away before quantization so the flow solver sees exact conservation.
    """
    if N < 2 or N % 2:
        raise ValueError(f"need an even layer count >= 2, got {N}")
    total0 = 3**kernel.d * mass(u0)
    raw = []
    totals = []
    for n in range(-N // 2, N // 2):
        u_n = propagate(u0, n * tau)
        g = site_correlations(kernel, intensity(u_n))
        m = cube_neighborhood_sum(kernel, g)
        if m.min() < 0:
            m = np.where(m < 0, 0.0, m)
        raw.append(m.ravel())
        totals.append(float(m.sum()))
    if total0 > 0:
        drift = max(abs(t / total0 - 1.0) for t in totals)
        if drift > drift_tol:
            raise NumericalIntegrityError(
                f"layer totals drift {drift:.3e} from {total0:.6g}, budget {drift_tol:g}"
            )
    weights, residues = quantize_layers(raw, den_bits, target_total=total0)
    return MassWeights(tau, weights, tuple(totals), residues)
