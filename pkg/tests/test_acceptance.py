"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
complete.  Every tolerance is pinned here; nothing is deferred to later
calibration.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from tubeflow.estimates import (
    BilinearTubeConfig,
    bilinear_ratio,
    bilinear_via_tubes,
    loglog_slope,
    make_lipschitz_family,
    multilinear_overlap,
    tube_intersection_volume,
)
from tubeflow.flow import (
    FlowInfeasibleError,
    FlowNetwork,
    layered_decomposition,
    max_flow,
    one_layer_flow,
    path_ensemble,
)
from tubeflow.kernels import EnsembleSpec, MassWeights, build_kernel, calibrate_tau, verify_fs
from tubeflow.lattice import LatticeGraph
from tubeflow.schrodinger import (
    FrequencyWindow,
    Grid,
    WaveField,
    galilean_rescale,
    make_band_limited,
    mass,
    propagate,
)
from tubeflow.tubes import Tube, TubeDecomposition, decompose, scaled_decompose, \
    verify_domination, verify_efficiency

from .generators import concentrated_pair, push_random_layers, random_network
from .oracles import (
    brute_conservation_violations,
    brute_min_cut,
    enumerate_path_weights,
    gaussian_free_evolution,
    mc_tube_intersection,
)


def _line(num: int, ok: bool, text: str):
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}  {text}")
    assert ok, f"criterion {num}: {text}"


@pytest.fixture(scope="module")
def desk():
    grid = Grid(1, 16.0, 128)
    kernel = build_kernel(grid, R=2.0)
    cal = calibrate_tau(EnsembleSpec(count=6, seed=100), kernel,
                        tau_max=1.0, trials=48, seed=100)
    return grid, kernel, cal.tau


def test_criterion_01_flow_exactness():
    graphs = [LatticeGraph(1, s) for s in (5, 9, 16, 25, 40, 64)] + \
             [LatticeGraph(2, s) for s in (3, 4, 5, 8)]
    checked = 0
    for i in range(200):
        graph = graphs[i % len(graphs)]
        n_layers = 2 + i % 7
        weights = push_random_layers(graph, n_layers, seed=1000 + i, max_mass=60)
        flow = layered_decomposition(weights, graph)
        for t in range(flow.n_transitions):
            assert flow.out_marginal(t) == weights.layer(t)
            assert flow.in_marginal(t) == weights.layer(t + 1)
        checked += 1
    small = [LatticeGraph(1, s) for s in (5, 7, 9, 12)] + [LatticeGraph(2, 3),
                                                           LatticeGraph(2, 4)]
    found = 0
    seed = 0
    while found < 50:
        graph = small[found % len(small)]
        weights = concentrated_pair(graph, seed=2000 + seed)
        seed += 1
        brute = brute_conservation_violations(weights.layer(0), weights.layer(1), graph)
        if not brute:
            continue
        with pytest.raises(FlowInfeasibleError) as err:
            one_layer_flow(weights.layer(0), weights.layer(1), graph)
        cut = err.value.cut
        held = sum(weights.layer(0)[u] for u in cut)
        recv = sum(weights.layer(1)[v] for v in graph.neighborhood(cut))
        assert held > recv, "reported cut does not violate conservation"
        assert cut in brute
        found += 1
    _line(1, True, f"{checked} feasible instances exact, {found} infeasible "
                   f"instances reported with brute-confirmed cuts")


def test_criterion_02_mfmc_cross_check():
    agreements = 0
    for i in range(100):
        hi = 16 if i % 10 == 0 else 10
        n, caps = random_network(seed=3000 + i, n_lo=5, n_hi=hi)
        net = FlowNetwork(n, 0, 1, tuple(caps))
        _, value, _ = max_flow(net)
        assert value == brute_min_cut(n, 0, 1, caps)
        agreements += 1
    _line(2, True, f"{agreements} networks: max-flow equals exhaustive min cut")


def test_criterion_03_path_marginal_oracle():
    instances = 0
    for i in range(50):
        graph = LatticeGraph(1, 5 + i % 2)
        weights = push_random_layers(graph, 3, seed=4000 + i, max_mass=12,
                                     den=1 << 16)
        flow = layered_decomposition(weights, graph)
        ensemble = path_ensemble(flow, weights)
        paths = enumerate_path_weights(ensemble)
        assert dict(ensemble.enumerate_paths()) == paths
        den = weights.den
        for layer in range(3):
            sums = {}
            for p, a in paths.items():
                sums[p[layer]] = sums.get(p[layer], Fraction(0)) + a
            for v in range(graph.n_sites):
                assert sums.get(v, Fraction(0)) == Fraction(weights.layer(layer)[v], den)
        mw = MassWeights(0.5, weights, (0.0,) * 3, (0,) * 3)
        dec = TubeDecomposition(ensemble, graph, mw, 0.5, 2.0 + math.pi / 10, 0.75,
                                (0.0,), 1.0, 1.0)
        assert len(dec.tubes()) == len(paths)
        unwrapped = {}
        for sites in paths:
            verts = [float(graph.site_coords(sites[0])[0])]
            for a, b in zip(sites, sites[1:]):
                verts.append(verts[-1] + dec._step(a, b)[0])
            unwrapped[sites] = verts
        s_torus = float(graph.S)
        for cell in range(graph.n_sites):
            for layer in range(3):
                x = cell + 0.37
                t = (layer - 1 + 0.41) * dec.tau
                value = dec.evaluate_cover([((x,), t)])[0]
                explicit = Fraction(0)
                theta = t / dec.tau - (layer - 1)
                for sites, alpha in paths.items():
                    verts = unwrapped[sites]
                    k = min(layer, len(verts) - 2)
                    th = theta if k == layer else 1.0
                    pos = (1 - th) * verts[k] + th * verts[k + 1]
                    delta = (x - pos + s_torus / 2) % s_torus - s_torus / 2
                    if delta * delta <= dec.radius**2:
                        explicit += alpha
                assert value == explicit
        instances += 1
    _line(3, True, f"{instances} instances: exhaustive enumeration reproduces the "
                   f"marginals and the DP cover exactly")


def test_criterion_04_propagator_oracle():
    grid = Grid(1, 128.0, 2048)
    sigma, x0 = 8.0, 64.0
    x = grid.axis_points()
    values = gaussian_free_evolution(x, 0.0, sigma, x0=x0)
    norm = np.sqrt(np.sum(np.abs(values) ** 2) * grid.h)
    u = WaveField.from_values(grid, FrequencyWindow((0.0,), 1.0), 0.0, values / norm)
    sup_err = 0.0
    window = np.abs(x - x0) < 32.0
    for t in (0.25, 0.5, 1.0, 2.0):
        got = propagate(u, t).values
        want = gaussian_free_evolution(x, t, sigma, x0=x0) / norm
        sup_err = max(sup_err, float(np.max(np.abs(got - want)[window])))
    mass_err = max(abs(mass(propagate(u, t)) - mass(u)) for t in (0.1, 1.0, 5.0, 10.0))
    a = propagate(propagate(u, 0.3), 0.9).values
    b = propagate(u, 1.2).values
    group_err = float(np.max(np.abs(a - b)))
    ok = sup_err <= 1e-8 and mass_err <= 1e-12 and group_err <= 1e-12
    _line(4, ok, f"analytic sup error {sup_err:.2e} (<=1e-8), mass drift "
                 f"{mass_err:.2e} (<=1e-12), group law {group_err:.2e} (<=1e-12)")


def test_criterion_05_kernel_suite(desk):
    grid, kernel, tau = desk
    pou_err = float(np.max(np.abs(kernel.partition_sum() - 1.0)))
    worst = np.inf
    n_checks = 0
    window = FrequencyWindow((0.0,), 1.0)
    for i in range(50):
        u = make_band_limited(grid, window, "random-phase", seed=100 + i)
        report = verify_fs(u, kernel, tau, trials=200, seed=100 + i)
        worst = min(worst, report.margin_min)
        n_checks += report.n_checks
    ok = pou_err <= 1e-10 and worst >= 0.0
    _line(5, ok, f"partition of unity {pou_err:.2e} (<=1e-10); FS margin "
                 f">= {worst:.2e} over {n_checks} checks at tau={tau:.3f}")


def test_criterion_06_assembly(desk):
    grid, kernel, tau = desk
    window = FrequencyWindow((0.0,), 1.0)
    bound = 10.0 * 3.0 * (1.0 + 1e-6)
    worst_eff = 0.0
    worst_dom = 0.0
    for i in range(20):
        u = make_band_limited(grid, window, "random-phase", seed=300 + i)
        dec = decompose(u, kernel, tau, time_radius=1.0)
        dom = verify_domination(u, dec)
        eff = verify_efficiency(dec, u)
        assert eff.constant <= bound
        assert eff.constant == pytest.approx(30.0, rel=1e-9)
        worst_eff = max(worst_eff, eff.constant)
        worst_dom = max(worst_dom, dom.constant)
    _line(6, True, f"20 fields: domination holds (max constant {worst_dom:.2f}), "
                   f"efficiency {worst_eff:.9f} <= {bound:.6f}")


def test_criterion_07_symmetry(desk):
    grid, kernel, tau = desk
    u = make_band_limited(grid, FrequencyWindow((0.0,), 1.0), "random-phase", seed=17)
    plain = decompose(u, kernel, tau, time_radius=0.5)
    scaled = scaled_decompose(u, tau, time_radius=0.5)
    identity_ok = (scaled.ensemble == plain.ensemble
                   and scaled.masses == plain.masses
                   and scaled.boost_rho == 1.0)
    xi = (4 * grid.freq_spacing,)
    boosted = make_band_limited(grid, FrequencyWindow(xi, 1.0), "gaussian", seed=18)
    dec = scaled_decompose(boosted, tau, time_radius=0.5)
    inner_field = galilean_rescale(boosted, xi, 1.0, "forward")
    inner = decompose(inner_field, build_kernel(inner_field.grid, R=2.0), tau, 0.5)
    ours = dec.tubes(min_weight=1e-6)
    theirs = inner.tubes(min_weight=1e-6)
    drift = 2 * xi[0]
    max_err = 0.0
    assert len(ours) == len(theirs)
    for a, b in zip(ours, theirs):
        assert a.weight == b.weight
        for t, va, vb in zip(a.times, a.vertices, b.vertices):
            max_err = max(max_err, abs(va[0] - (vb[0] + drift * t)))
    ok = identity_ok and max_err <= 1e-9
    _line(7, ok, f"identity decomposition bit-exact; boost shear error "
                 f"{max_err:.2e} (<=1e-9) over {len(ours)} tubes")


def test_criterion_08_bilinear_sweep():
    grid = Grid(1, 256.0, 4096)
    v = make_band_limited(grid, FrequencyWindow((1.25,), 0.7), "gaussian", seed=42)
    ratios = []
    sandwich_all = True
    cfg = BilinearTubeConfig(time_radius=0.5, tau=0.25, nt=33)
    for n in (8.0, 16.0, 32.0):
        u = make_band_limited(grid, FrequencyWindow((n,), n / 8), "gaussian", seed=41)
        ratios.append(bilinear_ratio(u, v, n, 1.0, time_radius=1.25, nt=129))
        report = bilinear_via_tubes(u, v, n, 1.0, cfg)
        sandwich_all = sandwich_all and report.sandwich_ok and bool(report.pairs)
    trend = max(ratios) / min(ratios) - 1.0
    ok = trend <= 0.10 and sandwich_all
    _line(8, ok, f"ratios {[round(r, 4) for r in ratios]} trend {trend:.1%} "
                 f"(<=10%); tube sandwich holds on every instance")


def test_criterion_09_intersection_law():
    r1, r2 = 1.0, 0.5
    products = []
    for dv in (4.0, 8.0, 16.0, 32.0):
        t1 = Tube((-50.0, 50.0), ((-50.0 * dv,), (50.0 * dv,)), r1, 1.0)
        t2 = Tube((-50.0, 50.0), ((0.0,), (0.0,)), r2, 1.0)
        vol = tube_intersection_volume(t1, t2, (-20.0, 20.0))
        products.append(vol * dv)
    spread = (max(products) - min(products)) / min(products)
    t1 = Tube((-3.0, 3.0), ((-12.0,), (12.0,)), 1.0, 1.0, torus=16.0)
    t2 = Tube((-3.0, 3.0), ((8.0,), (8.0,)), 0.5, 1.0, torus=16.0)
    vol = tube_intersection_volume(t1, t2, (-2.0, 2.0))
    mc = mc_tube_intersection(t1, t2, -2.0, 2.0, n=8_000_000, seed=9)
    mc_err = abs(vol - mc) / vol
    ok = spread <= 0.02 and mc_err <= 0.01
    _line(9, ok, f"volume x gap spread {spread:.2%} (<=2%); Monte Carlo "
                 f"agreement {mc_err:.2%} (<=1%)")


def test_criterion_10_multilinear_overlap():
    families = [
        make_lipschitz_family((1.0, 0.0, 0.0), 10, 0.05, 72.0, 10, base_spread=4.0),
        make_lipschitz_family((0.0, 1.0, 0.0), 10, 0.05, 72.0, 11, base_spread=4.0),
        make_lipschitz_family((0.0, 0.0, 1.0), 10, 0.05, 72.0, 12, base_spread=4.0),
    ]
    radii = (8.0, 16.0, 32.0, 64.0)
    ratios = [multilinear_overlap(families, r, nu=0.1, delta=0.05).ratio
              for r in radii]
    slope = loglog_slope(radii, ratios)
    ok = slope < 0.5
    _line(10, ok, f"overlap ratios {[round(r, 3) for r in ratios]}, "
                  f"log-log slope {slope:.3f} (<0.5)")
