"""Mass-transport tube decompositions of band-limited Schrodinger evolutions.

The package splits into: exact lattice-flow machinery (``lattice``, ``flow``),
the spectral propagator and field factory (``schrodinger``), the
partition-of-unity kernel and calibrated mass weights (``kernels``), tube
assembly and verification (``tubes``), estimate harnesses (``estimates``) and
the batch runner (``config``, ``report``, ``cli``).
"""

from .flow import (
    FlowInfeasibleError,
    FlowNetwork,
    LayeredFlow,
    PathEnsemble,
    layered_decomposition,
    max_flow,
    one_layer_flow,
    path_ensemble,
    verify_local_conservation,
)
from .kernels import (
    EnsembleSpec,
    MassWeights,
    PartitionKernel,
    build_kernel,
    calibrate_tau,
    mass_weights,
    verify_fs,
    verify_kernel_lemmas,
    verify_lc,
)
from .lattice import LatticeGraph, WeightLayers, quantize_layers
from .schrodinger import (
    FrequencyWindow,
    Grid,
    WaveField,
    galilean_rescale,
    intensity,
    make_band_limited,
    mass,
    propagate,
)
from .tubes import (
    Tube,
    TubeDecomposition,
    decompose,
    scaled_decompose,
    verify_domination,
    verify_efficiency,
)

__all__ = [
    "EnsembleSpec",
    "FlowInfeasibleError",
    "FlowNetwork",
    "FrequencyWindow",
    "Grid",
    "LatticeGraph",
    "LayeredFlow",
    "MassWeights",
    "PartitionKernel",
    "PathEnsemble",
    "Tube",
    "TubeDecomposition",
    "WaveField",
    "WeightLayers",
    "build_kernel",
    "calibrate_tau",
    "decompose",
    "galilean_rescale",
    "intensity",
    "layered_decomposition",
    "make_band_limited",
    "mass",
    "mass_weights",
    "max_flow",
    "one_layer_flow",
    "path_ensemble",
    "propagate",
    "quantize_layers",
    "scaled_decompose",
    "verify_domination",
    "verify_efficiency",
    "verify_fs",
    "verify_kernel_lemmas",
    "verify_lc",
    "verify_local_conservation",
]
