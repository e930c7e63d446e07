"""Anisotropic raster classification with a hidden Markov tree.

The pipeline: load gridded inputs into a :class:`RasterFrame`, build
the elevation-ordered :class:`DependencyTree`, fit :class:`HmtParams`
by EM with tree message propagation, and infer a feasible class map
with the frontier dynamic program.
"""

from .errors import (
    DimensionError,
    EmptyInputError,
    FloodTreeError,
    GridFormatError,
    InitializationError,
    LabelBoundsError,
    NumericError,
    OracleSizeError,
)
from .evaluation import MetricsReport, mlc_classify, run_benchmark, score
from .inference import ClassMap, infer_greedy, infer_oracle, render_map
from .learning import (
    EmResult,
    MessageTable,
    PosteriorTable,
    backward_pass,
    em_fit,
    forward_pass,
    initialize,
    initialize_from_samples,
    m_step,
    posteriors,
)
from .model import (
    HmtParams,
    load_params,
    log_emission,
    log_joint,
    log_leaf_prior,
    log_transition,
    make_params,
    save_params,
)
from .raster import Layer, RasterFrame, assemble_frame, frame_from_arrays, load_grid, write_grid
from .synthetic import SynthConfig, TrainingSet, generate, generate_scaling_series
from .tree import DependencyTree, build_tree, topological_iter

__version__ = "0.1.0"

__all__ = [
    "ClassMap",
    "DependencyTree",
    "DimensionError",
    "EmResult",
    "EmptyInputError",
    "FloodTreeError",
    "GridFormatError",
    "HmtParams",
    "InitializationError",
    "LabelBoundsError",
    "Layer",
    "MessageTable",
    "MetricsReport",
    "NumericError",
    "OracleSizeError",
    "PosteriorTable",
    "RasterFrame",
    "SynthConfig",
    "TrainingSet",
    "assemble_frame",
    "backward_pass",
    "build_tree",
    "em_fit",
    "forward_pass",
    "frame_from_arrays",
    "generate",
    "generate_scaling_series",
    "infer_greedy",
    "infer_oracle",
    "initialize",
    "initialize_from_samples",
    "load_grid",
    "load_params",
    "log_emission",
    "log_joint",
    "log_leaf_prior",
    "log_transition",
    "m_step",
    "make_params",
    "mlc_classify",
    "posteriors",
    "render_map",
    "save_params",
    "score",
    "topological_iter",
    "write_grid",
]
