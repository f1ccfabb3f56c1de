"""Neural representations of finitely presented structures.

Each generator of a presentation becomes a small network; each relation
``lhs = rhs`` becomes a mean squared residual over uniform samples, and
training drives all residuals to zero together.
"""

from .extract import LinearRep, collapse, collapse_all, verify_matrix_relations
from .knotlab import SlicedDiagram, check_moves, evaluate_bracket, move_perturb, parse_diagram
from .netcore import GeneratorNet, GradTape, NumpyOps, default_architecture, init_params, make_net
from .presentation import Presentation, RelationEq, builtin, parse_presentation, parse_relation
from .relcomp import SampleDomain, compile_relations, relation_residual, sample, total_loss
from .trainer import TrainConfig, TrainReport, init_nets, probe_extra_relations, train

__version__ = "0.1.0"

__all__ = [
    "GeneratorNet",
    "GradTape",
    "LinearRep",
    "NumpyOps",
    "Presentation",
    "RelationEq",
    "SampleDomain",
    "SlicedDiagram",
    "TrainConfig",
    "TrainReport",
    "builtin",
    "check_moves",
    "collapse",
    "collapse_all",
    "compile_relations",
    "default_architecture",
    "evaluate_bracket",
    "init_nets",
    "init_params",
    "make_net",
    "move_perturb",
    "parse_diagram",
    "parse_presentation",
    "parse_relation",
    "probe_extra_relations",
    "relation_residual",
    "sample",
    "total_loss",
    "train",
    "verify_matrix_relations",
]
