"""Resistive crossbar VMM simulator with stuck-at defect mitigation.

Row shuffling, output compensation and parasitic-aware mapping, plus an
experiment harness for bit-accuracy sweeps.
"""

from .core import (
    CrossbarConfig,
    DefectCell,
    DefectMap,
    Permutation,
    RngSeed,
    StuckKind,
    derived_bounds,
    ideal_vmm,
)
from .circuit import CrossbarCircuit, SolveResult, solve_batch, solve_crossbar
from .defects import DefectSpec, apply_defects, inject_defects, scan_defects
from .mapping import (
    DecodeParams,
    PmOptions,
    decode_output,
    linear_map,
    parasitic_aware_map,
)
from .shuffle import apply_shuffle, build_cost_matrix, shuffle_input, solve_assignment
from .compensate import CompensationModel, calibrate, compensate
from .metrics import AccuracyReport, bit_accuracy
from .pipeline import ALL_COMBOS, MethodCombo, PreparedCrossbar, infer, prepare

__version__ = "0.1.0"

__all__ = [
    "ALL_COMBOS",
    "AccuracyReport",
    "CompensationModel",
    "CrossbarCircuit",
    "CrossbarConfig",
    "DecodeParams",
    "DefectCell",
    "DefectMap",
    "DefectSpec",
    "MethodCombo",
    "Permutation",
    "PmOptions",
    "PreparedCrossbar",
    "RngSeed",
    "SolveResult",
    "StuckKind",
    "apply_defects",
    "apply_shuffle",
    "bit_accuracy",
    "build_cost_matrix",
    "calibrate",
    "compensate",
    "decode_output",
    "derived_bounds",
    "ideal_vmm",
    "infer",
    "inject_defects",
    "linear_map",
    "parasitic_aware_map",
    "prepare",
    "scan_defects",
    "shuffle_input",
    "solve_assignment",
    "solve_batch",
    "solve_crossbar",
]
