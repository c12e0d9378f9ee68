"""Heterogeneous-ISA migration toolkit: stack transformation versus a uniform stack layout."""
from __future__ import annotations

__version__ = "0.1.0"

from .ir import Function, Instruction, ParseError, Program, parse_program, print_program, validate  # noqa: E402
from .irgen import GeneratorConfig, InfeasibleConfig, generate_program  # noqa: E402
from .iropt import eliminate_redundant_loads  # noqa: E402
from .interp import interpret  # noqa: E402
from .isa import (ARMLIKE, ARMLIKE_REDUCED, X86LIKE, CallingConvention, ISADescriptor, RegisterMap,  # noqa: E402
                  load_isa, make_uniform_abi, map_register, restrict_registers)
from .liveness import liveness  # noqa: E402
from .regalloc import AllocationError, AllocationResult, allocate_registers  # noqa: E402
from .frame import FrameLayout, compute_frame_layout  # noqa: E402
from .lower import FrameDescriptor, FrameMetadata, MachineProgram, lower  # noqa: E402
from .snapshot import ActivationRecord, StackSnapshot  # noqa: E402
from .vm import (MachineState, RunMetrics, capture_snapshot, restore_snapshot, resume, run,  # noqa: E402
                 run_until_point)
from .migration import LayoutDiff, MigrationReport, TransformStats, diff_layout, migrate, transform_stack  # noqa: E402

__all__ = [
    "ARMLIKE", "ARMLIKE_REDUCED", "X86LIKE", "ActivationRecord", "AllocationError", "AllocationResult",
    "CallingConvention", "FrameDescriptor", "FrameLayout", "FrameMetadata", "Function", "GeneratorConfig",
    "ISADescriptor", "InfeasibleConfig", "Instruction", "LayoutDiff", "MachineProgram", "MachineState",
    "MigrationReport", "ParseError", "Program", "RegisterMap", "RunMetrics", "StackSnapshot", "TransformStats",
    "allocate_registers", "capture_snapshot", "compute_frame_layout", "diff_layout", "eliminate_redundant_loads",
    "generate_program", "interpret", "liveness", "load_isa", "lower", "make_uniform_abi", "map_register",
    "migrate", "parse_program", "print_program", "restore_snapshot", "restrict_registers", "resume", "run",
    "run_until_point", "transform_stack", "validate",
]
