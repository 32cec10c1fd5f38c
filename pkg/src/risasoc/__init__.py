"""risasoc: a configurable-ISA SoC toolkit.

From an instruction-set description and one or more target assembly
programs this package derives a reduced instruction set, instantiates a
matching assembler and linker, emits a Verilog CPU description with an FPGA
resource estimate, and runs the resulting machine code on a cycle-accurate
SoC simulator (CPU + bus + RAM + GPIO + UART + timer).
"""

from .isa_core import (
    IsaConfig,
    InstructionDef,
    MicroOp,
    decode,
    encode,
    load_default_config,
    parse_isa_config,
    serialize_isa_config,
    validate,
)
from .risa_reducer import UsageReport, reduce, scan_program
from .assembler import build_assembler, link, emit_listing, MachineImage, ObjectModule
from .hdl_emitter import (
    CostModel,
    ResourceEstimate,
    emit_cpu_hdl,
    estimate_resources,
    load_cost_model,
    required_units,
)
from .soc_simulator import SocMap, build_soc, write_trace_json, write_vcd

__version__ = "0.1.0"
