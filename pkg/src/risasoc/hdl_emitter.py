"""Verilog CPU generation and FPGA resource estimation.

``emit_cpu_hdl`` specializes a fixed 4-stage (fetch/decode/execute/write-back)
CPU skeleton to one :class:`IsaConfig`: the decoder gets one case arm per
defined opcode and nothing else, and the ALU instantiates only the datapath
units the config requires.  The emitted text is deterministic, Verilog-2001,
and checked by :func:`lint_hdl`; behavioral truth lives in the cycle
simulator, which is driven from the same instruction table.

Resource usage is an explicit calibrated cost model (``CostModel``) rather
than a synthesis run: a base LUT figure for the always-present core plus
per-unit increments, shipped as ``data/costs.json``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

from .isa_core import (
    ALU_OPS,
    BRANCH_CONDS,
    IsaConfig,
    IsaValidationError,
    serialize_isa_config,
    validate,
)

DATAPATH_UNITS = ("CORE", "SHIFT", "MUL", "DIV")

_ALU_CODE = {op: i for i, op in enumerate(ALU_OPS)}
_COND_CODE = {cond: i for i, cond in enumerate(BRANCH_CONDS)}


class CostModelError(Exception):
    pass


@dataclass(frozen=True)
class CostModel:
    """LUT/DSP cost model: base covers the core, units add increments."""

    base_luts: int
    unit_luts: Mapping[str, int]
    unit_dsps: Mapping[str, int]

    def __post_init__(self):
        if self.base_luts < 0:
            raise CostModelError("base_luts must be >= 0")
        for name, table in (("unit_luts", self.unit_luts), ("unit_dsps", self.unit_dsps)):
            for unit, count in table.items():
                if unit == "CORE":
                    raise CostModelError(f"CORE cost belongs in base_luts, not {name}")
                if unit not in DATAPATH_UNITS:
                    raise CostModelError(f"unknown unit {unit!r} in {name}")
                if count < 0:
                    raise CostModelError(f"{name}[{unit}] must be >= 0")


@dataclass(frozen=True)
class ResourceEstimate:
    luts: int
    dsps: int
    units: frozenset[str]

    def to_json(self) -> dict:
        return {"luts": self.luts, "dsps": self.dsps, "units": sorted(self.units)}


def load_cost_model(path=None) -> CostModel:
    """Read a ``costs.json`` file; with no path, the shipped calibration."""
    if path is None:
        text = resources.files("risasoc.data").joinpath("costs.json").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    data = json.loads(text)
    units = data.get("units", {})
    return CostModel(
        base_luts=data["base_luts"],
        unit_luts={u: v.get("luts", 0) for u, v in units.items()},
        unit_dsps={u: v.get("dsps", 0) for u, v in units.items()},
    )


def required_units(cfg: IsaConfig) -> frozenset[str]:
    """Datapath units needed by a config; CORE is always present."""
    units = frozenset({"CORE"})
    for d in cfg.instructions:
        units |= d.units
    return units


def estimate_resources(cfg: IsaConfig, model: CostModel) -> ResourceEstimate:
    """Sum the cost model over the units the config requires."""
    units = required_units(cfg)
    luts = model.base_luts
    dsps = 0
    for unit in sorted(units):
        if unit == "CORE":
            continue
        if unit not in model.unit_luts:
            raise CostModelError(f"unit {unit} missing from cost model")
        luts += model.unit_luts[unit]
        dsps += model.unit_dsps.get(unit, 0)
    return ResourceEstimate(luts=luts, dsps=dsps, units=units)


# ---------------------------------------------------------------------------
# Verilog emission

def _alu_ops_used(cfg: IsaConfig) -> list[int]:
    codes = {_ALU_CODE[d.semantics.op]
             for d in cfg.instructions if d.semantics.template in ("ALU3", "ALUI")}
    return sorted(codes)


_ALU_EXPR = {
    "ADD": "a + b",
    "SUB": "a - b",
    "MUL": "a * b",
    "DIV": "(b == 32'd0) ? 32'd0 : (a / b)",
    "AND": "a & b",
    "OR": "a | b",
    "XOR": "a ^ b",
    "SHL": "a << amount",
    "SHR": "a >> amount",
    "SRA": "$signed(a) >>> amount",
    "ROL": "(a << amount) | (a >> (32 - amount))",
    "ROR": "(a >> amount) | (a << (32 - amount))",
}


def _emit_alu(cfg: IsaConfig) -> str:
    # deliberately comment-free: reduced builds must not contain * or / tokens
    lines = [
        "module cpu_alu (",
        "    input wire [4:0] op,",
        "    input wire [31:0] a,",
        "    input wire [31:0] b,",
        "    output reg [31:0] y",
        ");",
        "    wire [4:0] amount;",
        "    assign amount = b[4:0];",
        "",
        "    always @(*) begin",
        "        case (op)",
    ]
    for code in _alu_ops_used(cfg):
        lines.append(f"            5'd{code}: y = {_ALU_EXPR[ALU_OPS[code]]};")
    lines += [
        "            default: y = 32'd0;",
        "        endcase",
        "    end",
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


def _emit_regfile() -> str:
    return """// 17 x 32 register file; R0 reads as zero and ignores writes.
module cpu_regfile (
    input wire clk,
    input wire rst,
    input wire we,
    input wire [4:0] waddr,
    input wire [31:0] wdata,
    input wire [4:0] raddr_a,
    input wire [4:0] raddr_b,
    input wire [4:0] raddr_c,
    output wire [31:0] rdata_a,
    output wire [31:0] rdata_b,
    output wire [31:0] rdata_c
);
    reg [31:0] regs [0:16];
    integer i;

    assign rdata_a = (raddr_a == 5'd0) ? 32'd0 : regs[raddr_a];
    assign rdata_b = (raddr_b == 5'd0) ? 32'd0 : regs[raddr_b];
    assign rdata_c = (raddr_c == 5'd0) ? 32'd0 : regs[raddr_c];

    always @(posedge clk) begin
        if (rst) begin
            for (i = 0; i < 17; i = i + 1) begin
                regs[i] <= 32'd0;
            end
        end else begin
            if (we && (waddr != 5'd0)) begin
                regs[waddr] <= wdata;
            end
        end
    end
endmodule
"""


def _emit_control() -> str:
    return """// Instruction sequencer: one machine cycle is exactly four clocks.
module cpu_control (
    input wire clk,
    input wire rst,
    output reg [1:0] stage
);
    localparam STAGE_FETCH = 2'd0;
    localparam STAGE_DECODE = 2'd1;
    localparam STAGE_EXECUTE = 2'd2;
    localparam STAGE_WRITEBACK = 2'd3;

    always @(posedge clk) begin
        if (rst) begin
            stage <= STAGE_FETCH;
        end else begin
            case (stage)
                STAGE_FETCH: stage <= STAGE_DECODE;
                STAGE_DECODE: stage <= STAGE_EXECUTE;
                STAGE_EXECUTE: stage <= STAGE_WRITEBACK;
                default: stage <= STAGE_FETCH;
            endcase
        end
    end
endmodule
"""


_DECODER_FLAGS = ("alu_en", "alu_imm", "imm_signed", "wr_reg", "is_ldi", "is_load",
                  "is_store", "is_cmp", "is_branch", "is_jmp", "is_jsub",
                  "is_ret", "is_iret")


def _decoder_arm(d) -> list[str]:
    sem = d.semantics
    body: list[str] = []
    if sem.template == "ALU3":
        body = ["alu_en = 1'b1;", f"alu_op = 5'd{_ALU_CODE[sem.op]};", "wr_reg = 1'b1;"]
    elif sem.template == "ALUI":
        body = ["alu_en = 1'b1;", f"alu_op = 5'd{_ALU_CODE[sem.op]};",
                "alu_imm = 1'b1;", "wr_reg = 1'b1;"]
        if sem.op in ("ADD", "SUB"):
            body.append("imm_signed = 1'b1;")
    elif sem.template == "LDI":
        body = ["is_ldi = 1'b1;", "wr_reg = 1'b1;"]
    elif sem.template == "LOAD":
        body = ["is_load = 1'b1;", "wr_reg = 1'b1;"]
    elif sem.template == "STORE":
        body = ["is_store = 1'b1;"]
    elif sem.template == "CMP":
        body = ["is_cmp = 1'b1;"]
    elif sem.template == "BRANCH":
        body = ["is_branch = 1'b1;", f"branch_cond = 3'd{_COND_CODE[sem.cond]};",
                "imm_signed = 1'b1;"]
    elif sem.template == "JMP":
        body = ["is_jmp = 1'b1;"]
    elif sem.template == "JSUB":
        body = ["is_jsub = 1'b1;"]
    elif sem.template == "RET":
        body = ["is_ret = 1'b1;"]
    elif sem.template == "IRET":
        body = ["is_iret = 1'b1;"]
    lines = [f"            8'h{d.opcode:02X}: begin // {d.mnemonic}"]
    lines += [f"                {stmt}" for stmt in body]
    lines.append("            end")
    return lines


def _emit_decoder(cfg: IsaConfig) -> str:
    head = """// Instruction decoder: exactly one case arm per defined opcode.
module cpu_decoder (
    input wire [31:0] insn,
    output reg alu_en,
    output reg [4:0] alu_op,
    output reg alu_imm,
    output reg imm_signed,
    output reg wr_reg,
    output reg is_ldi,
    output reg is_load,
    output reg is_store,
    output reg is_cmp,
    output reg is_branch,
    output reg [2:0] branch_cond,
    output reg is_jmp,
    output reg is_jsub,
    output reg is_ret,
    output reg is_iret,
    output reg illegal,
    output wire [3:0] ra,
    output wire [3:0] rb,
    output wire [3:0] rc,
    output wire [15:0] imm16,
    output wire [23:0] target24
);
    assign ra = insn[23:20];
    assign rb = insn[19:16];
    assign rc = insn[15:12];
    assign imm16 = insn[15:0];
    assign target24 = insn[23:0];

    always @(*) begin
"""
    defaults = "".join(f"        {flag} = 1'b0;\n" for flag in _DECODER_FLAGS)
    defaults += "        alu_op = 5'd0;\n        branch_cond = 3'd0;\n        illegal = 1'b0;\n"
    lines = [head + defaults, "        case (insn[31:24])"]
    for d in cfg.instructions:
        lines.extend(_decoder_arm(d))
    lines += [
        "            default: begin",
        "                illegal = 1'b1;",
        "            end",
        "        endcase",
        "    end",
        "endmodule",
    ]
    return "\n".join(lines) + "\n"


def _emit_top(cfg: IsaConfig) -> str:
    return """// Generated CPU top level. Bus protocol: a read request (m_en, m_rw
// high) presents the address on mar and the data comes back on dbus one
// clock later; a write (m_rw low) presents mar and mdr together and
// completes in that clock. The status word lives in register 12: flag
// bits 0..2 are written by compares and bit 8 is the interrupt enable.
module cpu_top (
    input wire clk,
    input wire rst,
    input wire irq,
    output reg [31:0] mar,
    output reg [31:0] mdr,
    input wire [31:0] dbus,
    output reg m_rw,
    output reg m_en
);
    parameter VECTOR_BASE = 32'h00000004;

    wire [1:0] stage;
    wire alu_en;
    wire [4:0] alu_op;
    wire alu_imm;
    wire imm_signed;
    wire wr_reg;
    wire is_ldi;
    wire is_load;
    wire is_store;
    wire is_cmp;
    wire is_branch;
    wire [2:0] branch_cond;
    wire is_jmp;
    wire is_jsub;
    wire is_ret;
    wire is_iret;
    wire illegal;
    wire [3:0] ra;
    wire [3:0] rb;
    wire [3:0] rc;
    wire [15:0] imm16;
    wire [23:0] target24;
    wire [31:0] rdata_a;
    wire [31:0] rdata_b;
    wire [31:0] rdata_c;
    wire [31:0] alu_y;

    reg [31:0] pc;
    reg [31:0] ir;
    reg [31:0] sw;
    reg [31:0] lr;
    reg [31:0] result;
    reg we;
    reg [31:0] wdata;
    reg [31:0] imm_ext;
    reg [31:0] alu_b;
    reg take_branch;
    reg faulted;

    cpu_control control_i (
        .clk(clk),
        .rst(rst),
        .stage(stage)
    );

    cpu_decoder decoder_i (
        .insn(ir),
        .alu_en(alu_en),
        .alu_op(alu_op),
        .alu_imm(alu_imm),
        .imm_signed(imm_signed),
        .wr_reg(wr_reg),
        .is_ldi(is_ldi),
        .is_load(is_load),
        .is_store(is_store),
        .is_cmp(is_cmp),
        .is_branch(is_branch),
        .branch_cond(branch_cond),
        .is_jmp(is_jmp),
        .is_jsub(is_jsub),
        .is_ret(is_ret),
        .is_iret(is_iret),
        .illegal(illegal),
        .ra(ra),
        .rb(rb),
        .rc(rc),
        .imm16(imm16),
        .target24(target24)
    );

    cpu_regfile regfile_i (
        .clk(clk),
        .rst(rst),
        .we(we),
        .waddr({1'b0, ra}),
        .wdata(wdata),
        .raddr_a({1'b0, ra}),
        .raddr_b({1'b0, rb}),
        .raddr_c({1'b0, rc}),
        .rdata_a(rdata_a),
        .rdata_b(rdata_b),
        .rdata_c(rdata_c)
    );

    cpu_alu alu_i (
        .op(alu_op),
        .a(rdata_b),
        .b(alu_b),
        .y(alu_y)
    );

    always @(*) begin
        if (imm_signed) begin
            imm_ext = {{16{imm16[15]}}, imm16};
        end else begin
            imm_ext = {16'd0, imm16};
        end
        if (alu_imm) begin
            alu_b = imm_ext;
        end else begin
            alu_b = rdata_c;
        end
        case (branch_cond)
            3'd0: take_branch = sw[0];
            3'd1: take_branch = ~sw[0];
            3'd2: take_branch = sw[1];
            3'd3: take_branch = sw[2];
            3'd4: take_branch = sw[0] | sw[1];
            3'd5: take_branch = sw[0] | sw[2];
            default: take_branch = 1'b1;
        endcase
    end

    always @(posedge clk) begin
        if (rst) begin
            pc <= 32'd0;
            ir <= 32'd0;
            sw <= 32'd0;
            lr <= 32'd0;
            result <= 32'd0;
            we <= 1'b0;
            wdata <= 32'd0;
            mar <= 32'd0;
            mdr <= 32'd0;
            m_rw <= 1'b1;
            m_en <= 1'b0;
            faulted <= 1'b0;
        end else begin
            we <= 1'b0;
            m_en <= 1'b0;
            if (!faulted) begin
                case (stage)
                    2'd0: begin
                        mar <= pc;
                        m_rw <= 1'b1;
                        m_en <= 1'b1;
                    end
                    2'd1: begin
                        ir <= dbus;
                        pc <= pc + 32'd4;
                    end
                    2'd2: begin
                        if (illegal) begin
                            faulted <= 1'b1;
                        end
                        if (alu_en || is_ldi) begin
                            result <= is_ldi ? {16'd0, imm16} : alu_y;
                        end
                        if (is_load) begin
                            mar <= rdata_b + imm_ext;
                            m_rw <= 1'b1;
                            m_en <= 1'b1;
                        end
                        if (is_store) begin
                            mar <= rdata_b + imm_ext;
                            mdr <= rdata_a;
                            m_rw <= 1'b0;
                            m_en <= 1'b1;
                        end
                        if (is_cmp) begin
                            sw[0] <= (rdata_a == rdata_b);
                            sw[1] <= ($signed(rdata_a) < $signed(rdata_b));
                            sw[2] <= ($signed(rdata_a) > $signed(rdata_b));
                        end
                    end
                    default: begin
                        if (wr_reg) begin
                            we <= 1'b1;
                            wdata <= is_load ? dbus : result;
                            if (ra == 4'd12) begin
                                sw <= is_load ? dbus : result;
                            end
                        end
                        if (is_branch && take_branch) begin
                            pc <= pc + imm_ext;
                        end
                        if (is_jmp) begin
                            pc <= {8'd0, target24};
                        end
                        if (is_jsub) begin
                            lr <= pc;
                            pc <= {8'd0, target24};
                        end
                        if (is_ret) begin
                            pc <= lr;
                        end
                        if (is_iret) begin
                            pc <= lr;
                            sw[8] <= 1'b1;
                        end
                        if (irq && sw[8] && !is_iret) begin
                            lr <= pc;
                            sw[8] <= 1'b0;
                            pc <= VECTOR_BASE;
                        end
                    end
                endcase
            end
        end
    end
endmodule
"""


def emit_cpu_hdl(cfg: IsaConfig) -> dict[str, str]:
    """Emit the Verilog file set for one config (filename -> text)."""
    diags = validate(cfg)
    if diags:
        raise IsaValidationError(diags)
    return {
        "cpu_regfile.v": _emit_regfile(),
        "cpu_control.v": _emit_control(),
        "cpu_decoder.v": _emit_decoder(cfg),
        "cpu_alu.v": _emit_alu(cfg),
        "cpu_top.v": _emit_top(cfg),
    }


def hdl_manifest(cfg: IsaConfig, files: Mapping[str, str]) -> dict:
    """Manifest for an emitted file set: names plus a config digest."""
    return {
        "isa": cfg.name,
        "files": sorted(files),
        "config_sha256": hashlib.sha256(
            serialize_isa_config(cfg).encode("utf-8")).hexdigest(),
    }


# ---------------------------------------------------------------------------
# structural lint

_VERILOG_KEYWORDS = frozenset({
    "module", "endmodule", "input", "output", "inout", "wire", "reg",
    "always", "assign", "begin", "end", "case", "endcase", "default",
    "if", "else", "posedge", "negedge", "localparam", "parameter",
    "integer", "for", "signed", "generate", "endgenerate", "genvar",
    "initial", "or", "and", "not",
})

_MODULE_RE = re.compile(r"module\s+(\w+)\s*\((.*?)\);(.*?)endmodule", re.DOTALL)
_NUMBER_RE = re.compile(r"\d+\s*'\s*[sS]?[bodhBODH][0-9a-fA-F_xzXZ?]+|\b\d+\b")
_COMMENT_RE = re.compile(r"//[^\n]*")
_IDENT_RE = re.compile(r"[A-Za-z_]\w*")
_INST_RE = re.compile(r"(?m)^\s*(\w+)\s+(\w+)\s*\(")
_DECL_RE = re.compile(
    r"\b(?:wire|reg|integer|genvar)\b([^;=]*?)(?:;|$)|\b(?:localparam|parameter)\s+(\w+)\s*=")


def _decl_names(segment: str) -> list[str]:
    segment = re.sub(r"\[[^\]]*\]", " ", segment)
    return [t for t in re.split(r"[,\s]+", segment.strip()) if _IDENT_RE.fullmatch(t)]


def _port_names(port_text: str) -> list[str]:
    names = []
    for part in port_text.split(","):
        idents = [t for t in _IDENT_RE.findall(re.sub(r"\[[^\]]*\]", " ", part))
                  if t not in _VERILOG_KEYWORDS]
        if idents:
            names.append(idents[-1])
    return names


def lint_hdl(files: Mapping[str, str]) -> list[str]:
    """Structural checks over an emitted file set.

    Flags undeclared signal references, instantiations of modules that are
    not part of the set, port connections to ports the target module does
    not declare, and unbalanced module/endmodule pairs.
    """
    issues: list[str] = []
    modules: dict[str, dict] = {}

    for fname, text in sorted(files.items()):
        clean = _COMMENT_RE.sub(" ", text)
        matched = 0
        for m in _MODULE_RE.finditer(clean):
            matched += 1
            name, ports, body = m.group(1), m.group(2), m.group(3)
            modules[name] = {
                "file": fname,
                "ports": set(_port_names(ports)),
                "body": body,
            }
        opens = len(re.findall(r"\bmodule\b", clean))
        closes = len(re.findall(r"\bendmodule\b", clean))
        if opens != closes or opens != matched:
            issues.append(f"{fname}: unbalanced module/endmodule")

    for name, info in modules.items():
        body = info["body"]
        declared = set(info["ports"])
        for dm in _DECL_RE.finditer(body):
            if dm.group(2):
                declared.add(dm.group(2))
            else:
                declared.update(_decl_names(dm.group(1) or ""))

        inst_spans: list[tuple[int, int]] = []
        for im in _INST_RE.finditer(body):
            mod_name, inst_name = im.group(1), im.group(2)
            if mod_name in _VERILOG_KEYWORDS or inst_name in _VERILOG_KEYWORDS:
                continue
            close = body.find(");", im.end())
            if close == -1:
                issues.append(f"{info['file']}: {name}: unterminated instantiation {inst_name}")
                continue
            inst_spans.append((im.start(), close + 2))
            declared.add(inst_name)
            target = modules.get(mod_name)
            if target is None:
                issues.append(f"{info['file']}: {name}: instantiates unknown module {mod_name}")
                continue
            conn_text = body[im.end():close]
            for pm in re.finditer(r"\.(\w+)\s*\(([^)]*)\)", conn_text):
                port, expr = pm.group(1), pm.group(2)
                if port not in target["ports"]:
                    issues.append(
                        f"{info['file']}: {name}: {mod_name} has no port {port!r}")
                for ident in _IDENT_RE.findall(_NUMBER_RE.sub(" ", expr)):
                    if ident not in declared and ident not in _VERILOG_KEYWORDS:
                        issues.append(
                            f"{info['file']}: {name}: undeclared signal {ident!r} "
                            f"in connection .{port}")

        plain = []
        last = 0
        for start, stop in sorted(inst_spans):
            plain.append(body[last:start])
            last = stop
        plain.append(body[last:])
        scan_text = _NUMBER_RE.sub(" ", re.sub(r"\$\w+", " ", "".join(plain)))
        for ident in set(_IDENT_RE.findall(scan_text)):
            if ident in _VERILOG_KEYWORDS or ident in declared or ident in modules:
                continue
            issues.append(f"{info['file']}: {name}: undeclared signal {ident!r}")

    return sorted(issues)
