"""Instruction-set configurations: data model, text format, validation, and
bit-level encode/decode.

An :class:`IsaConfig` describes a 32-bit, 17-register machine whose
instructions use one of three fixed encodings:

* A format: ``opcode[31:24] ra[23:20] rb[19:16] rc[15:12] 0[11:0]``
* L format: ``opcode[31:24] ra[23:20] rb[19:16] imm16[15:0]``
* J format: ``opcode[31:24] target24[23:0]``

Instruction behavior is restricted to a closed micro-op vocabulary so that
one config can drive the assembler, the simulator, and the HDL generator.
The shipped ``data/default.isa`` holds the 36-instruction default set.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping

WORD_BITS = 32
WORD_MASK = 0xFFFFFFFF
REGISTER_COUNT = 17

# register indexes with fixed roles
REG_ZERO = 0
REG_SW = 12
REG_SP = 13
REG_LR = 14
REG_PC = 15
REG_IR = 16

FORMATS = ("A", "L", "J")

ALU_OPS = ("ADD", "SUB", "MUL", "DIV", "AND", "OR", "XOR",
           "SHL", "SHR", "SRA", "ROL", "ROR")
BRANCH_CONDS = ("EQ", "NE", "LT", "GT", "LE", "GE", "ALWAYS")
SIMPLE_TEMPLATES = ("LDI", "LOAD", "STORE", "CMP", "JMP", "JSUB",
                    "RET", "IRET", "NOP")

UNITS = ("CORE", "SHIFT", "MUL", "DIV")
_SHIFT_OPS = frozenset({"SHL", "SHR", "SRA", "ROL", "ROR"})

# operand roles: register, 16-bit immediate, 24-bit target,
# memory reference (imm16 with optional base register)
ROLES = ("r", "i16", "m16", "t24")


class IsaError(Exception):
    """Base class for ISA configuration errors."""


class IsaFormatError(IsaError):
    """Syntax error in an ISA config document (carries line and column)."""

    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class IsaValidationError(IsaError):
    """A structurally parsed config violates model invariants."""

    def __init__(self, diagnostics: list["Diagnostic"]):
        super().__init__("; ".join(str(d) for d in diagnostics[:5]))
        self.diagnostics = diagnostics


class EncodeError(IsaError):
    """Operand values cannot be encoded (arity or range violation)."""


class DecodeError(IsaError):
    """A word is not a valid instruction under the given config."""

    def __init__(self, word: int, message: str):
        super().__init__(f"0x{word & WORD_MASK:08X}: {message}")
        self.word = word & WORD_MASK


class UnknownOpcodeError(DecodeError):
    def __init__(self, word: int):
        super().__init__(word, f"unknown opcode 0x{(word >> 24) & 0xFF:02X}")


class NonCanonicalWordError(DecodeError):
    def __init__(self, word: int):
        super().__init__(word, "nonzero bits in unused encoding fields")


@dataclass(frozen=True)
class Diagnostic:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


@dataclass(frozen=True)
class MicroOp:
    """One element of the closed behavior vocabulary.

    ``template`` is ALU3/ALUI (with ``op``), BRANCH (with ``cond``), or one
    of the simple templates.  The token form is e.g. ``ALU3.ADD``,
    ``BRANCH.EQ``, ``LDI``.
    """

    template: str
    op: str | None = None
    cond: str | None = None

    @property
    def token(self) -> str:
        if self.template in ("ALU3", "ALUI"):
            return f"{self.template}.{self.op}"
        if self.template == "BRANCH":
            return f"BRANCH.{self.cond}"
        return self.template

    @staticmethod
    def from_token(token: str) -> "MicroOp":
        head, _, tail = token.partition(".")
        if head in ("ALU3", "ALUI"):
            if tail not in ALU_OPS:
                raise ValueError(f"unknown ALU op {tail!r} in {token!r}")
            return MicroOp(head, op=tail)
        if head == "BRANCH":
            if tail not in BRANCH_CONDS:
                raise ValueError(f"unknown branch condition {tail!r} in {token!r}")
            return MicroOp(head, cond=tail)
        if head in SIMPLE_TEMPLATES and not tail:
            return MicroOp(head)
        raise ValueError(f"unknown micro-op token {token!r}")


def units_for(micro: MicroOp) -> frozenset[str]:
    """Datapath units a micro-op requires (MUL/DIV/SHIFT beyond the core)."""
    if micro.template in ("ALU3", "ALUI"):
        if micro.op == "MUL":
            return frozenset({"MUL"})
        if micro.op == "DIV":
            return frozenset({"DIV"})
        if micro.op in _SHIFT_OPS:
            return frozenset({"SHIFT"})
    return frozenset({"CORE"})


def operand_roles_for(micro: MicroOp) -> tuple[str, ...]:
    """Operand role pattern implied by a micro-op template."""
    return {
        "ALU3": ("r", "r", "r"),
        "ALUI": ("r", "r", "i16"),
        "LDI": ("r", "i16"),
        "LOAD": ("r", "m16"),
        "STORE": ("r", "m16"),
        "CMP": ("r", "r"),
        "BRANCH": ("i16",),
        "JMP": ("t24",),
        "JSUB": ("t24",),
        "RET": (),
        "IRET": (),
        "NOP": (),
    }[micro.template]


def format_for(micro: MicroOp) -> str:
    """Encoding format implied by a micro-op template."""
    if micro.template in ("ALU3", "CMP", "RET", "IRET", "NOP"):
        return "A"
    if micro.template in ("JMP", "JSUB"):
        return "J"
    return "L"


@dataclass(frozen=True)
class InstructionDef:
    mnemonic: str
    opcode: int
    fmt: str
    operands: tuple[str, ...]
    semantics: MicroOp
    units: frozenset[str]

    def field_names(self) -> tuple[str, ...]:
        """Encoding field names bound by this instruction, in operand order.

        An ``m16`` operand binds two fields (imm16 then rb).
        """
        regs = iter(("ra", "rb", "rc"))
        names: list[str] = []
        for role in self.operands:
            if role == "r":
                names.append(next(regs))
            elif role == "i16":
                names.append("imm16")
            elif role == "m16":
                names.extend(("imm16", "rb"))
            elif role == "t24":
                names.append("target24")
        return tuple(names)


def standard_register_roles() -> tuple[str, ...]:
    """The fixed 17-register role assignment, indexed by register number."""
    roles = ["general"] * REGISTER_COUNT
    roles[REG_ZERO] = "zero"
    roles[REG_SW] = "sw"
    roles[REG_SP] = "sp"
    roles[REG_LR] = "lr"
    roles[REG_PC] = "pc"
    roles[REG_IR] = "ir"
    return tuple(roles)


@dataclass(frozen=True)
class IsaConfig:
    """A complete machine description: registers plus instruction table.

    Instructions are kept sorted by opcode so that structural equality and
    serialization are canonical.
    """

    name: str
    instructions: tuple[InstructionDef, ...]
    required_core: frozenset[str] = frozenset()
    word_bits: int = WORD_BITS
    register_count: int = REGISTER_COUNT
    register_roles: tuple[str, ...] = field(default_factory=standard_register_roles)

    def __post_init__(self):
        object.__setattr__(self, "instructions",
                           tuple(sorted(self.instructions, key=lambda d: d.opcode)))
        object.__setattr__(self, "required_core", frozenset(self.required_core))
        object.__setattr__(self, "register_roles", tuple(self.register_roles))

    def mnemonics(self) -> frozenset[str]:
        return frozenset(d.mnemonic for d in self.instructions)

    def by_mnemonic(self) -> dict[str, InstructionDef]:
        return {d.mnemonic: d for d in self.instructions}

    def by_opcode(self) -> dict[int, InstructionDef]:
        return {d.opcode: d for d in self.instructions}

    def subset(self, keep: Iterable[str], name: str | None = None) -> "IsaConfig":
        """A config containing only the named mnemonics (encodings unchanged)."""
        keep = frozenset(keep)
        return IsaConfig(
            name=name if name is not None else self.name,
            instructions=tuple(d for d in self.instructions if d.mnemonic in keep),
            required_core=self.required_core & keep,
            word_bits=self.word_bits,
            register_count=self.register_count,
            register_roles=self.register_roles,
        )


# ---------------------------------------------------------------------------
# validation

_MNEMONIC_RE = re.compile(r"^[A-Z][A-Z0-9]*$")


def validate(cfg: IsaConfig) -> list[Diagnostic]:
    """Check every model invariant; empty result means the config is valid."""
    diags: list[Diagnostic] = []
    where = f"config {cfg.name!r}"

    if cfg.word_bits != WORD_BITS:
        diags.append(Diagnostic(where, f"word_bits must be {WORD_BITS}, got {cfg.word_bits}"))
    if cfg.register_count != REGISTER_COUNT:
        diags.append(Diagnostic(where, f"register_count must be {REGISTER_COUNT}, got {cfg.register_count}"))

    std = standard_register_roles()
    if len(cfg.register_roles) != REGISTER_COUNT:
        diags.append(Diagnostic(where, f"register_roles must cover {REGISTER_COUNT} registers"))
    else:
        for idx, want in enumerate(std):
            if cfg.register_roles[idx] != want:
                diags.append(Diagnostic(
                    where, f"register R{idx} must have role {want!r}, got {cfg.register_roles[idx]!r}"))

    seen_mnemonics: dict[str, int] = {}
    seen_opcodes: dict[int, str] = {}
    for d in cfg.instructions:
        loc = f"instruction {d.mnemonic}"
        if not _MNEMONIC_RE.match(d.mnemonic):
            diags.append(Diagnostic(loc, "mnemonic must be an uppercase identifier"))
        if d.mnemonic in seen_mnemonics:
            diags.append(Diagnostic(loc, "duplicate mnemonic"))
        seen_mnemonics[d.mnemonic] = d.opcode
        if not 0 <= d.opcode <= 0xFF:
            diags.append(Diagnostic(loc, f"opcode 0x{d.opcode:X} out of range 0..0xFF"))
        elif d.opcode in seen_opcodes:
            diags.append(Diagnostic(
                loc, f"duplicate opcode 0x{d.opcode:02X} (also {seen_opcodes[d.opcode]})"))
        else:
            seen_opcodes[d.opcode] = d.mnemonic
        if d.fmt not in FORMATS:
            diags.append(Diagnostic(loc, f"unknown format {d.fmt!r}"))
            continue
        if d.fmt != format_for(d.semantics):
            diags.append(Diagnostic(
                loc, f"format {d.fmt} does not match micro-op {d.semantics.token} "
                     f"(expected {format_for(d.semantics)})"))
        if d.operands != operand_roles_for(d.semantics):
            diags.append(Diagnostic(
                loc, f"operand pattern {','.join(d.operands) or '-'} does not match "
                     f"micro-op {d.semantics.token} "
                     f"(expected {','.join(operand_roles_for(d.semantics)) or '-'})"))
        if d.units != units_for(d.semantics):
            diags.append(Diagnostic(
                loc, f"units {sorted(d.units)} do not match micro-op "
                     f"{d.semantics.token} (expected {sorted(units_for(d.semantics))})"))

    for name in sorted(cfg.required_core):
        if name not in seen_mnemonics:
            diags.append(Diagnostic(
                where, f"required_core names absent mnemonic {name!r}"))
    return diags


# ---------------------------------------------------------------------------
# text format

_INSN_KEYS = ("opcode", "fmt", "ops", "sem", "units")


def _unit_sort_key(u: str) -> int:
    return UNITS.index(u)


def serialize_isa_config(cfg: IsaConfig) -> str:
    """Canonical text form: headers, core line, instructions sorted by opcode."""
    lines = [
        f"# instruction set configuration: {cfg.name}",
        f"name: {cfg.name}",
        f"registers: {cfg.register_count}",
    ]
    if cfg.required_core:
        lines.append("core: " + ", ".join(sorted(cfg.required_core)))
    for d in cfg.instructions:
        ops = ",".join(d.operands) if d.operands else "-"
        units = ",".join(sorted(d.units, key=_unit_sort_key))
        lines.append(
            f"INSN {d.mnemonic:<6} opcode=0x{d.opcode:02X} fmt={d.fmt} "
            f"ops={ops} sem={d.semantics.token} units={units}")
    return "\n".join(lines) + "\n"


def parse_isa_config(text: str) -> IsaConfig:
    """Parse and validate the line-oriented ISA config format.

    Raises :class:`IsaFormatError` on syntax problems (with line/column) and
    :class:`IsaValidationError` when the parsed model breaks an invariant
    (duplicate mnemonic/opcode, operand/format mismatch, ...).
    """
    name: str | None = None
    registers: int | None = None
    core: frozenset[str] = frozenset()
    seen_core = False
    insns: list[InstructionDef] = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        tokens = [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", line)]
        col0, head = tokens[0]
        if head == "INSN":
            insns.append(_parse_insn_line(lineno, tokens))
            continue
        key, _, rest = line.strip().partition(":")
        if not _:
            raise IsaFormatError(lineno, col0, f"expected 'key: value' or INSN line, got {head!r}")
        value = rest.strip()
        if key == "name":
            if name is not None:
                raise IsaFormatError(lineno, col0, "duplicate name: line")
            if not value:
                raise IsaFormatError(lineno, col0, "empty name")
            name = value
        elif key == "registers":
            if registers is not None:
                raise IsaFormatError(lineno, col0, "duplicate registers: line")
            try:
                registers = int(value, 0)
            except ValueError:
                raise IsaFormatError(lineno, col0, f"registers must be an integer, got {value!r}")
        elif key == "core":
            if seen_core:
                raise IsaFormatError(lineno, col0, "duplicate core: line")
            seen_core = True
            core = frozenset(t.strip() for t in value.split(",") if t.strip())
        else:
            raise IsaFormatError(lineno, col0, f"unknown header {key!r}")

    if name is None:
        raise IsaFormatError(0, 0, "missing name: header")
    if registers is None:
        raise IsaFormatError(0, 0, "missing registers: header")

    cfg = IsaConfig(name=name, instructions=tuple(insns), required_core=core,
                    register_count=registers)
    diags = validate(cfg)
    if diags:
        raise IsaValidationError(diags)
    return cfg


def _parse_insn_line(lineno: int, tokens: list[tuple[int, str]]) -> InstructionDef:
    if len(tokens) < 2:
        raise IsaFormatError(lineno, tokens[0][0], "INSN line missing mnemonic")
    col_m, mnemonic = tokens[1]
    if not _MNEMONIC_RE.match(mnemonic):
        raise IsaFormatError(lineno, col_m, f"bad mnemonic {mnemonic!r}")

    fields: dict[str, str] = {}
    for col, tok in tokens[2:]:
        key, eq, value = tok.partition("=")
        if not eq or key not in _INSN_KEYS:
            raise IsaFormatError(lineno, col, f"expected key=value with key in {_INSN_KEYS}, got {tok!r}")
        if key in fields:
            raise IsaFormatError(lineno, col, f"duplicate {key}=")
        fields[key] = value
    missing = [k for k in _INSN_KEYS if k not in fields]
    if missing:
        raise IsaFormatError(lineno, tokens[0][0], f"INSN {mnemonic} missing {missing[0]}=")

    try:
        opcode = int(fields["opcode"], 16 if fields["opcode"].lower().startswith("0x") else 10)
    except ValueError:
        raise IsaFormatError(lineno, tokens[0][0], f"bad opcode {fields['opcode']!r}")
    fmt = fields["fmt"]
    ops = () if fields["ops"] == "-" else tuple(fields["ops"].split(","))
    for role in ops:
        if role not in ROLES:
            raise IsaFormatError(lineno, tokens[0][0], f"unknown operand role {role!r}")
    try:
        sem = MicroOp.from_token(fields["sem"])
    except ValueError as e:
        raise IsaFormatError(lineno, tokens[0][0], str(e))
    units = frozenset(fields["units"].split(","))
    for u in units:
        if u not in UNITS:
            raise IsaFormatError(lineno, tokens[0][0], f"unknown unit {u!r}")
    return InstructionDef(mnemonic=mnemonic, opcode=opcode, fmt=fmt,
                          operands=ops, semantics=sem, units=units)


def load_default_config() -> IsaConfig:
    """The shipped 36-instruction default configuration."""
    text = resources.files("risasoc.data").joinpath("default.isa").read_text("utf-8")
    return parse_isa_config(text)


# ---------------------------------------------------------------------------
# bit-level encode/decode

_FIELD_SHIFT = {"ra": 20, "rb": 16, "rc": 12}
_FIELD_MASK = {"ra": 0xF, "rb": 0xF, "rc": 0xF,
               "imm16": 0xFFFF, "target24": 0xFFFFFF}


def encode(idef: InstructionDef, **fields: int) -> int:
    """Assemble a 32-bit word from bound field values.

    Field names follow the encoding layout (``ra``/``rb``/``rc``/``imm16``/
    ``target24``); exactly the fields named by ``idef.field_names()`` must be
    given.  Register fields accept 0..15 (R16, the instruction register, has
    no encoding).
    """
    wanted = idef.field_names()
    given = set(fields)
    if given != set(wanted):
        extra = sorted(given - set(wanted))
        missing = sorted(set(wanted) - given)
        parts = []
        if missing:
            parts.append(f"missing {missing}")
        if extra:
            parts.append(f"unexpected {extra}")
        raise EncodeError(f"{idef.mnemonic}: operand arity mismatch: {'; '.join(parts)}")

    word = (idef.opcode & 0xFF) << 24
    for fname in wanted:
        value = fields[fname]
        if fname in ("ra", "rb", "rc"):
            if not 0 <= value <= 0xF:
                if value == REG_IR:
                    raise EncodeError(f"{idef.mnemonic}: R16 (IR) is not encodable")
                raise EncodeError(f"{idef.mnemonic}: register field {fname}={value} out of range 0..15")
            word |= value << _FIELD_SHIFT[fname]
        elif fname == "imm16":
            if not 0 <= value <= 0xFFFF:
                raise EncodeError(f"{idef.mnemonic}: imm16=0x{value:X} out of range 0..0xFFFF")
            word |= value
        else:  # target24
            if not 0 <= value <= 0xFFFFFF:
                raise EncodeError(f"{idef.mnemonic}: target24=0x{value:X} out of range 0..0xFFFFFF")
            word |= value
    return word


def _used_bits(idef: InstructionDef) -> int:
    mask = 0xFF << 24
    for fname in idef.field_names():
        if fname in _FIELD_SHIFT:
            mask |= _FIELD_MASK[fname] << _FIELD_SHIFT[fname]
        elif fname == "imm16":
            mask |= 0xFFFF
        else:
            mask |= 0xFFFFFF
    return mask


@lru_cache(maxsize=None)
def _decode_table(cfg: IsaConfig) -> dict[int, tuple[InstructionDef, int]]:
    return {d.opcode: (d, _used_bits(d)) for d in cfg.instructions}


def decode(cfg: IsaConfig, word: int) -> tuple[InstructionDef, dict[str, int]]:
    """Inverse of :func:`encode` for every instruction in ``cfg``.

    Rejects unknown opcodes and words with nonzero bits in unused fields,
    so ``encode(*decode(cfg, w)) == w`` holds on everything accepted.
    """
    word &= WORD_MASK
    entry = _decode_table(cfg).get((word >> 24) & 0xFF)
    if entry is None:
        raise UnknownOpcodeError(word)
    idef, used = entry
    if word & ~used & WORD_MASK:
        raise NonCanonicalWordError(word)
    fields: dict[str, int] = {}
    for fname in idef.field_names():
        if fname in _FIELD_SHIFT:
            fields[fname] = (word >> _FIELD_SHIFT[fname]) & 0xF
        elif fname == "imm16":
            fields[fname] = word & 0xFFFF
        else:
            fields[fname] = word & 0xFFFFFF
    return idef, fields
