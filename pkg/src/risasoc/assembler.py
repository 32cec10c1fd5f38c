"""Table-driven two-pass assembler and minimal linker.

An :class:`Assembler` is instantiated from any (reduced) :class:`IsaConfig`;
its mnemonic table contains exactly that config's instructions, so anything
outside the reduced set is rejected at assemble time.

Syntax::

    label:  MNEMONIC op1, op2, op3   ; comment (also #)
            .org  0x100
            .word expr, expr
            .space 8
            .equ  NAME, expr

Operands are registers ``R0..R16`` (aliases SW/SP/LR/PC), integer literals
(decimal or ``0x`` hex), symbols with an optional ``+const``/``-const``
addend, and memory references ``offset(Rb)`` where a bare offset means an
implicit ``(R0)`` base.  Branch operands are resolved relative to the next
instruction; symbols unresolved within a module become relocations (absolute
imm16 or target24) patched by :func:`link`.

Memory images are big-endian: each 32-bit word is stored most significant
byte first.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import isa_core
from .isa_core import IsaConfig, InstructionDef, IsaValidationError, validate


class AsmError(Exception):
    """Assembly failure, tagged with the source line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.reason = message


class LinkError(Exception):
    pass


# ---------------------------------------------------------------------------
# operand and statement model

@dataclass(frozen=True)
class Reg:
    n: int


@dataclass(frozen=True)
class Imm:
    value: int


@dataclass(frozen=True)
class SymRef:
    name: str
    addend: int = 0


@dataclass(frozen=True)
class Mem:
    offset: "Imm | SymRef"
    base: Reg


Operand = "Reg | Imm | SymRef | Mem"


@dataclass
class Statement:
    line_no: int
    label: str | None = None
    kind: str = "empty"  # "instruction" | "directive" | "empty"
    mnemonic: str | None = None
    operands: tuple = ()
    directive: str | None = None
    args: tuple = ()
    source: str = ""


@dataclass(frozen=True)
class Relocation:
    index: int
    symbol: str
    kind: str  # "imm16" | "target24"
    addend: int = 0


@dataclass
class ObjectModule:
    """Relocatable assembly output: words, symbols, unresolved references."""

    origin: int
    words: list[int]
    symbols: dict[str, int]
    relocations: list[Relocation] = field(default_factory=list)

    @property
    def end(self) -> int:
        return self.origin + 4 * len(self.words)

    def to_json(self) -> dict:
        return {
            "origin": self.origin,
            "words": list(self.words),
            "symbols": {k: self.symbols[k] for k in sorted(self.symbols)},
            "relocations": [
                {"index": r.index, "symbol": r.symbol, "kind": r.kind, "addend": r.addend}
                for r in self.relocations
            ],
        }

    @staticmethod
    def from_json(data: dict) -> "ObjectModule":
        return ObjectModule(
            origin=data["origin"],
            words=list(data["words"]),
            symbols=dict(data["symbols"]),
            relocations=[Relocation(**r) for r in data["relocations"]],
        )


@dataclass(frozen=True)
class MachineImage:
    """Linked flat binary, big-endian, load origin and entry address."""

    origin: int
    data: bytes
    entry: int

    def word_at(self, addr: int) -> int:
        off = addr - self.origin
        return struct.unpack_from(">I", self.data, off)[0]


# ---------------------------------------------------------------------------
# lexing

_REG_ALIASES = {"SW": 12, "SP": 13, "LR": 14, "PC": 15}
_REG_RE = re.compile(r"^R(\d+)$", re.IGNORECASE)
_INT_RE = re.compile(r"^[+-]?(0[xX][0-9a-fA-F]+|\d+)$")
_SYM_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*(?:([+-])\s*(0[xX][0-9a-fA-F]+|\d+))?$")
_MEM_RE = re.compile(r"^(.*)\(\s*(\w+)\s*\)$")
_LABEL_RE = re.compile(r"^\s*([A-Za-z_.$][\w.$]*)\s*:")


def _parse_int(text: str) -> int:
    return int(text, 0)


def _parse_reg(token: str) -> Reg | None:
    m = _REG_RE.match(token)
    if m:
        n = int(m.group(1))
        if n >= isa_core.REGISTER_COUNT:
            return None
        return Reg(n)
    alias = _REG_ALIASES.get(token.upper())
    if alias is not None:
        return Reg(alias)
    return None


def _parse_operand(line_no: int, token: str):
    token = token.strip()
    if not token:
        raise AsmError(line_no, "empty operand")
    mem = _MEM_RE.match(token)
    if mem:
        base = _parse_reg(mem.group(2))
        if base is None:
            raise AsmError(line_no, f"bad base register {mem.group(2)!r}")
        offset = _parse_operand(line_no, mem.group(1))
        if not isinstance(offset, (Imm, SymRef)):
            raise AsmError(line_no, f"bad memory offset {mem.group(1)!r}")
        return Mem(offset, base)
    reg = _parse_reg(token)
    if reg is not None:
        return reg
    if _INT_RE.match(token):
        return Imm(_parse_int(token))
    sym = _SYM_RE.match(token)
    if sym:
        addend = 0
        if sym.group(2):
            addend = _parse_int(sym.group(3))
            if sym.group(2) == "-":
                addend = -addend
        return SymRef(sym.group(1), addend)
    raise AsmError(line_no, f"unparseable operand {token!r}")


def _split_operands(text: str) -> list[str]:
    return [t for t in (p.strip() for p in text.split(","))] if text.strip() else []


def parse_source(source: str) -> list[Statement]:
    """Split assembly text into statements (labels, instructions, directives)."""
    statements: list[Statement] = []
    for line_no, raw in enumerate(source.splitlines(), 1):
        line = re.split(r"[;#]", raw, 1)[0]
        stmt = Statement(line_no=line_no, source=raw.rstrip())
        m = _LABEL_RE.match(line)
        if m:
            stmt.label = m.group(1)
            line = line[m.end():]
        body = line.strip()
        if not body:
            statements.append(stmt)
            continue
        parts = body.split(None, 1)
        head, rest = parts[0], (parts[1] if len(parts) > 1 else "")
        if head.startswith("."):
            stmt.kind = "directive"
            stmt.directive = head.lower()
            stmt.args = tuple(_split_operands(rest))
        else:
            stmt.kind = "instruction"
            stmt.mnemonic = head.upper()
            stmt.operands = tuple(_parse_operand(line_no, t) for t in _split_operands(rest))
        statements.append(stmt)
    return statements


# ---------------------------------------------------------------------------
# assembler

class Assembler:
    """Two-pass assembler bound to one instruction table.

    Immutable after construction; ``assemble`` calls on one instance are
    independent and may run concurrently.
    """

    def __init__(self, cfg: IsaConfig):
        diags = validate(cfg)
        if diags:
            raise IsaValidationError(diags)
        self.cfg = cfg
        self.table = cfg.by_mnemonic()

    # -- pass 1 ------------------------------------------------------------

    def _eval_expr(self, line_no: int, operand, symbols: dict[str, int],
                   require: bool = True) -> int | None:
        if isinstance(operand, Imm):
            return operand.value
        if isinstance(operand, SymRef):
            if operand.name in symbols:
                return symbols[operand.name] + operand.addend
            if require:
                raise AsmError(line_no, f"undefined symbol {operand.name!r}")
            return None
        raise AsmError(line_no, "expected an integer or symbol expression")

    def _layout(self, statements: list[Statement], origin: int):
        """Assign an address and word count to every statement."""
        if origin % 4:
            raise AsmError(0, f"origin 0x{origin:X} is not word-aligned")
        symbols: dict[str, int] = {}
        placed: list[tuple[Statement, int, int]] = []  # stmt, addr, nwords
        addr = origin
        for stmt in statements:
            if stmt.label is not None:
                if stmt.label in symbols:
                    raise AsmError(stmt.line_no, f"duplicate label {stmt.label!r}")
                symbols[stmt.label] = addr
            nwords = 0
            if stmt.kind == "instruction":
                nwords = 1
            elif stmt.kind == "directive":
                if stmt.directive == ".org":
                    if len(stmt.args) != 1:
                        raise AsmError(stmt.line_no, ".org takes one address")
                    target = self._eval_expr(stmt.line_no,
                                             _parse_operand(stmt.line_no, stmt.args[0]), symbols)
                    if target % 4:
                        raise AsmError(stmt.line_no, f".org 0x{target:X} is not word-aligned")
                    if target < addr:
                        raise AsmError(stmt.line_no,
                                       f".org moves backward (0x{target:X} < 0x{addr:X})")
                    addr = target
                    if stmt.label is not None:
                        symbols[stmt.label] = addr
                elif stmt.directive == ".word":
                    if not stmt.args:
                        raise AsmError(stmt.line_no, ".word needs at least one value")
                    nwords = len(stmt.args)
                elif stmt.directive == ".space":
                    if len(stmt.args) != 1:
                        raise AsmError(stmt.line_no, ".space takes one byte count")
                    size = self._eval_expr(stmt.line_no,
                                           _parse_operand(stmt.line_no, stmt.args[0]), symbols)
                    if size < 0 or size % 4:
                        raise AsmError(stmt.line_no,
                                       ".space size must be a non-negative multiple of 4")
                    nwords = size // 4
                elif stmt.directive == ".equ":
                    if len(stmt.args) != 2:
                        raise AsmError(stmt.line_no, ".equ takes a name and a value")
                    name = stmt.args[0]
                    if not re.match(r"^[A-Za-z_.$][\w.$]*$", name):
                        raise AsmError(stmt.line_no, f"bad .equ name {name!r}")
                    if name in symbols:
                        raise AsmError(stmt.line_no, f"duplicate symbol {name!r}")
                    symbols[name] = self._eval_expr(
                        stmt.line_no, _parse_operand(stmt.line_no, stmt.args[1]), symbols)
                else:
                    raise AsmError(stmt.line_no, f"unknown directive {stmt.directive}")
            placed.append((stmt, addr, nwords))
            addr += 4 * nwords
        return placed, symbols, addr

    # -- pass 2 ------------------------------------------------------------

    def _bind_fields(self, stmt: Statement, idef: InstructionDef, addr: int,
                     symbols: dict[str, int], relocs: list[Relocation], index: int):
        roles = idef.operands
        if len(stmt.operands) != len(roles):
            want = ",".join(roles) if roles else "no operands"
            raise AsmError(stmt.line_no,
                           f"{idef.mnemonic} expects {want}, got {len(stmt.operands)} operand(s)")
        fields: dict[str, int] = {}
        regs = iter(("ra", "rb", "rc"))
        is_branch = idef.semantics.template == "BRANCH"
        for role, op in zip(roles, stmt.operands):
            if role == "r":
                fname = next(regs)
                if not isinstance(op, Reg):
                    raise AsmError(stmt.line_no, f"{idef.mnemonic}: expected a register for {fname}")
                if op.n == isa_core.REG_IR:
                    raise AsmError(stmt.line_no, "R16 (IR) is read-only and not encodable")
                fields[fname] = op.n
            elif role == "i16":
                if isinstance(op, Mem):
                    raise AsmError(stmt.line_no, f"{idef.mnemonic}: memory operand not allowed here")
                if is_branch:
                    fields["imm16"] = self._branch_offset(stmt.line_no, op, addr, symbols)
                else:
                    fields["imm16"] = self._imm16(stmt.line_no, op, symbols, relocs, index)
            elif role == "m16":
                if isinstance(op, Mem):
                    offset, base = op.offset, op.base
                else:
                    offset, base = op, Reg(0)  # bare address: implicit (R0) base
                if not isinstance(offset, (Imm, SymRef)):
                    raise AsmError(stmt.line_no, f"{idef.mnemonic}: bad memory operand")
                if base.n == isa_core.REG_IR:
                    raise AsmError(stmt.line_no, "R16 (IR) is read-only and not encodable")
                fields["imm16"] = self._imm16(stmt.line_no, offset, symbols, relocs, index)
                fields["rb"] = base.n
            elif role == "t24":
                fields["target24"] = self._target24(stmt.line_no, op, symbols, relocs, index)
        return fields

    def _imm16(self, line_no, op, symbols, relocs, index) -> int:
        if isinstance(op, SymRef):
            value = self._eval_expr(line_no, op, symbols, require=False)
            if value is None:
                relocs.append(Relocation(index, op.name, "imm16", op.addend))
                return 0
        else:
            value = op.value
        if not -0x8000 <= value <= 0xFFFF:
            raise AsmError(line_no, f"immediate 0x{value:X} does not fit in 16 bits")
        return value & 0xFFFF

    def _branch_offset(self, line_no, op, addr, symbols) -> int:
        if isinstance(op, SymRef):
            target = self._eval_expr(line_no, op, symbols, require=False)
            if target is None:
                raise AsmError(line_no,
                               f"branch target {op.name!r} must be defined in this module "
                               "(no relative relocations)")
            offset = target - (addr + 4)
        else:
            offset = op.value
        if not -0x8000 <= offset <= 0x7FFF:
            raise AsmError(line_no, f"branch offset {offset} does not fit in signed 16 bits")
        return offset & 0xFFFF

    def _target24(self, line_no, op, symbols, relocs, index) -> int:
        if isinstance(op, Mem):
            raise AsmError(line_no, "jump target cannot be a memory operand")
        if isinstance(op, Reg):
            raise AsmError(line_no, "jump target cannot be a register")
        if isinstance(op, SymRef):
            value = self._eval_expr(line_no, op, symbols, require=False)
            if value is None:
                relocs.append(Relocation(index, op.name, "target24", op.addend))
                return 0
        else:
            value = op.value
        if not 0 <= value <= 0xFFFFFF:
            raise AsmError(line_no, f"jump target 0x{value:X} does not fit in 24 bits")
        if value % 4:
            raise AsmError(line_no, f"jump target 0x{value:X} is not word-aligned")
        return value

    def assemble(self, source: str, origin: int = 0) -> ObjectModule:
        """Assemble a module: pass 1 assigns addresses, pass 2 encodes words."""
        statements = parse_source(source)
        placed, symbols, end = self._layout(statements, origin)
        words = [0] * ((end - origin) // 4)
        relocs: list[Relocation] = []
        for stmt, addr, nwords in placed:
            if stmt.kind == "instruction":
                idef = self.table.get(stmt.mnemonic)
                if idef is None:
                    raise AsmError(stmt.line_no,
                                   f"unknown mnemonic {stmt.mnemonic} "
                                   f"(not in ISA {self.cfg.name!r})")
                index = (addr - origin) // 4
                fields = self._bind_fields(stmt, idef, addr, symbols, relocs, index)
                try:
                    words[index] = isa_core.encode(idef, **fields)
                except isa_core.EncodeError as e:
                    raise AsmError(stmt.line_no, str(e))
            elif stmt.kind == "directive" and stmt.directive == ".word":
                for k, arg in enumerate(stmt.args):
                    value = self._eval_expr(stmt.line_no,
                                            _parse_operand(stmt.line_no, arg), symbols)
                    words[(addr - origin) // 4 + k] = value & 0xFFFFFFFF
        return ObjectModule(origin=origin, words=words, symbols=symbols,
                            relocations=relocs)


def build_assembler(cfg: IsaConfig) -> Assembler:
    """Instantiate the table-driven assembler for one config."""
    return Assembler(cfg)


def dump_tables(cfg: IsaConfig) -> dict:
    """Export the mnemonic/encoding table as JSON-ready data."""
    return {
        "isa": cfg.name,
        "registers": cfg.register_count,
        "required_core": sorted(cfg.required_core),
        "instructions": [
            {
                "mnemonic": d.mnemonic,
                "opcode": d.opcode,
                "format": d.fmt,
                "operands": list(d.operands),
                "fields": list(d.field_names()),
                "semantics": d.semantics.token,
                "units": sorted(d.units),
            }
            for d in cfg.instructions
        ],
    }


# ---------------------------------------------------------------------------
# linker

_FIELD_LIMITS = {"imm16": 0xFFFF, "target24": 0xFFFFFF}


def link(modules: Sequence[ObjectModule], base: int = 0) -> MachineImage:
    """Produce a flat big-endian image from placed modules.

    Module ranges must be disjoint and above ``base``; every relocation must
    resolve from the union symbol table.  Entry is the ``_start`` symbol if
    defined, else the first module's origin.
    """
    if not modules:
        raise LinkError("nothing to link: empty module list")

    symbols: dict[str, int] = {}
    for mod in modules:
        for name, value in mod.symbols.items():
            if name in symbols and symbols[name] != value:
                raise LinkError(f"duplicate symbol {name!r}")
            symbols[name] = value

    ordered = sorted(modules, key=lambda m: m.origin)
    prev_end = base
    for mod in ordered:
        if mod.origin < base:
            raise LinkError(f"module at 0x{mod.origin:X} starts below base 0x{base:X}")
        if mod.origin < prev_end:
            raise LinkError(f"modules overlap at 0x{mod.origin:X}")
        prev_end = mod.end

    end = max(m.end for m in modules)
    buf = bytearray(end - base)
    for mod in modules:
        for i, word in enumerate(mod.words):
            struct.pack_into(">I", buf, mod.origin - base + 4 * i, word & 0xFFFFFFFF)

    for mod in modules:
        for reloc in mod.relocations:
            if reloc.symbol not in symbols:
                raise LinkError(f"undefined symbol {reloc.symbol!r}")
            value = symbols[reloc.symbol] + reloc.addend
            limit = _FIELD_LIMITS[reloc.kind]
            if not 0 <= value <= limit:
                raise LinkError(
                    f"relocation overflow: {reloc.symbol}+{reloc.addend} = 0x{value:X} "
                    f"does not fit {reloc.kind}")
            if reloc.kind == "target24" and value % 4:
                raise LinkError(f"relocated jump target 0x{value:X} is not word-aligned")
            off = mod.origin - base + 4 * reloc.index
            word = struct.unpack_from(">I", buf, off)[0]
            struct.pack_into(">I", buf, off, word | value)

    entry = symbols.get("_start", modules[0].origin)
    return MachineImage(origin=base, data=bytes(buf), entry=entry)


# ---------------------------------------------------------------------------
# listing

def emit_listing(module: ObjectModule, source: str) -> str:
    """Address / machine word / source listing for a module.

    Rows without emitted words (labels, .equ, blank lines) keep their source
    text with empty address and word columns.
    """
    asm_rows = [f"{'address':<10} {'word':<12} source",
                f"{'-' * 8:<10} {'-' * 10:<12} {'-' * 6}"]
    statements = parse_source(source)
    addr = module.origin
    symbols: dict[str, int] = dict(module.symbols)
    for stmt in statements:
        nwords = 0
        if stmt.kind == "instruction":
            nwords = 1
        elif stmt.directive == ".word":
            nwords = len(stmt.args)
        elif stmt.directive == ".space":
            size = symbols.get(stmt.args[0], None)
            if size is None:
                size = _parse_int(stmt.args[0])
            nwords = size // 4
        elif stmt.directive == ".org":
            target = stmt.args[0]
            addr = symbols[target] if target in symbols else _parse_int(target)

        if stmt.kind == "instruction" or stmt.directive == ".word":
            for k in range(nwords):
                word = module.words[(addr - module.origin) // 4 + k]
                src = stmt.source if k == 0 else ""
                asm_rows.append(f"0x{addr + 4 * k:04X}     0x{word:08X}   {src}")
        elif nwords:
            asm_rows.append(f"0x{addr:04X}     {'':<12} {stmt.source}")
        else:
            asm_rows.append(f"{'':<10} {'':<12} {stmt.source}")
        addr += 4 * nwords
    return "\n".join(asm_rows) + "\n"
