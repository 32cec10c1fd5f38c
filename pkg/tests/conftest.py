import random
import re

import pytest

from risasoc import isa_core
from risasoc.assembler import build_assembler, link
from risasoc.isa_core import InstructionDef, IsaConfig, MicroOp

# the four-line add/store reference program with externally pinned encodings
REF_PROGRAM = """\
LDI R4, 0x04
LDI R5, 0x08
ADD R8, R5, R4
ST  R8, 0x80
"""
REF_WORDS = (0x08400004, 0x08500008, 0x13854000, 0x01800080)
REF_BYTES = bytes.fromhex("08400004 08500008 13854000 01800080".replace(" ", ""))


@pytest.fixture(scope="session")
def default_cfg():
    return isa_core.load_default_config()


@pytest.fixture(scope="session")
def ref_module(default_cfg):
    return build_assembler(default_cfg).assemble(REF_PROGRAM, origin=0)


@pytest.fixture(scope="session")
def ref_image(ref_module):
    return link([ref_module], base=0)


def random_valid_config(rng: random.Random, max_instructions: int = 20) -> IsaConfig:
    """A structurally valid config with randomized names/opcodes/micro-ops."""
    n = rng.randint(0, max_instructions)
    opcodes = rng.sample(range(256), n)
    mnemonics = set()
    while len(mnemonics) < n:
        mnemonics.add("".join(rng.choice("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
                              for _ in range(rng.randint(2, 6))))
    defs = []
    for mnemonic, opcode in zip(sorted(mnemonics), opcodes):
        kind = rng.choice(("ALU3", "ALUI", "BRANCH", "LDI", "LOAD", "STORE",
                           "CMP", "JMP", "JSUB", "RET", "IRET", "NOP"))
        if kind in ("ALU3", "ALUI"):
            sem = MicroOp(kind, op=rng.choice(isa_core.ALU_OPS))
        elif kind == "BRANCH":
            sem = MicroOp(kind, cond=rng.choice(isa_core.BRANCH_CONDS))
        else:
            sem = MicroOp(kind)
        defs.append(InstructionDef(
            mnemonic=mnemonic, opcode=opcode, fmt=isa_core.format_for(sem),
            operands=isa_core.operand_roles_for(sem), semantics=sem,
            units=isa_core.units_for(sem)))
    core = frozenset(rng.sample([d.mnemonic for d in defs], rng.randint(0, min(3, n)))) \
        if n else frozenset()
    return IsaConfig(name=f"rand{rng.randint(0, 10**6)}", instructions=tuple(defs),
                     required_core=core)


def random_operands(rng: random.Random, idef: InstructionDef) -> dict[str, int]:
    fields = {}
    for fname in idef.field_names():
        if fname in ("ra", "rb", "rc"):
            fields[fname] = rng.randint(0, 15)
        elif fname == "imm16":
            fields[fname] = rng.randint(0, 0xFFFF)
        else:
            fields[fname] = rng.randint(0, 0xFFFFFF)
    return fields


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    results: dict[str, str] = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_acceptance\.py::test_(c\d+)_", nodeid)
            if m and getattr(rep, "when", "call") == "call":
                results[m.group(1)] = "PASS" if outcome == "passed" else "FAIL"
    if not results:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(
            f"{results[key]}  {key}: {CRITERIA.get(key, '')}")
