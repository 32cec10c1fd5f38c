"""Reduced-ISA computation: scan target programs for the mnemonics they use
and shrink a full config down to that set plus a mandatory core.

With no usage reports the reduction is the identity, so a toolchain built
from the result always accepts at least what the programs need.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa_core import IsaConfig

_LABEL_RE = re.compile(r"^\s*([A-Za-z_.$][\w.$]*)\s*:")
_MNEMONIC_RE = re.compile(r"^[A-Za-z][A-Za-z0-9]*$")


class ReductionError(Exception):
    """A scanned program uses mnemonics the full ISA does not define."""


@dataclass(frozen=True)
class UsageReport:
    """Mnemonic usage of one scanned program."""

    used_mnemonics: frozenset[str]
    unknown_mnemonics: frozenset[str] = frozenset()
    counts: dict[str, int] = field(default_factory=dict)
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = self.used_mnemonics & self.unknown_mnemonics
        if overlap:
            raise ValueError(f"mnemonics both used and unknown: {sorted(overlap)}")

    def all_mnemonics(self) -> frozenset[str]:
        return self.used_mnemonics | self.unknown_mnemonics

    def to_json(self) -> dict:
        return {
            "used": sorted(self.used_mnemonics),
            "unknown": sorted(self.unknown_mnemonics),
            "counts": {k: self.counts[k] for k in sorted(self.counts)},
            "diagnostics": list(self.diagnostics),
        }


def scan_program(source: str, cfg: IsaConfig | None = None) -> UsageReport:
    """Collect the mnemonics appearing in instruction statements.

    Labels, directives (leading ``.``), comments (``;`` or ``#``), and blank
    lines are skipped; a malformed line is recorded as a diagnostic and the
    scan continues.  When ``cfg`` is given, mnemonics it does not define are
    reported separately as unknown.
    """
    counts: dict[str, int] = {}
    diagnostics: list[str] = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = re.split(r"[;#]", raw, 1)[0]
        while True:
            m = _LABEL_RE.match(line)
            if not m:
                break
            line = line[m.end():]
        line = line.strip()
        if not line or line.startswith("."):
            continue
        head = line.split(None, 1)[0]
        if not _MNEMONIC_RE.match(head):
            diagnostics.append(f"line {lineno}: unrecognizable statement {head!r}")
            continue
        mnemonic = head.upper()
        counts[mnemonic] = counts.get(mnemonic, 0) + 1

    mnemonics = frozenset(counts)
    if cfg is None:
        used, unknown = mnemonics, frozenset()
    else:
        known = cfg.mnemonics()
        used = mnemonics & known
        unknown = mnemonics - known
    return UsageReport(used_mnemonics=used, unknown_mnemonics=unknown,
                       counts=counts, diagnostics=tuple(diagnostics))


def merge_reports(reports: list[UsageReport]) -> UsageReport:
    """Associatively combine usage from multiple programs."""
    used: frozenset[str] = frozenset()
    unknown: frozenset[str] = frozenset()
    counts: dict[str, int] = {}
    diags: list[str] = []
    for r in reports:
        used |= r.used_mnemonics
        unknown |= r.unknown_mnemonics
        for k, v in r.counts.items():
            counts[k] = counts.get(k, 0) + v
        diags.extend(r.diagnostics)
    return UsageReport(used_mnemonics=used, unknown_mnemonics=unknown - used,
                       counts=counts, diagnostics=tuple(diags))


def reduce(full: IsaConfig, reports: list[UsageReport]) -> IsaConfig:
    """Compute the reduced ISA for the given usage.

    With no reports the result equals ``full``.  Otherwise the result keeps
    exactly the used mnemonics plus ``full.required_core``, with encodings
    unchanged.  A mnemonic absent from ``full`` is an error: the program
    cannot run on this architecture.
    """
    if not reports:
        return full
    merged = merge_reports(reports)
    requested = merged.all_mnemonics()
    missing = requested - full.mnemonics()
    if missing:
        raise ReductionError(
            f"program uses mnemonics absent from ISA {full.name!r}: {', '.join(sorted(missing))}")
    keep = requested | full.required_core
    return IsaConfig(
        name=full.name,
        instructions=tuple(d for d in full.instructions if d.mnemonic in keep),
        required_core=full.required_core,
        word_bits=full.word_bits,
        register_count=full.register_count,
        register_roles=full.register_roles,
    )
