"""Cycle-accurate SoC simulation: CPU, bus, RAM, GPIO, UART, timer.

Timing model (one ``step_clock`` call = one system clock):

* An instruction takes exactly four clocks: Fetch, Decode, Execute,
  Write-back.  The fetch read is requested in the Fetch clock and the word
  arrives on ``dbus`` in the Decode clock; a load requests in Execute and
  receives in Write-back, so every read's data-valid cycle is its request
  cycle + 1.  A store presents address and data in the Execute clock and
  completes there.
* ``m_rw`` is 1 for reads and idle, 0 during the write clock.  ``m_en``
  marks the request clock of any bus transaction.
* Peripherals tick at the start of each clock, before the CPU acts, so a
  value written to the GPIO latch in one clock appears on the pins in the
  next.
* Interrupts are sampled at the instruction boundary (end of Write-back):
  vectoring saves the next PC into LR, clears the SW interrupt-enable bit,
  and jumps to the vector address; IRET returns through LR and re-enables.

Unknown or non-canonical instruction words and unmapped bus addresses put
the CPU into a fault state recorded on the :class:`Soc`; they do not raise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import isa_core
from .assembler import MachineImage
from .isa_core import IsaConfig, IsaValidationError, validate

WORD_MASK = 0xFFFFFFFF

FETCH, DECODE, EXECUTE, WRITEBACK = range(4)
STAGE_NAMES = ("fetch", "decode", "execute", "writeback")

SW_Z = 1 << 0
SW_LT = 1 << 1
SW_GT = 1 << 2
SW_IE = 1 << 8

RUNNING, HALTED, FAULTED = "running", "halted", "faulted"

TRACE_SIGNALS = ("mar", "mdr", "dbus", "m_rw", "m_en", "gpio_pin", "irq", "stage")


class SimulationStopped(Exception):
    """step was called on a SoC that is halted or faulted."""


class BusFault(Exception):
    def __init__(self, addr: int, why: str = "unmapped address"):
        super().__init__(f"bus fault at 0x{addr & WORD_MASK:08X}: {why}")
        self.addr = addr


class SocBuildError(Exception):
    pass


@dataclass(frozen=True)
class FaultInfo:
    kind: str
    cycle: int
    pc: int
    detail: str


@dataclass
class TraceEvent:
    __slots__ = ("cycle", "mar", "mdr", "dbus", "m_rw", "m_en", "gpio_pin", "irq", "stage")
    cycle: int
    mar: int
    mdr: int
    dbus: int
    m_rw: int
    m_en: int
    gpio_pin: int
    irq: int
    stage: int

    def signal_map(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in TRACE_SIGNALS}


# ---------------------------------------------------------------------------
# memory map

@dataclass(frozen=True)
class SocMap:
    """Address map; only the GPIO value register (gpio_base + 4 = 16388
    under the defaults) is externally fixed, the rest is convention."""

    ram_base: int = 0x0000
    ram_size: int = 0x4000
    gpio_base: int = 0x4000
    uart_base: int = 0x4100
    timer_base: int = 0x4200
    ctrl_base: int = 0x4F00
    vector_base: int = 0x0004

    PERIPH_WINDOW = 0x100

    def regions(self) -> list[tuple[str, int, int]]:
        return [
            ("ram", self.ram_base, self.ram_size),
            ("gpio", self.gpio_base, self.PERIPH_WINDOW),
            ("uart", self.uart_base, self.PERIPH_WINDOW),
            ("timer", self.timer_base, self.PERIPH_WINDOW),
            ("ctrl", self.ctrl_base, self.PERIPH_WINDOW),
        ]

    def check(self) -> None:
        spans = sorted((base, base + size, name) for name, base, size in self.regions())
        for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise SocBuildError(f"memory map regions {n0} and {n1} overlap")
        if self.vector_base % 4:
            raise SocBuildError("vector_base must be word-aligned")

    def to_json(self) -> dict:
        return {
            "ram": {"base": self.ram_base, "size": self.ram_size},
            "gpio_base": self.gpio_base,
            "uart_base": self.uart_base,
            "timer_base": self.timer_base,
            "ctrl_base": self.ctrl_base,
            "vector_base": self.vector_base,
        }

    @staticmethod
    def from_json(data: dict) -> "SocMap":
        return SocMap(
            ram_base=data.get("ram", {}).get("base", 0x0000),
            ram_size=data.get("ram", {}).get("size", 0x4000),
            gpio_base=data.get("gpio_base", 0x4000),
            uart_base=data.get("uart_base", 0x4100),
            timer_base=data.get("timer_base", 0x4200),
            ctrl_base=data.get("ctrl_base", 0x4F00),
            vector_base=data.get("vector_base", 0x0004),
        )


# ---------------------------------------------------------------------------
# peripherals

class Ram:
    def __init__(self, size: int):
        self.data = bytearray(size)

    def read(self, off: int) -> int:
        return struct.unpack_from(">I", self.data, off)[0]

    def write(self, off: int, value: int) -> None:
        struct.pack_into(">I", self.data, off, value & WORD_MASK)

    def tick(self, cycle: int) -> None:
        pass

    int_pending = False


class Gpio:
    """32-pin port: per-pin direction, an output latch, observed pin state,
    and input-edge interrupts.  Output pins follow the latch one clock after
    a write (the latch is sampled at the start of the next clock)."""

    REG_DIRECTION = 0x0
    REG_VALUE = 0x4
    REG_INT_ENABLE = 0x8
    REG_PINS = 0xC
    REG_INT_STATUS = 0x10

    def __init__(self):
        self.direction = 0
        self.value = 0
        self.pins = 0
        self.int_enable = 0
        self.int_pending = False

    def tick(self, cycle: int) -> None:
        self.pins = (self.pins & ~self.direction & WORD_MASK) | (self.value & self.direction)

    def set_input(self, pin: int, level: int) -> None:
        mask = 1 << pin
        old = self.pins & mask
        new = mask if level else 0
        self.pins = (self.pins & ~mask & WORD_MASK) | new
        if old != new and (self.int_enable & mask) and not (self.direction & mask):
            self.int_pending = True

    def read(self, off: int) -> int:
        if off == self.REG_DIRECTION:
            return self.direction
        if off == self.REG_VALUE:
            return self.value
        if off == self.REG_INT_ENABLE:
            return self.int_enable
        if off == self.REG_PINS:
            return self.pins
        if off == self.REG_INT_STATUS:
            return 1 if self.int_pending else 0
        raise BusFault(off, "no GPIO register at this offset")

    def write(self, off: int, value: int) -> None:
        value &= WORD_MASK
        if off == self.REG_DIRECTION:
            self.direction = value
        elif off == self.REG_VALUE:
            self.value = value
        elif off == self.REG_INT_ENABLE:
            self.int_enable = value
        elif off == self.REG_INT_STATUS:
            self.int_pending = False
        elif off == self.REG_PINS:
            pass  # observed state is read-only
        else:
            raise BusFault(off, "no GPIO register at this offset")


class Uart:
    """8N1 UART with 128-byte rx/tx FIFOs.

    One byte occupies the wire for ceil(10 * clock_hz / baud) clocks (start
    + 8 data + stop).  Received bytes enter the rx FIFO when their wire time
    elapses; a byte arriving at a full FIFO is dropped and sets the sticky
    overflow flag.  Transmission pops the tx FIFO at the same pacing.
    """

    FIFO_CAP = 128

    REG_DATA = 0x0
    REG_STATUS = 0x4
    REG_BAUD_DIV = 0x8
    REG_INT_ENABLE = 0xC

    ST_TX_EMPTY = 1 << 0
    ST_RX_NONEMPTY = 1 << 1
    ST_RX_OVERFLOW = 1 << 2
    ST_TX_DROPPED = 1 << 3

    IE_RX = 1 << 0
    IE_TX = 1 << 1

    def __init__(self, clock_hz: int, baud: int):
        self.clock_hz = int(clock_hz)
        self.set_baud(baud)
        self.rx_fifo: list[int] = []
        self.tx_fifo: list[int] = []
        self.rx_schedule: list[tuple[int, int]] = []  # (arrival cycle, byte)
        self._rx_next = 0
        self.tx_log: list[tuple[int, int]] = []
        self._tx_inflight: int | None = None
        self._tx_done_at = 0
        self.rx_overflow = False
        self.rx_dropped = 0
        self.tx_dropped = 0
        self.int_enable = 0

    def set_baud(self, baud: int) -> None:
        if baud <= 0:
            raise ValueError("baud must be positive")
        self.baud = int(baud)

    @property
    def byte_clocks(self) -> int:
        return -(-10 * self.clock_hz // self.baud)  # ceil

    def schedule_rx(self, data: bytes, start_cycle: int) -> None:
        step = self.byte_clocks
        new = [(start_cycle + (k + 1) * step, byte) for k, byte in enumerate(data)]
        undelivered = self.rx_schedule[self._rx_next:] + new
        undelivered.sort(key=lambda t: t[0])
        self.rx_schedule = undelivered
        self._rx_next = 0

    def tick(self, cycle: int) -> None:
        sched = self.rx_schedule
        while self._rx_next < len(sched) and sched[self._rx_next][0] <= cycle:
            byte = sched[self._rx_next][1]
            self._rx_next += 1
            if len(self.rx_fifo) >= self.FIFO_CAP:
                self.rx_overflow = True
                self.rx_dropped += 1
            else:
                self.rx_fifo.append(byte)
        if self._tx_inflight is not None and cycle >= self._tx_done_at:
            self.tx_log.append((cycle, self._tx_inflight))
            self._tx_inflight = None
        if self._tx_inflight is None and self.tx_fifo:
            self._tx_inflight = self.tx_fifo.pop(0)
            self._tx_done_at = cycle + self.byte_clocks

    @property
    def int_pending(self) -> bool:
        if (self.int_enable & self.IE_RX) and self.rx_fifo:
            return True
        if (self.int_enable & self.IE_TX) and not self.tx_fifo and self._tx_inflight is None:
            return True
        return False

    def status(self) -> int:
        st = 0
        if not self.tx_fifo and self._tx_inflight is None:
            st |= self.ST_TX_EMPTY
        if self.rx_fifo:
            st |= self.ST_RX_NONEMPTY
        if self.rx_overflow:
            st |= self.ST_RX_OVERFLOW
        if self.tx_dropped:
            st |= self.ST_TX_DROPPED
        return st

    def read(self, off: int) -> int:
        if off == self.REG_DATA:
            return self.rx_fifo.pop(0) if self.rx_fifo else 0
        if off == self.REG_STATUS:
            return self.status()
        if off == self.REG_BAUD_DIV:
            return self.clock_hz // self.baud
        if off == self.REG_INT_ENABLE:
            return self.int_enable
        raise BusFault(off, "no UART register at this offset")

    def write(self, off: int, value: int) -> None:
        if off == self.REG_DATA:
            if len(self.tx_fifo) >= self.FIFO_CAP:
                self.tx_dropped += 1
            else:
                self.tx_fifo.append(value & 0xFF)
        elif off == self.REG_STATUS:
            self.rx_overflow = False  # sticky until acknowledged
        elif off == self.REG_BAUD_DIV:
            if value <= 0:
                raise BusFault(off, "baud divisor must be positive")
            self.set_baud(self.clock_hz // value)
        elif off == self.REG_INT_ENABLE:
            self.int_enable = value & 0x3
        else:
            raise BusFault(off, "no UART register at this offset")


class Timer:
    """16-bit up-counter with auto-reload: while running the counter
    increments once per clock and, on reaching the threshold, resets to
    zero and raises the interrupt — so interrupt cycles are spaced exactly
    ``threshold`` apart."""

    REG_COUNTER = 0x0
    REG_THRESHOLD = 0x4
    REG_CONTROL = 0x8
    REG_INT_STATUS = 0xC

    CTRL_RUN = 1 << 0
    CTRL_INT_ENABLE = 1 << 1

    def __init__(self):
        self.counter = 0
        self.threshold = 0
        self.running = False
        self.irq_enabled = False
        self.int_pending_flag = False
        self.fire_cycles: list[int] = []

    def tick(self, cycle: int) -> None:
        if not self.running:
            return
        self.counter = (self.counter + 1) & 0xFFFF
        if self.threshold and self.counter == self.threshold:
            self.counter = 0
            self.int_pending_flag = True
            self.fire_cycles.append(cycle)

    @property
    def int_pending(self) -> bool:
        return self.int_pending_flag and self.irq_enabled

    def read(self, off: int) -> int:
        if off == self.REG_COUNTER:
            return self.counter
        if off == self.REG_THRESHOLD:
            return self.threshold
        if off == self.REG_CONTROL:
            return (self.CTRL_RUN if self.running else 0) | \
                   (self.CTRL_INT_ENABLE if self.irq_enabled else 0)
        if off == self.REG_INT_STATUS:
            return 1 if self.int_pending_flag else 0
        raise BusFault(off, "no timer register at this offset")

    def write(self, off: int, value: int) -> None:
        if off == self.REG_COUNTER:
            self.counter = value & 0xFFFF
        elif off == self.REG_THRESHOLD:
            self.threshold = value & 0xFFFF
        elif off == self.REG_CONTROL:
            self.running = bool(value & self.CTRL_RUN)
            self.irq_enabled = bool(value & self.CTRL_INT_ENABLE)
        elif off == self.REG_INT_STATUS:
            self.int_pending_flag = False
        else:
            raise BusFault(off, "no timer register at this offset")


class Ctrl:
    """Control block: a write to offset 0 stops the clock loop."""

    def __init__(self, on_halt: Callable[[], None]):
        self._on_halt = on_halt

    def read(self, off: int) -> int:
        return 0

    def write(self, off: int, value: int) -> None:
        if off == 0:
            self._on_halt()

    def tick(self, cycle: int) -> None:
        pass

    int_pending = False


class Bus:
    """Flat dispatch by address range; no arbitration, no encoding."""

    def __init__(self):
        self.regions: list[tuple[int, int, object]] = []

    def attach(self, base: int, size: int, device) -> None:
        for b, s, _ in self.regions:
            if base < b + s and b < base + size:
                raise SocBuildError(f"device at 0x{base:X} overlaps region at 0x{b:X}")
        self.regions.append((base, size, device))
        self.regions.sort(key=lambda r: r[0])

    def _find(self, addr: int):
        for base, size, dev in self.regions:
            if base <= addr < base + size:
                return addr - base, dev
        raise BusFault(addr)

    def read(self, addr: int) -> int:
        if addr % 4:
            raise BusFault(addr, "unaligned access")
        off, dev = self._find(addr)
        return dev.read(off) & WORD_MASK

    def write(self, addr: int, value: int) -> None:
        if addr % 4:
            raise BusFault(addr, "unaligned access")
        off, dev = self._find(addr)
        dev.write(off, value & WORD_MASK)


# ---------------------------------------------------------------------------
# CPU + SoC

def _signed32(v: int) -> int:
    return v - 0x100000000 if v & 0x80000000 else v


def _sext16(v: int) -> int:
    return v - 0x10000 if v & 0x8000 else v


def _alu(op: str, a: int, b: int) -> int:
    if op == "ADD":
        return (a + b) & WORD_MASK
    if op == "SUB":
        return (a - b) & WORD_MASK
    if op == "MUL":
        return (a * b) & WORD_MASK
    if op == "DIV":
        return 0 if b == 0 else (a // b)  # unsigned; divide-by-zero yields 0
    if op == "AND":
        return a & b
    if op == "OR":
        return a | b
    if op == "XOR":
        return a ^ b
    n = b & 31
    if op == "SHL":
        return (a << n) & WORD_MASK
    if op == "SHR":
        return a >> n
    if op == "SRA":
        return (_signed32(a) >> n) & WORD_MASK
    if op == "ROL":
        return ((a << n) | (a >> (32 - n))) & WORD_MASK if n else a
    if op == "ROR":
        return ((a >> n) | (a << (32 - n))) & WORD_MASK if n else a
    raise ValueError(f"unknown ALU op {op}")


def _branch_taken(cond: str, sw: int) -> bool:
    z = bool(sw & SW_Z)
    lt = bool(sw & SW_LT)
    gt = bool(sw & SW_GT)
    return {
        "EQ": z,
        "NE": not z,
        "LT": lt,
        "GT": gt,
        "LE": z or lt,
        "GE": z or gt,
        "ALWAYS": True,
    }[cond]


class Cpu:
    def __init__(self, entry: int):
        self.regs = [0] * 17
        self.regs[isa_core.REG_PC] = entry & WORD_MASK
        self.stage = FETCH
        # bus signal latches
        self.mar = 0
        self.mdr = 0
        self.dbus = 0
        self.m_rw = 1
        self.m_en = 0
        # per-instruction state
        self.cur = None  # (InstructionDef, fields)
        self.pending_write: tuple[int, int] | None = None
        self.pending_load_reg: int | None = None
        self.branch_target: int | None = None
        self.iret_flag = False

    def write_reg(self, idx: int, value: int) -> None:
        # R0 discards writes; R16 (IR) is set only by instruction fetch
        if idx != isa_core.REG_ZERO and idx != isa_core.REG_IR:
            self.regs[idx] = value & WORD_MASK


class Soc:
    """One simulated system.  Single-threaded: all mutation goes through
    the step methods; independent instances can run in parallel."""

    def __init__(self, cfg: IsaConfig, image: MachineImage, soc_map: SocMap,
                 clock_hz: int, baud: int):
        soc_map.check()
        diags = validate(cfg)
        if diags:
            raise IsaValidationError(diags)
        self.cfg = cfg
        self.map = soc_map
        self.clock_hz = int(clock_hz)

        self.ram = Ram(soc_map.ram_size)
        self.gpio = Gpio()
        self.uart = Uart(self.clock_hz, baud)
        self.timer = Timer()
        self.ctrl = Ctrl(self._request_halt)
        self.bus = Bus()
        self.bus.attach(soc_map.ram_base, soc_map.ram_size, self.ram)
        self.bus.attach(soc_map.gpio_base, SocMap.PERIPH_WINDOW, self.gpio)
        self.bus.attach(soc_map.uart_base, SocMap.PERIPH_WINDOW, self.uart)
        self.bus.attach(soc_map.timer_base, SocMap.PERIPH_WINDOW, self.timer)
        self.bus.attach(soc_map.ctrl_base, SocMap.PERIPH_WINDOW, self.ctrl)
        self._ticking = [self.gpio, self.uart, self.timer]

        if image.origin < soc_map.ram_base or \
                image.origin + len(image.data) > soc_map.ram_base + soc_map.ram_size:
            raise SocBuildError(
                f"image [0x{image.origin:X}, 0x{image.origin + len(image.data):X}) "
                f"does not fit in RAM")
        self.ram.data[image.origin - soc_map.ram_base:
                      image.origin - soc_map.ram_base + len(image.data)] = image.data

        self.cpu = Cpu(image.entry)
        self.cycle = 0
        self.retired = 0
        self.state = RUNNING
        self.fault: FaultInfo | None = None
        self.tracing = True
        self._soft_irq: set[str] = set()
        self._gpio_stimulus: dict[int, list[tuple[int, int]]] = {}

    # -- wiring helpers ------------------------------------------------------

    def attach_device(self, base: int, size: int, device) -> None:
        """Map an extra peripheral; it ticks each clock like the built-ins."""
        self.bus.attach(base, size, device)
        self._ticking.append(device)

    def schedule_gpio_input(self, cycle: int, pin: int, level: int) -> None:
        self._gpio_stimulus.setdefault(cycle, []).append((pin, level))

    def _request_halt(self) -> None:
        self.state = HALTED

    def _fault(self, kind: str, detail: str) -> None:
        self.state = FAULTED
        self.fault = FaultInfo(kind=kind, cycle=self.cycle,
                               pc=self.cpu.regs[isa_core.REG_PC], detail=detail)

    def irq_line(self) -> bool:
        if self._soft_irq:
            return True
        return any(dev.int_pending for dev in self._ticking)

    # -- clocking -------------------------------------------------------------

    def step_clock(self) -> list[TraceEvent]:
        """Advance exactly one system clock; returns the sampled trace event
        (empty list when tracing is off)."""
        if self.state != RUNNING:
            raise SimulationStopped(f"SoC is {self.state}")
        cycle = self.cycle
        for pin, level in self._gpio_stimulus.pop(cycle, ()):
            self.gpio.set_input(pin, level)
        for dev in self._ticking:
            dev.tick(cycle)
        self._cpu_clock()
        events: list[TraceEvent] = []
        if self.tracing:
            cpu = self.cpu
            events.append(TraceEvent(
                cycle=cycle, mar=cpu.mar, mdr=cpu.mdr, dbus=cpu.dbus,
                m_rw=cpu.m_rw, m_en=cpu.m_en, gpio_pin=self.gpio.pins,
                irq=1 if self.irq_line() else 0, stage=cpu.stage))
        cpu = self.cpu
        cpu.stage = (cpu.stage + 1) & 3
        self.cycle = cycle + 1
        return events

    def step_instruction(self) -> list[TraceEvent]:
        """Run one full machine cycle (4 clocks), stopping early on fault."""
        events: list[TraceEvent] = []
        for _ in range(4):
            events.extend(self.step_clock())
            if self.state != RUNNING:
                break
        return events

    def run(self, max_cycles: int | None = None, until_halt: bool = False,
            tracing: bool | None = None) -> list[TraceEvent]:
        """Clock the SoC until halt, fault, or the cycle budget runs out."""
        if not until_halt and max_cycles is None:
            raise ValueError("run() needs max_cycles or until_halt")
        if tracing is not None:
            self.tracing = tracing
        events: list[TraceEvent] = []
        start = self.cycle
        while self.state == RUNNING:
            if max_cycles is not None and self.cycle - start >= max_cycles:
                break
            events.extend(self.step_clock())
        return events

    # -- the CPU state machine -------------------------------------------------

    def _cpu_clock(self) -> None:
        cpu = self.cpu
        stage = cpu.stage
        if stage == FETCH:
            pc = cpu.regs[isa_core.REG_PC]
            if pc % 4:
                self._fault("misaligned-pc", f"PC=0x{pc:08X}")
                return
            cpu.mar = pc
            cpu.m_rw = 1
            cpu.m_en = 1
            cpu.pending_write = None
            cpu.pending_load_reg = None
            cpu.branch_target = None
            cpu.iret_flag = False
        elif stage == DECODE:
            cpu.m_en = 0
            try:
                word = self.bus.read(cpu.mar)
            except BusFault as e:
                self._fault("bus", str(e))
                return
            cpu.dbus = word
            cpu.regs[isa_core.REG_IR] = word
            try:
                cpu.cur = isa_core.decode(self.cfg, word)
            except isa_core.DecodeError as e:
                cpu.cur = None
                self._fault("illegal-instruction", str(e))
                return
            cpu.regs[isa_core.REG_PC] = (cpu.regs[isa_core.REG_PC] + 4) & WORD_MASK
        elif stage == EXECUTE:
            cpu.m_en = 0
            self._execute(cpu)
        else:  # WRITEBACK
            cpu.m_en = 0
            if cpu.pending_load_reg is not None:
                try:
                    value = self.bus.read(cpu.mar)
                except BusFault as e:
                    self._fault("bus", str(e))
                    return
                cpu.dbus = value
                cpu.write_reg(cpu.pending_load_reg, value)
            elif cpu.pending_write is not None:
                cpu.write_reg(*cpu.pending_write)
            if cpu.branch_target is not None:
                cpu.regs[isa_core.REG_PC] = cpu.branch_target & WORD_MASK
            if cpu.iret_flag:
                cpu.regs[isa_core.REG_SW] |= SW_IE
            self.retired += 1
            if self.state == RUNNING and self.irq_line() and \
                    cpu.regs[isa_core.REG_SW] & SW_IE:
                cpu.regs[isa_core.REG_LR] = cpu.regs[isa_core.REG_PC]
                cpu.regs[isa_core.REG_SW] &= ~SW_IE & WORD_MASK
                cpu.regs[isa_core.REG_PC] = self.map.vector_base
                self._soft_irq.clear()

    def _execute(self, cpu: Cpu) -> None:
        idef, fields = cpu.cur
        sem = idef.semantics
        t = sem.template
        regs = cpu.regs
        if t == "ALU3":
            cpu.pending_write = (fields["ra"], _alu(sem.op, regs[fields["rb"]], regs[fields["rc"]]))
        elif t == "ALUI":
            imm = fields["imm16"]
            if sem.op in ("ADD", "SUB"):
                imm = _sext16(imm) & WORD_MASK
            cpu.pending_write = (fields["ra"], _alu(sem.op, regs[fields["rb"]], imm))
        elif t == "LDI":
            cpu.pending_write = (fields["ra"], fields["imm16"])
        elif t == "LOAD":
            ea = (regs[fields["rb"]] + fields["imm16"]) & WORD_MASK
            cpu.mar = ea
            cpu.m_rw = 1
            cpu.m_en = 1
            cpu.pending_load_reg = fields["ra"]
        elif t == "STORE":
            ea = (regs[fields["rb"]] + fields["imm16"]) & WORD_MASK
            value = regs[fields["ra"]]
            cpu.mar = ea
            cpu.mdr = value
            cpu.m_rw = 0
            cpu.m_en = 1
            try:
                self.bus.write(ea, value)
            except BusFault as e:
                self._fault("bus", str(e))
        elif t == "CMP":
            a = _signed32(regs[fields["ra"]])
            b = _signed32(regs[fields["rb"]])
            sw = regs[isa_core.REG_SW] & ~(SW_Z | SW_LT | SW_GT) & WORD_MASK
            if a == b:
                sw |= SW_Z
            elif a < b:
                sw |= SW_LT
            else:
                sw |= SW_GT
            regs[isa_core.REG_SW] = sw
        elif t == "BRANCH":
            if _branch_taken(sem.cond, regs[isa_core.REG_SW]):
                # PC already points at the next instruction
                cpu.branch_target = (regs[isa_core.REG_PC] + _sext16(fields["imm16"])) & WORD_MASK
        elif t == "JMP":
            cpu.branch_target = fields["target24"]
        elif t == "JSUB":
            cpu.pending_write = (isa_core.REG_LR, regs[isa_core.REG_PC])
            cpu.branch_target = fields["target24"]
        elif t == "RET":
            cpu.branch_target = regs[isa_core.REG_LR]
        elif t == "IRET":
            cpu.branch_target = regs[isa_core.REG_LR]
            cpu.iret_flag = True
        # NOP: nothing


def build_soc(cfg: IsaConfig, image: MachineImage, soc_map: SocMap | None = None,
              clock_hz: int = 50_000_000, baud: int = 115_200) -> Soc:
    """Assemble a SoC: RAM initialized from the image, registers zeroed,
    PC at the image entry, stage at Fetch."""
    return Soc(cfg, image, soc_map or SocMap(), clock_hz, baud)


# host-side accessors (immediate, untimed; the CPU path goes through the
# same dispatch with the one-clock reply modeled by the stage machine)

def bus_read(soc: Soc, addr: int) -> int:
    return soc.bus.read(addr)


def bus_write(soc: Soc, addr: int, word: int) -> None:
    soc.bus.write(addr, word)


def inject_uart_rx(soc: Soc, data: bytes, start_cycle: int = 0) -> None:
    """Feed bytes to the UART rx wire; byte k enters the FIFO at
    start_cycle + (k+1) * byte_clocks."""
    soc.uart.schedule_rx(data, start_cycle)


def drain_uart_tx(soc: Soc) -> list[tuple[int, int]]:
    """Take the (cycle, byte) stream that has left the tx wire so far."""
    out = soc.uart.tx_log
    soc.uart.tx_log = []
    return out


def raise_interrupt(soc: Soc, source: str) -> None:
    """Manually assert an interrupt source (gpio, uart, or timer)."""
    if source not in ("gpio", "uart", "timer"):
        raise ValueError(f"unknown interrupt source {source!r}")
    soc._soft_irq.add(source)


def apply_stimulus(soc: Soc, schedule: Iterable[dict]) -> None:
    """Install a stimulus schedule: entries are {cycle, action, ...} with
    action 'uart_rx' (data: hex string) or 'gpio_in' (pin, level)."""
    for entry in schedule:
        cycle = int(entry["cycle"])
        action = entry["action"]
        if action == "uart_rx":
            inject_uart_rx(soc, bytes.fromhex(entry["data"]), cycle)
        elif action == "gpio_in":
            soc.schedule_gpio_input(cycle, int(entry["pin"]), int(entry["level"]))
        else:
            raise ValueError(f"unknown stimulus action {action!r}")


# ---------------------------------------------------------------------------
# trace output

_VCD_WIDTHS = {"mar": 32, "mdr": 32, "dbus": 32, "m_rw": 1, "m_en": 1,
               "gpio_pin": 32, "irq": 1, "stage": 2}
_VCD_IDS = {name: chr(33 + i) for i, name in enumerate(TRACE_SIGNALS)}


def write_vcd(trace: list[TraceEvent], out, clock_hz: int = 50_000_000) -> None:
    """Standard VCD: 1 ns timescale, one sample per clock at the clock
    period.  ``out`` is a writable text file or a path."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", encoding="utf-8") as fh:
            write_vcd(trace, fh, clock_hz)
        return
    period_ns = max(1, round(1e9 / clock_hz))
    out.write("$comment risasoc simulation trace $end\n")
    out.write("$timescale 1 ns $end\n")
    out.write("$scope module soc $end\n")
    for name in TRACE_SIGNALS:
        width = _VCD_WIDTHS[name]
        label = name if width == 1 else f"{name}[{width - 1}:0]"
        out.write(f"$var wire {width} {_VCD_IDS[name]} {label} $end\n")
    out.write("$upscope $end\n")
    out.write("$enddefinitions $end\n")

    last: dict[str, int] = {}
    for i, ev in enumerate(trace):
        changes = []
        for name in TRACE_SIGNALS:
            value = getattr(ev, name)
            if i == 0 or last.get(name) != value:
                if _VCD_WIDTHS[name] == 1:
                    changes.append(f"{value}{_VCD_IDS[name]}")
                else:
                    changes.append(f"b{value:b} {_VCD_IDS[name]}")
                last[name] = value
        if changes or i == 0:
            out.write(f"#{ev.cycle * period_ns}\n")
            if i == 0:
                out.write("$dumpvars\n")
            out.write("\n".join(changes) + "\n")
            if i == 0:
                out.write("$end\n")


def write_trace_json(trace: list[TraceEvent], out) -> None:
    """JSON mirror of the trace: an array of {cycle, signals} samples."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", encoding="utf-8") as fh:
            write_trace_json(trace, fh)
        return
    samples = [{"cycle": ev.cycle, "signals": ev.signal_map()} for ev in trace]
    json.dump(samples, out, indent=1)
    out.write("\n")
