"""Desk-scale throughput demo: a two-task firmware image pumps a framed
UART pixel stream through a circular buffer in RAM into a memory-mapped
LED-matrix port, and the harness measures the sustained frame rate in
simulated time.

Producer task: the UART rx interrupt service routine, one byte per entry,
appended at the buffer head.  Consumer task: a polling loop that drains the
buffer tail, resynchronizes on the 2-byte frame magic, copies one frame of
payload to the LED data port, and commits.  The firmware is assembled by
this package's own toolchain under the reduced ISA computed from its own
source, so a demo run exercises the whole generation pipeline.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .assembler import build_assembler, link, MachineImage
from .isa_core import IsaConfig
from .risa_reducer import reduce, scan_program
from .soc_simulator import Soc, SocMap, build_soc, inject_uart_rx

FRAME_WIDTH = 32
FRAME_HEIGHT = 24
FRAME_BYTES = FRAME_WIDTH * FRAME_HEIGHT * 3  # 2304 RGB bytes
FRAME_MAGIC = b"\xa5\x5a"

LED_BASE = 0x4300

# circular buffer convention shared with the firmware below
BUF_BASE = 0x2000
BUF_WORDS = 256
BUF_MASK = BUF_WORDS * 4 - 1


class DemoError(Exception):
    pass


class LedMatrixModel:
    """Memory-mapped frame port: pixel bytes are written sequentially to the
    data register and a commit write latches the completed frame."""

    REG_DATA = 0x0
    REG_COMMIT = 0x4

    def __init__(self, width: int = FRAME_WIDTH, height: int = FRAME_HEIGHT):
        self.width = width
        self.height = height
        self.frame_bytes = width * height * 3
        self.frame = bytearray(self.frame_bytes)
        self.wr_idx = 0
        self.frames_committed = 0
        self.commit_cycles: list[int] = []
        self.committed: list[bytes] = []
        self.short_commits = 0
        self._cycle = 0
        self.int_pending = False

    def tick(self, cycle: int) -> None:
        self._cycle = cycle

    def read(self, off: int) -> int:
        if off == self.REG_DATA:
            return self.wr_idx
        if off == self.REG_COMMIT:
            return self.frames_committed
        return 0

    def write(self, off: int, value: int) -> None:
        if off == self.REG_DATA:
            if self.wr_idx < self.frame_bytes:
                self.frame[self.wr_idx] = value & 0xFF
            self.wr_idx += 1
        elif off == self.REG_COMMIT:
            if self.wr_idx != self.frame_bytes:
                self.short_commits += 1
            self.frames_committed += 1
            self.commit_cycles.append(self._cycle)
            self.committed.append(bytes(self.frame[:self.frame_bytes]))
            self.frame = bytearray(self.frame_bytes)
            self.wr_idx = 0


@dataclass(frozen=True)
class DemoReport:
    frames: int
    simulated_seconds: float
    fps: float
    uart_bytes: int
    overflows: int
    wire_ceiling_fps: float
    commit_cycles: tuple[int, ...] = ()
    payload_intact: bool = True
    peak_buffer_words: int = 0

    def to_json(self) -> dict:
        return {
            "frames": self.frames,
            "simulated_seconds": self.simulated_seconds,
            "fps": self.fps,
            "uart_bytes": self.uart_bytes,
            "overflows": self.overflows,
            "wire_ceiling_fps": self.wire_ceiling_fps,
            "commit_cycles": list(self.commit_cycles),
            "payload_intact": self.payload_intact,
            "peak_buffer_words": self.peak_buffer_words,
        }


def wire_ceiling_fps(baud: int, frame_bytes: int = FRAME_BYTES) -> float:
    """Frame rate implied by the UART wire alone (8N1: 10 bits per byte)."""
    return baud / (10.0 * frame_bytes)


def generate_pixel_stream(frames: int, seed: int = 0) -> bytes:
    """Deterministic framed pixel stream: 2-byte magic + one frame of RGB
    payload per frame."""
    if frames < 1:
        raise DemoError("frames must be >= 1")
    rng = random.Random(seed)
    chunks = []
    for _ in range(frames):
        chunks.append(FRAME_MAGIC)
        chunks.append(rng.randbytes(FRAME_BYTES))
    return b"".join(chunks)


def demo_program(soc_map: SocMap, led_base: int = LED_BASE) -> str:
    """The two-task firmware, generated against a concrete memory map.

    Register conventions: R1 is reserved for the rx interrupt service
    routine, R9/R10 are the circular-buffer head and tail byte offsets,
    R2..R5 belong to the consumer task.
    """
    uart_data = soc_map.uart_base + 0x0
    uart_inten = soc_map.uart_base + 0xC
    return f"""\
; two-task pixel pump: rx-interrupt producer + polling LED consumer
        .equ UART_DATA,  0x{uart_data:04X}
        .equ UART_INTEN, 0x{uart_inten:04X}
        .equ LED_DATA,   0x{led_base:04X}
        .equ LED_COMMIT, 0x{led_base + 4:04X}
        .equ BUF,        0x{BUF_BASE:04X}
        .equ BUFMASK,    0x{BUF_MASK:04X}
        .equ PAYLOAD,    {FRAME_BYTES}

        JMP start            ; reset entry
        JMP isr              ; interrupt vector slot

start:  LDI R9, 0            ; producer head (byte offset into BUF)
        LDI R10, 0           ; consumer tail
        LDI R3, 0xA5         ; frame magic, first byte
        LDI R4, 0x5A         ; frame magic, second byte
        LDI R1, 1
        ST  R1, UART_INTEN   ; enable the rx interrupt (producer task)
        LDI R12, 0x100       ; SW: set the global interrupt enable bit

; consumer task: resynchronize on the frame magic, then copy one frame
sync0:  CMP R9, R10
        BEQ sync0            ; wait for the producer
        LD  R2, BUF(R10)
        ADDI R10, R10, 4
        ANDI R10, R10, BUFMASK
        CMP R2, R3
        BNE sync0            ; not the first magic byte: stay in sync state
sync1:  CMP R9, R10
        BEQ sync1
        LD  R2, BUF(R10)
        ADDI R10, R10, 4
        ANDI R10, R10, BUFMASK
        CMP R2, R4
        BNE sync0            ; broken framing: resynchronize
        LDI R5, PAYLOAD
copy:   CMP R9, R10
        BEQ copy             ; wait for the next payload byte
        LD  R2, BUF(R10)
        ADDI R10, R10, 4
        ANDI R10, R10, BUFMASK
        ST  R2, LED_DATA
        SUBI R5, R5, 1
        CMP R5, R0
        BNE copy
        ST  R5, LED_COMMIT   ; frame complete
        BRA sync0

; producer task body: one rx byte per interrupt, appended at the head
isr:    LD  R1, UART_DATA
        ST  R1, BUF(R9)
        ADDI R9, R9, 4
        ANDI R9, R9, BUFMASK
        IRET
"""


@dataclass
class DemoRun:
    report: DemoReport
    soc: Soc
    led: LedMatrixModel
    stream: bytes
    reduced_cfg: IsaConfig
    image: MachineImage
    source: str
    final_frame: bytes = b""


def execute_demo(cfg: IsaConfig, baud: int = 5_000_000, frames: int = 3,
                 clock_hz: int = 50_000_000, seed: int = 0,
                 reduce_isa: bool = True) -> DemoRun:
    """Run the full pipeline: scan + reduce the firmware, assemble it under
    the reduced config, simulate until the requested frames commit."""
    soc_map = SocMap()
    source = demo_program(soc_map)
    usage = scan_program(source, cfg)
    risa = reduce(cfg, [usage]) if reduce_isa else cfg
    module = build_assembler(risa).assemble(source, origin=0)
    image = link([module], base=0)

    soc = build_soc(risa, image, soc_map, clock_hz=clock_hz, baud=baud)
    led = LedMatrixModel()
    soc.attach_device(LED_BASE, 0x100, led)
    soc.tracing = False

    stream = generate_pixel_stream(frames, seed)
    inject_uart_rx(soc, stream, start_cycle=0)

    # cap at twice the wire time so a livelocked consumer still terminates
    byte_clocks = soc.uart.byte_clocks
    cap = 2 * (len(stream) + 8) * byte_clocks + 200_000
    chunk = 4096
    peak_words = 0
    while soc.state == "running" and led.frames_committed < frames and soc.cycle < cap:
        for _ in range(chunk):
            soc.step_clock()
            if soc.state != "running":
                break
        head = soc.cpu.regs[9]
        tail = soc.cpu.regs[10]
        peak_words = max(peak_words, ((head - tail) & BUF_MASK) // 4)

    if soc.state == "faulted":
        raise DemoError(f"demo faulted: {soc.fault}")
    if led.frames_committed < frames:
        raise DemoError(
            f"demo livelocked: {led.frames_committed}/{frames} frames after {soc.cycle} cycles")

    payload_ok = len(led.committed) >= frames and all(
        led.committed[i] == stream[i * (FRAME_BYTES + 2) + 2:(i + 1) * (FRAME_BYTES + 2)]
        for i in range(frames))

    commits = led.commit_cycles[:frames]
    if frames >= 2:
        fps = (frames - 1) * clock_hz / (commits[-1] - commits[0])
    else:
        fps = clock_hz / commits[0]
    report = DemoReport(
        frames=led.frames_committed,
        simulated_seconds=soc.cycle / clock_hz,
        fps=fps,
        uart_bytes=len(stream),
        overflows=soc.uart.rx_dropped,
        wire_ceiling_fps=wire_ceiling_fps(baud),
        commit_cycles=tuple(commits),
        payload_intact=payload_ok,
        peak_buffer_words=peak_words,
    )
    return DemoRun(report=report, soc=soc, led=led, stream=stream,
                   reduced_cfg=risa, image=image, source=source,
                   final_frame=led.committed[frames - 1] if led.committed else b"")


def run_demo(cfg: IsaConfig, baud: int = 5_000_000, frames: int = 3,
             clock_hz: int = 50_000_000, seed: int = 0) -> DemoReport:
    """Pipeline + measurement; see :func:`execute_demo` for the pieces."""
    return execute_demo(cfg, baud=baud, frames=frames,
                        clock_hz=clock_hz, seed=seed).report


def write_frame_ppm(frame: bytes, out, width: int = FRAME_WIDTH,
                    height: int = FRAME_HEIGHT) -> None:
    """Dump one committed frame as a binary portable pixmap (P6)."""
    if len(frame) != width * height * 3:
        raise DemoError(f"frame must be {width * height * 3} bytes, got {len(frame)}")
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "wb") as fh:
            write_frame_ppm(frame, fh, width, height)
        return
    out.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
    out.write(frame)
