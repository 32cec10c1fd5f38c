"""Command-line pipeline driver.

Subcommands mirror the generation flow: ``reduce`` (ISA reduction),
``asm`` (assemble + link), ``gen-cpu`` (Verilog emission), ``estimate``
(resource model), ``sim`` (cycle-accurate run), ``demo`` (throughput
case study), ``pipeline`` (all of the above, manifest-tracked), and
``dump-tables`` (the assembler's mnemonic/encoding table as JSON).

Exit codes: 0 success, 1 I/O or usage problems, 2 toolchain rejection
(unknown mnemonic/opcode, operand overflow, invalid config), 3 simulation
fault or a demo that cannot reach its goal.  Machine-readable output goes
to stdout as JSON; diagnostics go to stderr.  The ``RISASOC_ISA``
environment variable supplies a default ISA path.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import assembler as asm_mod
from . import hdl_emitter, isa_core, risa_reducer, soc_simulator
from .assembler import AsmError, LinkError, MachineImage, build_assembler, emit_listing, link
from .demo_harness import DemoError, execute_demo, write_frame_ppm
from .hdl_emitter import CostModelError, emit_cpu_hdl, estimate_resources, hdl_manifest, load_cost_model
from .isa_core import IsaError, load_default_config, parse_isa_config, serialize_isa_config
from .risa_reducer import ReductionError, merge_reports, reduce, scan_program
from .soc_simulator import SocMap, apply_stimulus, build_soc, write_trace_json, write_vcd

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TOOLCHAIN = 2
EXIT_SIM_FAULT = 3

_TOOLCHAIN_ERRORS = (IsaError, AsmError, LinkError, ReductionError,
                     CostModelError, soc_simulator.SocBuildError)

ISA_ENV_VAR = "RISASOC_ISA"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _emit_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _load_isa(path: str | None) -> isa_core.IsaConfig:
    path = path or os.environ.get(ISA_ENV_VAR)
    if path is None:
        return load_default_config()
    return parse_isa_config(Path(path).read_text(encoding="utf-8"))


def _load_map(path: str | None) -> SocMap:
    if path is None:
        return SocMap()
    return SocMap.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# commands

def cmd_reduce(args) -> int:
    cfg = _load_isa(args.isa)
    reports = [scan_program(Path(p).read_text(encoding="utf-8"), cfg) for p in args.asm]
    risa = reduce(cfg, reports)
    out = Path(args.output)
    out.write_text(serialize_isa_config(risa), encoding="utf-8")
    usage_path = Path(args.usage) if args.usage else out.with_suffix(".usage.json")
    usage_path.write_text(
        json.dumps(merge_reports(reports).to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    _log(f"reduced {len(cfg.instructions)} -> {len(risa.instructions)} instructions")
    _emit_json({
        "isa": risa.name,
        "instructions": len(risa.instructions),
        "removed": len(cfg.instructions) - len(risa.instructions),
        "output": str(out),
        "usage_report": str(usage_path),
    })
    return EXIT_OK


def cmd_asm(args) -> int:
    cfg = _load_isa(args.isa)
    source = Path(args.source).read_text(encoding="utf-8")
    module = build_assembler(cfg).assemble(source, origin=args.origin)
    image = link([module], base=args.origin)
    Path(args.output).write_bytes(image.data)
    if args.obj:
        Path(args.obj).write_text(
            json.dumps(module.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.listing:
        Path(args.listing).write_text(emit_listing(module, source), encoding="utf-8")
    _emit_json({
        "words": len(module.words),
        "origin": module.origin,
        "entry": image.entry,
        "output": str(args.output),
    })
    return EXIT_OK


def cmd_gen_cpu(args) -> int:
    cfg = _load_isa(args.isa)
    files = emit_cpu_hdl(cfg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (outdir / name).write_text(text, encoding="utf-8")
    manifest = hdl_manifest(cfg, files)
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit_json(manifest)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_isa(args.isa)
    model = load_cost_model(args.costs)
    est = estimate_resources(cfg, model)
    if args.plot:
        from . import report
        report.render_estimate_chart([(cfg.name, est)], model, args.plot)
    _emit_json(est.to_json())
    return EXIT_OK


def cmd_dump_tables(args) -> int:
    cfg = _load_isa(args.isa)
    _emit_json(asm_mod.dump_tables(cfg))
    return EXIT_OK


def _load_image(args) -> MachineImage:
    data = Path(args.image).read_bytes()
    if len(data) % 4:
        raise AsmError(0, f"image size {len(data)} is not a multiple of 4")
    entry = args.entry if args.entry is not None else args.origin
    return MachineImage(origin=args.origin, data=data, entry=entry)


def cmd_sim(args) -> int:
    cfg = _load_isa(args.isa)
    soc_map = _load_map(args.map)
    image = _load_image(args)
    soc = build_soc(cfg, image, soc_map, clock_hz=args.clock, baud=args.baud)
    if args.stimulus:
        apply_stimulus(soc, json.loads(Path(args.stimulus).read_text(encoding="utf-8")))
    want_trace = bool(args.trace or args.trace_json or args.report)
    cycles = args.cycles
    if args.until_halt and cycles is None:
        cycles = 10_000_000  # safety cap for programs that never halt
    trace = soc.run(max_cycles=cycles, until_halt=args.until_halt,
                    tracing=want_trace)
    if args.trace:
        write_vcd(trace, args.trace, clock_hz=args.clock)
    if args.trace_json:
        write_trace_json(trace, args.trace_json)
    if args.report:
        from . import report
        outdir = Path(args.report)
        outdir.mkdir(parents=True, exist_ok=True)
        report.write_trace_csv(trace, outdir / "trace.csv")
        report.render_waveform(trace, outdir / "waveform.png")
    status = {
        "status": soc.state,
        "cycles": soc.cycle,
        "retired": soc.retired,
        "fault": None if soc.fault is None else {
            "kind": soc.fault.kind, "cycle": soc.fault.cycle,
            "pc": soc.fault.pc, "detail": soc.fault.detail,
        },
    }
    _emit_json(status)
    return EXIT_SIM_FAULT if soc.state == "faulted" else EXIT_OK


def cmd_demo(args) -> int:
    cfg = _load_isa(args.isa)
    run = execute_demo(cfg, baud=args.baud, frames=args.frames,
                       clock_hz=args.clock, seed=args.seed)
    if args.frame_ppm and run.final_frame:
        write_frame_ppm(run.final_frame, args.frame_ppm)
    if args.report:
        from . import report
        outdir = Path(args.report)
        outdir.mkdir(parents=True, exist_ok=True)
        report.write_demo_csv(run.report, outdir / "commits.csv")
        report.render_demo_timeline(run.report, args.clock, outdir / "throughput.png")
        if run.final_frame:
            report.render_frame(run.final_frame, outdir / "last_frame.png")
    _emit_json(run.report.to_json())
    return EXIT_OK


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_pipeline(args) -> int:
    cfg_path = args.isa or os.environ.get(ISA_ENV_VAR)
    cfg = _load_isa(args.isa)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    steps: list[dict] = []

    def record(name: str, inputs: list[Path], outputs: list[Path]) -> None:
        steps.append({
            "name": name,
            "inputs": {p.name: _sha256_file(p) for p in inputs if p.exists()},
            "outputs": {str(p.relative_to(outdir)): _sha256_file(p) for p in outputs},
        })

    # reduce
    sources = [Path(p) for p in args.asm]
    reports = [scan_program(p.read_text(encoding="utf-8"), cfg) for p in sources]
    risa = reduce(cfg, reports)
    risa_path = outdir / "risa.isa"
    risa_path.write_text(serialize_isa_config(risa), encoding="utf-8")
    usage_path = outdir / "usage.json"
    usage_path.write_text(
        json.dumps(merge_reports(reports).to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    record("reduce", sources + ([Path(cfg_path)] if cfg_path else []), [risa_path, usage_path])

    # assemble + link
    image = None
    if sources:
        assembler = build_assembler(risa)
        modules = []
        for i, src in enumerate(sources):
            module = assembler.assemble(src.read_text(encoding="utf-8"), origin=0)
            modules.append(module)
            obj_path = outdir / f"{src.stem}.obj"
            obj_path.write_text(json.dumps(module.to_json(), indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")
            lst_path = outdir / f"{src.stem}.lst"
            lst_path.write_text(emit_listing(module, src.read_text(encoding="utf-8")),
                                encoding="utf-8")
        image = link(modules, base=0)
        bin_path = outdir / "program.bin"
        bin_path.write_bytes(image.data)
        record("asm", sources + [risa_path],
               [bin_path] + sorted(outdir.glob("*.obj")) + sorted(outdir.glob("*.lst")))
    else:
        _log("pipeline: no programs given, skipping assembly and simulation")

    # gen-cpu
    hdl_dir = outdir / "hdl"
    hdl_dir.mkdir(exist_ok=True)
    files = emit_cpu_hdl(risa)
    for name, text in sorted(files.items()):
        (hdl_dir / name).write_text(text, encoding="utf-8")
    manifest_path = hdl_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(hdl_manifest(risa, files), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    record("gen-cpu", [risa_path], sorted(hdl_dir.iterdir()))

    # estimate
    try:
        model = load_cost_model(args.costs)
    except OSError:
        _log(f"pipeline: cost model {args.costs!r} not found, skipping estimate")
        model = None
    if model is not None:
        est = estimate_resources(risa, model)
        est_path = outdir / "estimate.json"
        est_path.write_text(json.dumps(est.to_json(), indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
        record("estimate", [risa_path], [est_path])

    # simulate
    status = None
    if image is not None:
        soc = build_soc(risa, image, _load_map(args.map), clock_hz=args.clock,
                        baud=args.baud)
        trace = soc.run(max_cycles=args.cycles, tracing=True)
        vcd_path = outdir / "trace.vcd"
        write_vcd(trace, vcd_path, clock_hz=args.clock)
        json_path = outdir / "trace.json"
        write_trace_json(trace, json_path)
        status = {"status": soc.state, "cycles": soc.cycle, "retired": soc.retired}
        status_path = outdir / "status.json"
        status_path.write_text(json.dumps(status, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
        record("sim", [risa_path, outdir / "program.bin"],
               [vcd_path, json_path, status_path])

    (outdir / "manifest.json").write_text(
        json.dumps({"isa": risa.name, "steps": steps}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    _emit_json({"output": str(outdir), "steps": [s["name"] for s in steps],
                "status": status})
    if status is not None and status["status"] == "faulted":
        return EXIT_SIM_FAULT
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring

def _add_isa_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--isa", help=f"ISA config path (default: ${ISA_ENV_VAR} or the shipped set)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="risasoc",
                     description="configurable-ISA SoC toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reduce", help="compute a reduced ISA from programs")
    _add_isa_flag(p)
    p.add_argument("--asm", action="append", default=[], help="assembly source (repeatable)")
    p.add_argument("-o", "--output", required=True, help="output .isa path")
    p.add_argument("--usage", help="usage report path (default: <output>.usage.json)")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("asm", help="assemble one source to a flat binary")
    _add_isa_flag(p)
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True, help="output .bin path")
    p.add_argument("--obj", help="also write the relocatable object JSON")
    p.add_argument("--listing", help="also write an address/word/source listing")
    p.add_argument("--origin", type=lambda s: int(s, 0), default=0)
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("gen-cpu", help="emit the Verilog CPU for a config")
    _add_isa_flag(p)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_cpu)

    p = sub.add_parser("estimate", help="estimate FPGA resources for a config")
    _add_isa_flag(p)
    p.add_argument("--costs", help="cost model JSON (default: shipped calibration)")
    p.add_argument("--plot", help="also render a LUT breakdown PNG")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sim", help="run a binary on the cycle-accurate SoC")
    _add_isa_flag(p)
    p.add_argument("--image", required=True, help="flat binary image")
    p.add_argument("--origin", type=lambda s: int(s, 0), default=0)
    p.add_argument("--entry", type=lambda s: int(s, 0))
    p.add_argument("--map", help="memory map JSON")
    p.add_argument("--cycles", type=int, help="clock budget")
    p.add_argument("--until-halt", action="store_true")
    p.add_argument("--clock", type=int, default=50_000_000)
    p.add_argument("--baud", type=int, default=115_200)
    p.add_argument("--stimulus", help="stimulus schedule JSON")
    p.add_argument("--trace", help="write a VCD waveform")
    p.add_argument("--trace-json", help="write the JSON trace")
    p.add_argument("--report", help="write trace.csv + waveform.png into this directory")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("demo", help="two-task UART-to-LED throughput demo")
    _add_isa_flag(p)
    p.add_argument("--baud", type=int, default=5_000_000)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clock", type=int, default=50_000_000)
    p.add_argument("--frame-ppm", help="dump the last committed frame as P6")
    p.add_argument("--report", help="write commits.csv + figures into this directory")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("pipeline", help="reduce, assemble, generate, estimate, simulate")
    _add_isa_flag(p)
    p.add_argument("--asm", action="append", default=[], help="assembly source (repeatable)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--costs", help="cost model JSON (default: shipped calibration)")
    p.add_argument("--map", help="memory map JSON")
    p.add_argument("--cycles", type=int, default=1024)
    p.add_argument("--clock", type=int, default=50_000_000)
    p.add_argument("--baud", type=int, default=115_200)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("dump-tables", help="export the mnemonic/encoding table as JSON")
    _add_isa_flag(p)
    p.set_defaults(func=cmd_dump_tables)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except _TOOLCHAIN_ERRORS as e:
        _log(f"risasoc: {e}")
        return EXIT_TOOLCHAIN
    except DemoError as e:
        _log(f"risasoc: {e}")
        return EXIT_SIM_FAULT
    except (OSError, json.JSONDecodeError) as e:
        _log(f"risasoc: {e}")
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
