import json

import pytest

from risasoc.cli import main
from risasoc.isa_core import load_default_config, parse_isa_config, serialize_isa_config

from conftest import REF_BYTES, REF_PROGRAM


@pytest.fixture()
def isa_file(tmp_path):
    path = tmp_path / "full.isa"
    path.write_text(serialize_isa_config(load_default_config()), encoding="utf-8")
    return path


@pytest.fixture()
def ref_source(tmp_path):
    path = tmp_path / "ref.s"
    path.write_text(REF_PROGRAM, encoding="utf-8")
    return path


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestReduce:
    def test_no_programs_is_identity(self, capsys, tmp_path, isa_file):
        out = tmp_path / "risa.isa"
        code, stdout, _ = run_cli(capsys, "reduce", "--isa", isa_file, "-o", out)
        assert code == 0
        assert parse_isa_config(out.read_text()) == load_default_config()
        assert json.loads(stdout)["removed"] == 0

    def test_reference_program(self, capsys, tmp_path, isa_file, ref_source):
        out = tmp_path / "risa.isa"
        code, stdout, _ = run_cli(capsys, "reduce", "--isa", isa_file,
                                  "--asm", ref_source, "-o", out)
        assert code == 0
        risa = parse_isa_config(out.read_text())
        assert risa.mnemonics() == {"LDI", "ADD", "ST", "NOP", "JMP", "IRET"}
        usage = json.loads((tmp_path / "risa.usage.json").read_text())
        assert usage["counts"] == {"ADD": 1, "LDI": 2, "ST": 1}

    def test_unknown_mnemonic_exits_2(self, capsys, tmp_path, isa_file):
        bad = tmp_path / "bad.s"
        bad.write_text("FROB R1, R2\n")
        code, _, err = run_cli(capsys, "reduce", "--isa", isa_file,
                               "--asm", bad, "-o", tmp_path / "x.isa")
        assert code == 2
        assert "FROB" in err

    def test_missing_isa_path_exits_1(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "reduce", "--isa", tmp_path / "nope.isa",
                             "-o", tmp_path / "x.isa")
        assert code == 1


class TestAsm:
    def test_golden_binary(self, capsys, tmp_path, isa_file, ref_source):
        out = tmp_path / "ref.bin"
        lst = tmp_path / "ref.lst"
        obj = tmp_path / "ref.obj"
        code, stdout, _ = run_cli(capsys, "asm", "--isa", isa_file, ref_source,
                                  "-o", out, "--listing", lst, "--obj", obj)
        assert code == 0
        assert out.read_bytes() == REF_BYTES
        assert json.loads(stdout)["words"] == 4
        listing = lst.read_text()
        assert "0x08400004" in listing and "0x01800080" in listing
        assert json.loads(obj.read_text())["words"][0] == 0x08400004

    def test_unknown_mnemonic_under_risa_exits_2(self, capsys, tmp_path, isa_file, ref_source):
        risa_path = tmp_path / "risa.isa"
        run_cli(capsys, "reduce", "--isa", isa_file, "--asm", ref_source, "-o", risa_path)
        bad = tmp_path / "sub.s"
        bad.write_text("SUB R1, R2, R3\n")
        code, _, err = run_cli(capsys, "asm", "--isa", risa_path, bad,
                               "-o", tmp_path / "x.bin")
        assert code == 2
        assert "SUB" in err


class TestGenCpu:
    def test_emits_files_and_reruns_identically(self, capsys, tmp_path, isa_file):
        out1, out2 = tmp_path / "hdl1", tmp_path / "hdl2"
        assert run_cli(capsys, "gen-cpu", "--isa", isa_file, "-o", out1)[0] == 0
        assert run_cli(capsys, "gen-cpu", "--isa", isa_file, "-o", out2)[0] == 0
        names = sorted(p.name for p in out1.iterdir())
        assert "cpu_decoder.v" in names and "manifest.json" in names
        for name in names:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestEstimate:
    def test_full_config(self, capsys, isa_file):
        code, stdout, _ = run_cli(capsys, "estimate", "--isa", isa_file)
        assert code == 0
        est = json.loads(stdout)
        assert est["luts"] == 4749 and est["dsps"] == 2

    def test_plot_output(self, capsys, tmp_path, isa_file):
        png = tmp_path / "est.png"
        code, _, _ = run_cli(capsys, "estimate", "--isa", isa_file, "--plot", png)
        assert code == 0
        assert png.read_bytes()[:4] == b"\x89PNG"

    def test_zero_cost_file(self, capsys, tmp_path, isa_file):
        costs = tmp_path / "zero.json"
        costs.write_text(json.dumps({
            "base_luts": 42,
            "units": {"SHIFT": {"luts": 0, "dsps": 0}, "MUL": {"luts": 0, "dsps": 0},
                      "DIV": {"luts": 0, "dsps": 0}}}))
        code, stdout, _ = run_cli(capsys, "estimate", "--isa", isa_file, "--costs", costs)
        assert code == 0
        assert json.loads(stdout)["luts"] == 42


class TestSim:
    def test_reference_image_runs_clean(self, capsys, tmp_path, isa_file, ref_source):
        bin_path = tmp_path / "ref.bin"
        run_cli(capsys, "asm", "--isa", isa_file, ref_source, "-o", bin_path)
        vcd = tmp_path / "out.vcd"
        tj = tmp_path / "out.json"
        code, stdout, _ = run_cli(capsys, "sim", "--isa", isa_file, "--image", bin_path,
                                  "--cycles", "16", "--trace", vcd, "--trace-json", tj)
        assert code == 0
        status = json.loads(stdout)
        assert status["status"] == "running"
        assert status["cycles"] == 16 and status["retired"] == 4
        assert "$enddefinitions" in vcd.read_text()
        assert len(json.loads(tj.read_text())) == 16

    def test_fault_exits_3(self, capsys, tmp_path, isa_file, ref_source):
        # assemble under full, reduce away everything but LDI, then simulate
        risa_path = tmp_path / "tiny.isa"
        tiny = tmp_path / "tiny.s"
        tiny.write_text("LDI R1, 1\n")
        run_cli(capsys, "reduce", "--isa", isa_file, "--asm", tiny, "-o", risa_path)
        bin_path = tmp_path / "ref.bin"
        run_cli(capsys, "asm", "--isa", isa_file, ref_source, "-o", bin_path)
        code, stdout, _ = run_cli(capsys, "sim", "--isa", risa_path, "--image", bin_path,
                                  "--cycles", "64")
        assert code == 3
        status = json.loads(stdout)
        assert status["status"] == "faulted"
        assert status["fault"]["kind"] == "illegal-instruction"

    def test_report_directory(self, capsys, tmp_path, isa_file, ref_source):
        bin_path = tmp_path / "ref.bin"
        run_cli(capsys, "asm", "--isa", isa_file, ref_source, "-o", bin_path)
        rep = tmp_path / "rep"
        code, _, _ = run_cli(capsys, "sim", "--isa", isa_file, "--image", bin_path,
                             "--cycles", "16", "--report", rep)
        assert code == 0
        assert (rep / "trace.csv").exists()
        assert (rep / "waveform.png").read_bytes()[:4] == b"\x89PNG"

    def test_gpio_stimulus_schedule(self, capsys, tmp_path, isa_file):
        src = tmp_path / "idle.s"
        src.write_text("idle: JMP idle\n")
        bin_path = tmp_path / "idle.bin"
        run_cli(capsys, "asm", "--isa", isa_file, src, "-o", bin_path)
        stim = tmp_path / "stim.json"
        stim.write_text(json.dumps([{"cycle": 3, "action": "gpio_in", "pin": 1, "level": 1}]))
        tj = tmp_path / "t.json"
        code, _, _ = run_cli(capsys, "sim", "--isa", isa_file, "--image", bin_path,
                             "--cycles", "8", "--stimulus", stim, "--trace-json", tj)
        assert code == 0
        samples = json.loads(tj.read_text())
        assert samples[2]["signals"]["gpio_pin"] == 0
        assert samples[3]["signals"]["gpio_pin"] == 2

    def test_halt_program_reports_halted(self, capsys, tmp_path, isa_file):
        src = tmp_path / "halt.s"
        src.write_text("LDI R1, 1\nST R1, 0x4F00\n")
        bin_path = tmp_path / "halt.bin"
        run_cli(capsys, "asm", "--isa", isa_file, src, "-o", bin_path)
        code, stdout, _ = run_cli(capsys, "sim", "--isa", isa_file, "--image", bin_path,
                                  "--cycles", "100", "--until-halt")
        assert code == 0
        assert json.loads(stdout)["status"] == "halted"


class TestDumpTables:
    def test_table_shape(self, capsys, isa_file):
        code, stdout, _ = run_cli(capsys, "dump-tables", "--isa", isa_file)
        assert code == 0
        table = json.loads(stdout)
        assert len(table["instructions"]) == 36


class TestPipeline:
    def test_end_to_end_artifacts(self, capsys, tmp_path, isa_file, ref_source):
        out = tmp_path / "flow"
        code, stdout, _ = run_cli(capsys, "pipeline", "--isa", isa_file,
                                  "--asm", ref_source, "-o", out, "--cycles", "16")
        assert code == 0
        for name in ("risa.isa", "usage.json", "program.bin", "estimate.json",
                     "trace.vcd", "trace.json", "status.json", "manifest.json"):
            assert (out / name).exists(), name
        assert (out / "hdl" / "cpu_decoder.v").exists()
        assert (out / "program.bin").read_bytes() == REF_BYTES
        manifest = json.loads((out / "manifest.json").read_text())
        assert [s["name"] for s in manifest["steps"]] == \
            ["reduce", "asm", "gen-cpu", "estimate", "sim"]
        assert json.loads(stdout)["status"]["retired"] == 4

    def test_no_programs_degenerates_to_full_isa(self, capsys, tmp_path, isa_file):
        out = tmp_path / "flow"
        code, _, err = run_cli(capsys, "pipeline", "--isa", isa_file, "-o", out)
        assert code == 0
        assert parse_isa_config((out / "risa.isa").read_text()) == load_default_config()
        assert not (out / "program.bin").exists()
        assert "skipping" in err

    def test_missing_cost_file_skips_estimate_with_warning(self, capsys, tmp_path,
                                                           isa_file, ref_source):
        out = tmp_path / "flow"
        code, _, err = run_cli(capsys, "pipeline", "--isa", isa_file,
                               "--asm", ref_source, "-o", out,
                               "--costs", str(tmp_path / "absent.json"),
                               "--cycles", "16")
        assert code == 0
        assert not (out / "estimate.json").exists()
        assert "skipping estimate" in err

    def test_matches_individual_commands(self, capsys, tmp_path, isa_file, ref_source):
        out = tmp_path / "flow"
        run_cli(capsys, "pipeline", "--isa", isa_file, "--asm", ref_source,
                "-o", out, "--cycles", "16")
        solo_bin = tmp_path / "solo.bin"
        run_cli(capsys, "asm", "--isa", str(out / "risa.isa"), ref_source, "-o", solo_bin)
        assert solo_bin.read_bytes() == (out / "program.bin").read_bytes()
        solo_hdl = tmp_path / "solo_hdl"
        run_cli(capsys, "gen-cpu", "--isa", str(out / "risa.isa"), "-o", solo_hdl)
        assert (solo_hdl / "cpu_decoder.v").read_text() == \
            (out / "hdl" / "cpu_decoder.v").read_text()


class TestUsageErrors:
    def test_unknown_command_exits_1(self, capsys):
        assert run_cli(capsys, "frobnicate")[0] == 1

    def test_missing_required_flag_exits_1(self, capsys):
        assert run_cli(capsys, "reduce")[0] == 1


class TestEnvDefault:
    def test_isa_env_var(self, capsys, tmp_path, isa_file, monkeypatch, ref_source):
        monkeypatch.setenv("RISASOC_ISA", str(isa_file))
        out = tmp_path / "env.bin"
        code, _, _ = run_cli(capsys, "asm", ref_source, "-o", out)
        assert code == 0
        assert out.read_bytes() == REF_BYTES
