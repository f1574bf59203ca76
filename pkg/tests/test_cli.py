"""Command-line interface tests: schemas, determinism, and exit codes."""

import pytest

from attncost.cli import main, parse_grid, parse_int_list
from attncost.config import builtin_config, config_to_text


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def body_lines(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


def manifest_lines(text):
    return [line for line in text.splitlines() if line.startswith("#")]


def test_parse_grid_forms():
    assert parse_grid("1,2,4") == [1.0, 2.0, 4.0]
    lin = parse_grid("lin:0:10:5")
    assert lin == [0.0, 2.5, 5.0, 7.5, 10.0]
    log = parse_grid("log:1:16:5")
    assert log[0] == pytest.approx(1.0) and log[-1] == pytest.approx(16.0)
    assert parse_grid("log:2:2:1") == [2.0]
    for bad in ("", " ", "log:1:16", "log:0:16:5", "lin:1:2:0"):
        with pytest.raises(ValueError):
            parse_grid(bad)
    with pytest.raises(ValueError):
        parse_int_list("")


def test_params_reproduces_builtin_table(capsys):
    expected = {
        "mla_v3": ("174063616", "512"),
        "mha_derived": ("469762048", "32768"),
        "mha_scaled": ("172006912", "19712"),
    }
    for name, (params, cache) in expected.items():
        code, out, _ = run_cli(["params", "--config", name], capsys)
        assert code == 0
        rows = body_lines(out)
        assert rows[0].startswith("config,")
        fields = rows[1].split(",")
        assert fields[0] == name
        assert fields[-2] == params
        assert fields[-1] == cache


def test_params_unknown_config_errors(capsys):
    code, out, err = run_cli(["params", "--config", "mha_tiny"], capsys)
    assert code == 2
    assert "unknown builtin" in err or "neither a builtin" in err


def test_params_custom_config_round_trip(tmp_path, capsys):
    cfg = builtin_config("mla_v3")
    path = tmp_path / "layer.cfg"
    path.write_text(config_to_text(cfg))
    code, out, _ = run_cli(["params", "--config", str(path)], capsys)
    assert code == 0
    fields = body_lines(out)[1].split(",")
    assert fields[-2] == "174063616"


def test_count_row_schema_and_breakdown_sum(capsys):
    code, out, _ = run_cli(
        ["count", "--config", "mla_v3", "--scheme", "mla_rc",
         "--phase", "decode", "--t", "8192"],
        capsys,
    )
    assert code == 0
    header, row = body_lines(out)
    columns = header.split(",")
    values = dict(zip(columns, row.split(",")))
    assert values["scheme"] == "mla_rc"
    assert values["t_or_l"] == "8192"
    stage_sum = sum(int(v) for k, v in values.items() if k.startswith("macs_"))
    assert stage_sum == int(values["macs"])
    assert int(values["macs_absorb_recompute"]) == 12_884_901_888


def test_count_requires_length_flag(capsys):
    code, _, err = run_cli(
        ["count", "--config", "mla_v3", "--scheme", "mla_rc", "--phase", "decode"],
        capsys,
    )
    assert code == 2
    assert "needs --t" in err


def test_count_manifest_echoes_defaults(capsys):
    _, out, _ = run_cli(
        ["count", "--config", "mla_v3", "--scheme", "mla_ru", "--t", "0"], capsys
    )
    manifest = "\n".join(manifest_lines(out))
    for expected in (
        "# softmax_ops_per_element = 5",
        "# include_softmax_in_ops = false",
        "# include_prefill_cache_writes = true",
        "# bytes_per_element = 2",
        "# out_order =",
        "# generated_at =",
    ):
        assert expected.split(" =")[0] in manifest and expected.rstrip(" =") in manifest


def test_outputs_are_deterministic(capsys, tmp_path):
    commands = [
        ["params", "--config", "mha_scaled"],
        ["count", "--config", "mla_v3", "--scheme", "mla_rc", "--t", "1024"],
        ["orders", "--config", "mla_v3", "--t-grid", "64,256", "--batch-grid", "1,2"],
        ["sweep", "oi", "--grid", "1024,8192"],
        ["sweep", "ratio", "--grid", "1,4,16", "--t-grid", "1024"],
        ["sweep", "energy", "--grid", "1,4", "--t-grid", "1024"],
    ]
    for argv in commands:
        _, first, _ = run_cli(argv, capsys)
        _, second, _ = run_cli(argv, capsys)
        assert body_lines(first) == body_lines(second), argv
        # Everything except the timestamp also matches.
        strip = lambda text: [l for l in text.splitlines() if "generated_at" not in l]
        assert strip(first) == strip(second)


def test_out_flag_writes_file(tmp_path, capsys):
    path = tmp_path / "out.csv"
    code, out, _ = run_cli(["params", "--config", "mla_v3", "--out", str(path)], capsys)
    assert code == 0
    assert out == ""
    assert "174063616" in path.read_text()


def test_orders_exhaustive_emits_all_five_groupings(capsys):
    code, out, _ = run_cli(
        ["orders", "--config", "mla_v3", "--t-grid", "128", "--batch-grid", "1",
         "--exhaustive"],
        capsys,
    )
    assert code == 0
    rows = body_lines(out)[1:]
    assert len(rows) == 3 + 1 + 5
    trees = {row.split(",")[-1] for row in rows}
    assert len(trees) == 5


def test_orders_rejects_mha_config(capsys):
    code, _, err = run_cli(["orders", "--config", "mha_derived"], capsys)
    assert code == 2
    assert "MLA" in err


def test_sweep_oi_covers_all_schemes(capsys):
    code, out, _ = run_cli(["sweep", "oi", "--grid", "1024,65536"], capsys)
    assert code == 0
    rows = body_lines(out)[1:]
    assert len(rows) == 2 * 4
    schemes = {row.split(",")[0] for row in rows}
    assert schemes == {"mla_rc", "mla_ru", "mha_l", "mha_s"}


def test_sweep_ratio_emits_matching_crossover_notes(capsys):
    code, out, _ = run_cli(
        ["sweep", "ratio", "--grid", "log:0.25:4096:9", "--t-grid", "8192"], capsys
    )
    assert code == 0
    notes = {
        line.split(" = ")[0][2:]: line.split(" = ")[1]
        for line in manifest_lines(out)
        if "crossover" in line
    }
    closed = float(notes["crossover_ratio_t8192_closed_form"])
    bisect = float(notes["crossover_ratio_t8192_bisection"])
    assert abs(closed - bisect) / closed < 1e-6


def test_sweep_energy_emits_matching_threshold_notes(capsys):
    code, out, _ = run_cli(
        ["sweep", "energy", "--grid", "1,2,4,8", "--t-grid", "1024"], capsys
    )
    assert code == 0
    notes = {
        line.split(" = ")[0][2:]: line.split(" = ")[1]
        for line in manifest_lines(out)
        if "energy_threshold" in line
    }
    closed = float(notes["energy_threshold_tops_t1024_closed_form"])
    bisect = float(notes["energy_threshold_tops_t1024_bisection"])
    assert closed == pytest.approx(3.0, rel=1e-9)
    assert abs(closed - bisect) / closed < 1e-6


def test_sweep_empty_grid_errors(capsys):
    code, _, err = run_cli(["sweep", "oi", "--grid", " "], capsys)
    assert code == 2
    assert "grid" in err


def test_sweep_custom_pairs(capsys):
    code, out, _ = run_cli(
        ["sweep", "ratio", "--pair", "mla_v3:mla_rc", "--pair", "mla_v3:mla_ru",
         "--grid", "1,100", "--t-grid", "1024"],
        capsys,
    )
    assert code == 0
    rows = body_lines(out)[1:]
    assert {row.split(",")[1] for row in rows} == {"mla_rc", "mla_ru"}


def test_sweep_pair_syntax_errors(capsys):
    code, _, err = run_cli(
        ["sweep", "oi", "--pair", "mla_v3+mla_rc", "--grid", "16"], capsys
    )
    assert code == 2
    assert "CONFIG:SCHEME" in err


def test_sweep_oi_platform_corner_metadata(tmp_path, capsys):
    platform = tmp_path / "p.platform"
    platform.write_text(
        "name = unit\npeak_ops_per_s = 1e12\ndram_bw_bytes_per_s = 1e9\n"
        "e_op_pj = 1\ne_dram_bit_pj = 8\nonchip_bytes = 1048576\n"
    )
    code, out, _ = run_cli(
        ["sweep", "oi", "--grid", "1024", "--platform", str(platform)], capsys
    )
    assert code == 0
    assert "# platform_corner_ops_per_byte = 1000" in out


def test_verify_passes_and_fails_by_tolerance(capsys):
    code, out, _ = run_cli(["verify", "--seed", "1"], capsys)
    assert code == 0
    assert "checks passed" in out
    assert "FAIL" not in out
    code, out, _ = run_cli(["verify", "--seed", "1", "--tolerance", "0"], capsys)
    assert code == 1
    assert "FAIL" in out
