"""End-to-end CLI behavior: parity with the library, exit codes, artifacts."""

import numpy as np
import pytest

from longdisp.cli import emit_plot_data, main
from longdisp.data import ColumnSchema, ModifierSpec, load_dataset
from longdisp.decomposition import Bandwidths, TimeGrid, estimate_decomposition
from longdisp.inference import SCBResult


def read_table(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def simulate(tmp_path, name="data.csv", n=(14, 12), seed=3, extra=()):
    out = tmp_path / name
    rc = main(
        [
            "simulate",
            "--scenario",
            "discrete",
            "--n-majority",
            str(n[0]),
            "--n-minority",
            str(n[1]),
            "--seed",
            str(seed),
            "--out",
            str(out),
            *extra,
        ]
    )
    assert rc == 0
    return out


DISCRETE_FLAGS = ("--modifier-kind", "discrete")


def test_simulate_writes_data_and_truth(tmp_path):
    out = simulate(tmp_path)
    truth = tmp_path / "data_truth.csv"
    header, rows = read_table(out)
    assert header == ["id", "group", "time", "outcome", "modifier", "x1"]
    assert {r[1] for r in rows} == {"majority", "minority"}
    theader, trows = read_table(truth)
    assert theader == ["t", "D", "D1", "D2", "D3"]
    assert len(trows) == 50


def test_decompose_matches_direct_library_call(tmp_path):
    data = simulate(tmp_path)
    curve_path = tmp_path / "curve.csv"
    rc = main(
        [
            "decompose",
            "--input",
            str(data),
            *DISCRETE_FLAGS,
            "--method",
            "mldd",
            "--b1",
            "0.5",
            "--grid-points",
            "9",
            "--out",
            str(curve_path),
        ]
    )
    assert rc == 0

    schema = ColumnSchema(
        id="id", group="group", time="time", outcome="outcome",
        modifier="modifier", covariates=("x1",),
    )
    spec = ModifierSpec("discrete")
    major = load_dataset(data, schema, "majority", spec)
    minor = load_dataset(data, schema, "minority", spec)
    grid = TimeGrid.default(major, minor, 9, 0.05)
    curve = estimate_decomposition(
        "mldd", major, minor, grid, Bandwidths.uniform(0.5)
    )
    header, rows = read_table(curve_path)
    assert header == ["t", "D", "D1", "D2", "D3", "missing"]
    assert len(rows) == 9
    for i, row in enumerate(rows):
        # 17-significant-digit output parses back to the exact float
        assert float(row[0]) == grid.points[i]
        assert float(row[1]) == curve.D[i]
        assert float(row[2]) == curve.D1[i]
        assert float(row[3]) == curve.D2[i]
        assert float(row[4]) == curve.D3[i]
        assert row[5] == "0"


def test_cmldd_without_conditioning_values_fails_before_loading(tmp_path, capsys):
    rc = main(
        [
            "decompose",
            "--input",
            str(tmp_path / "does-not-exist.csv"),
            "--method",
            "cmldd",
        ]
    )
    err = capsys.readouterr().err
    assert rc == 2
    assert err.startswith("error:usage:2:")
    assert "cmldd" in err


def write_config(tmp_path, data, **over):
    values = {
        "input": str(data),
        "modifier-kind": "discrete",
        "method": "mldd",
        "cv-grid": "4",
        "grid-points": "7",
        "boot-b": "50",
        "alpha": "0.1",
        "seed": "1",
        "plots": "false",
    }
    values.update(over)
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


def test_bandwidths_agree_across_subcommands(tmp_path):
    # dense enough per modifier level that no CV candidate skips terms
    data = simulate(tmp_path, n=(60, 60), seed=5, extra=("--obs-min", "6", "--obs-max", "8"))
    cfg = write_config(tmp_path, data)
    bw_a = tmp_path / "bw_a.csv"
    bw_b = tmp_path / "bw_b.csv"
    assert main(["select-bandwidths", "--config", str(cfg), "--out", str(bw_a)]) == 0
    assert main(["select-bandwidths", "--config", str(cfg), "--out", str(bw_b)]) == 0
    assert bw_a.read_bytes() == bw_b.read_bytes()

    run_dir = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out-dir", str(run_dir)]) == 0
    assert (run_dir / "bandwidths.csv").read_bytes() == bw_a.read_bytes()

    header, rows = read_table(bw_a)
    assert header == [
        "group", "target", "r", "b1", "b2", "score", "n_terms", "n_skipped", "source",
    ]
    assert {r[0] for r in rows} == {"majority", "minority"}
    assert all(r[-1] == "cv" for r in rows)
    manifest = (run_dir / "manifest.txt").read_text()
    for row in rows:
        assert f"group={row[0]} target={row[1]}" in manifest


def test_run_artifacts_and_plot_data_shape(tmp_path):
    data = simulate(tmp_path, n=(10, 8), seed=5)
    cfg = write_config(tmp_path, data, b1="0.5")
    run_dir = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out-dir", str(run_dir)]) == 0
    for name in (
        "summary.csv",
        "bandwidths.csv",
        "decomposition.csv",
        "band_D.csv",
        "band_D1.csv",
        "band_D2.csv",
        "band_D3.csv",
        "plot_data.csv",
        "manifest.txt",
    ):
        assert (run_dir / name).exists(), name
    assert not (run_dir / "decomposition.png").exists()  # plots disabled

    header, rows = read_table(run_dir / "plot_data.csv")
    assert header == ["component", "t", "estimate", "lower", "upper"]
    assert len(rows) == 4 * 7
    assert [r[0] for r in rows[::7]] == ["D", "D1", "D2", "D3"]
    for row in rows:
        if all(cell for cell in row[2:]):
            assert float(row[3]) <= float(row[2]) <= float(row[4])

    bheader, brows = read_table(run_dir / "band_D.csv")
    assert bheader == ["t", "estimate", "se", "lower", "upper"]
    assert len(brows) == 7


def test_emit_plot_data_counts_rows(tmp_path):
    grid = TimeGrid(np.linspace(0.0, 1.0, 50))
    zeros = np.zeros(50)
    curves = [
        SCBResult(
            component=name, grid=grid, point=zeros, se=zeros, Q_alpha=1.0,
            lower=zeros, upper=zeros, B=50, alpha=0.05, seed=0,
            supported=np.ones(50, dtype=bool),
        )
        for name in ("D", "D1", "D2", "D3")
    ]
    full = tmp_path / "full.csv"
    emit_plot_data(curves, full)
    assert len(full.read_text().splitlines()) == 201
    empty = tmp_path / "empty.csv"
    emit_plot_data([], empty)
    assert empty.read_text() == "component,t,estimate,lower,upper\n"


def test_config_file_flag_precedence(tmp_path):
    data = simulate(tmp_path)
    cfg = write_config(tmp_path, data, b1="0.5", **{"grid-points": "5"})
    flag = tmp_path / "flag.csv"
    plain = tmp_path / "plain.csv"
    cfg_only = tmp_path / "cfg.csv"
    assert main(["decompose", "--config", str(cfg), "--grid-points", "9",
                 "--out", str(flag)]) == 0
    assert (
        main(
            [
                "decompose", "--input", str(data), *DISCRETE_FLAGS,
                "--method", "mldd", "--b1", "0.5", "--grid-points", "9",
                "--out", str(plain),
            ]
        )
        == 0
    )
    assert main(["decompose", "--config", str(cfg), "--out", str(cfg_only)]) == 0
    # flag overrides the file; without the flag the file value applies
    assert flag.read_bytes() == plain.read_bytes()
    assert len(read_table(flag)[1]) == 9
    assert len(read_table(cfg_only)[1]) == 5


def test_summarize_stdout_matches_file(tmp_path, capsys):
    data = simulate(tmp_path)
    assert main(["summarize", "--input", str(data), *DISCRETE_FLAGS]) == 0
    stdout = capsys.readouterr().out
    assert stdout.startswith("group,n_subjects,total_obs,variable,kind,level,")
    assert "majority" in stdout and "minority" in stdout
    out = tmp_path / "summary.csv"
    assert main(["summarize", "--input", str(data), *DISCRETE_FLAGS, "--out", str(out)]) == 0
    assert out.read_text() == stdout


def test_scb_table_layout(tmp_path):
    data = simulate(tmp_path, n=(10, 8), seed=5)
    out = tmp_path / "bands.csv"
    rc = main(
        [
            "scb", "--input", str(data), *DISCRETE_FLAGS, "--method", "mldd",
            "--b1", "0.5", "--grid-points", "5", "--boot-B", "50",
            "--alpha", "0.1", "--seed", "2", "--out", str(out),
        ]
    )
    assert rc == 0
    header, rows = read_table(out)
    assert header == ["component", "t", "estimate", "se", "lower", "upper"]
    assert len(rows) == 20


def test_tab_delimiter(tmp_path):
    data = simulate(tmp_path, name="data.tsv", extra=("--delimiter", "tab"))
    assert "\t" in data.read_text().splitlines()[0]
    rc = main(
        [
            "summarize", "--input", str(data), "--delimiter", "tab",
            *DISCRETE_FLAGS, "--out", str(tmp_path / "s.csv"),
        ]
    )
    assert rc == 0


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["decompose", "--no-such-flag"]) == 2
    assert capsys.readouterr().err.startswith("error:usage:2:")

    assert main(["simulate", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["simulate", "--scenario", "discrete", "--obs-min", "0",
                 "--out", str(tmp_path / "x.csv")]) == 2
    capsys.readouterr()

    bad = tmp_path / "bad.cfg"
    bad.write_text("no-such-key = 1\n")
    assert main(["decompose", "--config", str(bad)]) == 2
    assert ":1: unknown config key" in capsys.readouterr().err

    data = simulate(tmp_path)
    assert main(["select-bandwidths", "--input", str(data), *DISCRETE_FLAGS,
                 "--b1", "0.5"]) == 2
    assert "nothing to select" in capsys.readouterr().err


def test_data_errors_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,group,time,outcome,modifier\na,majority,zero,1.0,0.0\n")
    assert main(["decompose", "--input", str(bad), *DISCRETE_FLAGS,
                 "--method", "mldd", "--b1", "0.5"]) == 3
    assert capsys.readouterr().err.startswith("error:data:3:")

    data = simulate(tmp_path)
    assert main(["decompose", "--input", str(data), *DISCRETE_FLAGS,
                 "--majority", "giants", "--b1", "0.5"]) == 3


def test_estimation_errors_exit_4(tmp_path, capsys):
    data = simulate(tmp_path)
    rc = main(
        [
            "decompose", "--input", str(data), *DISCRETE_FLAGS,
            "--method", "mldd", "--b1", "0.002", "--grid-points", "5",
        ]
    )
    err = capsys.readouterr().err
    assert rc == 4
    assert err.startswith("error:estimation:4:")
    assert "\n" not in err.rstrip("\n")


def test_io_errors_exit_5(tmp_path, capsys):
    data = simulate(tmp_path)
    rc = main(
        [
            "decompose", "--input", str(data), *DISCRETE_FLAGS, "--b1", "0.5",
            "--out", str(tmp_path / "missing-dir" / "out.csv"),
        ]
    )
    assert rc == 5
    assert capsys.readouterr().err.startswith("error:io:5:")

    blocker = tmp_path / "blocker"
    blocker.write_text("")
    cfg = write_config(tmp_path, data, b1="0.5")
    assert main(["run", "--config", str(cfg), "--out-dir", str(blocker)]) == 5
