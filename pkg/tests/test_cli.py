import numpy as np
import pytest

from ccostream.cli import EXIT_INPUT, EXIT_OK, EXIT_TOLERANCE, main, parse_grid
from ccostream.errors import ConfigError


def _csv_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config:")
    return lines[1].split(","), [l.split(",") for l in lines[2:]]


def test_mask_dump_marks_carried_context(tmp_path, capsys):
    assert main(["mask-dump", "--frames", "16", "--chunk-size", "4", "--lc", "1",
                 "--n-ctx", "1", "--out", str(tmp_path / "m")]) == EXIT_OK
    grid = (tmp_path / "m.txt").read_text().splitlines()
    assert len(grid) == 20
    chunk4_row = grid[15]
    # columns: ctx2 sits at extended index 9, ctx1 at 4
    assert chunk4_row[9] == "C" and chunk4_row[4] == "."
    assert chunk4_row[10:14] == "####" and chunk4_row[19] == "C"
    header, rows = _csv_rows(tmp_path / "m.csv")
    assert len(header) == 20 and sum(int(v) for v in rows[15]) == 10
    assert "C" in capsys.readouterr().out


def test_mask_dump_two_contexts(capsys):
    main(["mask-dump", "--n-ctx", "2"])
    row = capsys.readouterr().out.splitlines()[15]
    assert row[4] == "C" and row[9] == "C"


def test_compare_defaults_pass(tmp_path, capsys):
    assert main(["compare", "--out", str(tmp_path / "c.csv")]) == EXIT_OK
    out = capsys.readouterr().out
    diff = float(out.split("max_abs_diff=")[1].split()[0])
    assert diff <= 1e-10
    header, rows = _csv_rows(tmp_path / "c.csv")
    assert header == ["chunk", "max_abs_diff"] and len(rows) == 8


def test_compare_single_precision_env(monkeypatch, capsys):
    monkeypatch.setenv("CCO_PRECISION", "single")
    assert main(["compare", "--chunk-size", "320ms"]) == EXIT_OK
    assert "tol=1e-05" in capsys.readouterr().out


def test_gen_then_run_offline_and_stream(tmp_path):
    w, x = tmp_path / "w.bin", tmp_path / "x.npy"
    assert main(["gen", "--frames", "30", "--weights-out", str(w), "--input-out", str(x)]) == EXIT_OK
    assert main(["run-offline", "--weights", str(w), "--input", str(x), "--chunk-size", "4",
                 "--out", str(tmp_path / "off.csv")]) == EXIT_OK
    assert main(["run-stream", "--weights", str(w), "--input", str(x), "--chunk-size", "4",
                 "--push-size", "7", "--out", str(tmp_path / "st.csv")]) == EXIT_OK
    _, off = _csv_rows(tmp_path / "off.csv")
    header, st = _csv_rows(tmp_path / "st.csv")
    assert header[:3] == ["chunk", "frame", "chunk_ms"] and len(st) == 30
    a = np.array([[float(v) for v in r[1:]] for r in off])
    b = np.array([[float(v) for v in r[3:]] for r in st])
    assert np.max(np.abs(a - b)) <= 1e-10


def test_truncated_weights_is_input_error(tmp_path, capsys):
    w, x = tmp_path / "w.bin", tmp_path / "x.npy"
    main(["gen", "--weights-out", str(w), "--input-out", str(x)])
    w.write_bytes(w.read_bytes()[:-10])
    assert main(["compare", "--weights", str(w)]) == EXIT_INPUT
    assert "layers.1.ln2_bias" in capsys.readouterr().err


def test_grad_check(tmp_path):
    assert main(["grad-check", "--out", str(tmp_path / "g.csv")]) == EXIT_OK
    header, rows = _csv_rows(tmp_path / "g.csv")
    assert [r[0] for r in rows][:2] == ["input", "w_q"]
    assert main(["grad-check", "--tol", "1e-14"]) == EXIT_TOLERANCE


def test_sample_dct(tmp_path, capsys):
    assert main(["sample-dct", "--seed", "1", "--draws", "500", "--out", str(tmp_path / "d.csv")]) == EXIT_OK
    header, rows = _csv_rows(tmp_path / "d.csv")
    assert header == ["draw", "mode", "chunk_frames", "chunk_ms", "left_context"] and len(rows) == 500
    assert "full_contextual_fraction=" in capsys.readouterr().out


def test_bench_grid(tmp_path):
    grid = tmp_path / "grid.txt"
    grid.write_text("chunk_size=4\nlc=1\nn_ctx=0,2\nd_model=8\nheads=2\nlayers=1\nchunks=20\nrepetitions=1\n")
    assert main(["bench", "--grid", str(grid), "--out", str(tmp_path / "b.csv")]) == EXIT_OK
    header, rows = _csv_rows(tmp_path / "b.csv")
    assert len(rows) == 2
    kv = dict(zip(header, rows[1]))
    assert kv["n_ctx"] == "2" and kv["kv_later"] == "11" and kv["kv_baseline"] == "80"


def test_parse_grid():
    points = parse_grid("n_ctx=1,8,16\nlc=all\n# comment\n")
    assert [p["n_ctx"] for p in points] == [1, 8, 16]
    assert all(p["lc"] is None for p in points)
    with pytest.raises(ConfigError):
        parse_grid("bogus=1")


@pytest.mark.parametrize("argv", [
    ["compare", "--chunk-size", "100ms"],
    ["compare", "--lc", "-1"],
    ["compare", "--input", "/nonexistent.npy"],
    ["nope"],
])
def test_input_errors_exit_3(argv):
    with pytest.raises(SystemExit) as exc:
        code = main(argv)
        raise SystemExit(code)
    assert exc.value.code == EXIT_INPUT
