import numpy as np
import pytest
import yaml

from cascade_qoe.cli import convert_csv, convert_mahimahi, main
from cascade_qoe.errors import ConfigError
from cascade_qoe.traces import load_trace


def test_mahimahi_bins():
    # 3 packets in the first second, 1 in the second
    tr = convert_mahimahi(["10", "200", "999", "", "1500"])
    np.testing.assert_allclose(tr.capacities, [3 * 12.0, 12.0])
    np.testing.assert_allclose(tr.times, [0, 1])


def test_mahimahi_bad_line():
    with pytest.raises(ConfigError, match="line 2"):
        convert_mahimahi(["1", "x"])
    with pytest.raises(ConfigError):
        convert_mahimahi([])


def test_csv_header_units_and_offset():
    tr = convert_csv(["time,mbps", "5,1.5", "6,2"], rate_unit="mbps")
    np.testing.assert_allclose(tr.times, [0, 1])
    np.testing.assert_allclose(tr.capacities, [1500, 2000])
    with pytest.raises(ConfigError):
        convert_csv(["0,1", "1,oops"])


def test_cli_trace_convert(tmp_path, capsys):
    src = tmp_path / "log.csv"
    src.write_text("0;800\n1;900\n")
    dst = tmp_path / "out.txt"
    code = main(["trace", "convert", "--format", "csv", "--delimiter", ";", "--input", str(src), "--output", str(dst)])
    assert code == 0
    np.testing.assert_allclose(load_trace(dst).capacities, [800, 900])
    assert "2 samples" in capsys.readouterr().out


def _cfg(tmp_path, **over):
    d = {
        "scenario": "cli",
        "steps": 6,
        "traces": ["pkg:traces/eval/rw_00.txt"],
        "allocators": ["uniform_shaping"],
        "players": [{"id": "a", "abr": "bba"}, {"id": "b", "abr": "bola"}],
    }
    d.update(over)
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(d))
    return p


def test_cli_run_success(tmp_path, capsys):
    code = main(["run", "--config", str(_cfg(tmp_path)), "--out", str(tmp_path / "o"), "--seed", "7"])
    assert code == 0
    assert (tmp_path / "o" / "summary.csv").is_file()
    assert capsys.readouterr().out.startswith("scenario,kind")


def test_cli_config_error_exit_2(tmp_path, capsys):
    code = main(["run", "--config", str(_cfg(tmp_path, bogus=1)), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "bogus" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_cli_io_error_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    # the output directory path runs through a regular file
    assert main(["run", "--config", str(_cfg(tmp_path)), "--out", str(blocker / "o")]) == 1


def test_cli_bad_flags(tmp_path):
    assert main(["run", "--config", str(_cfg(tmp_path)), "--workers", "0"]) == 2
    assert main(["run", "--config", str(_cfg(tmp_path)), "--seed", "-1"]) == 2
    with pytest.raises(SystemExit):
        main(["sweep", "--config", "x", "--param", "alpha", "--values", "1"])
