import json
import subprocess
import sys

import pytest

from adhoc_ckpt.cli import main
from adhoc_ckpt.fig4 import FIG4_ITERATION, fig4_text
from adhoc_ckpt.netsim import parse_trace
from mutations import commit_before_acks


@pytest.fixture
def fig4_trace(tmp_path):
    path = tmp_path / "fig4.jsonl"
    assert main(["run", "fig4", "--trace-out", str(path), "--quiet"]) == 0
    return path


def test_run_fig4_verify(capsys):
    assert main(["run", "fig4", "--verify"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "commit 2.2 time 21 minimum_set 1,2,4,5" in out
    assert out[-1] == "verified ok"


def test_run_scenario_file(tmp_path, capsys):
    path = tmp_path / "s.json"
    path.write_text(fig4_text())
    assert main(["run", str(path), "--seed", "7", "--quiet"]) == 0
    assert any(line.startswith("commit 2.2") for line in capsys.readouterr().out.splitlines())


def test_quiet_suppresses_chatter(tmp_path, capsys):
    main(["run", "fig4", "--trace-out", str(tmp_path / "a.jsonl")])
    assert "trace written" in capsys.readouterr().err
    main(["run", "fig4", "--trace-out", str(tmp_path / "b.jsonl"), "--quiet"])
    assert capsys.readouterr().err == ""


def test_malformed_scenario_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"n": 3,\n "edges": [[1, 2]')
    assert main(["run", str(path)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_missing_file_and_bad_args_exit_1(capsys):
    assert main(["run", "/nonexistent/scenario.json"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["run", "fig4", "--seed", "x"]) == 1


def test_verify_clean_trace(fig4_trace, capsys):
    assert main(["verify", str(fig4_trace)]) == 0
    assert capsys.readouterr().out.strip() == "verified ok"


def test_verify_doctored_trace_exits_2(fig4_trace, tmp_path, capsys):
    doctored = commit_before_acks(parse_trace(fig4_trace.read_text()), FIG4_ITERATION)
    path = tmp_path / "doctored.jsonl"
    path.write_text(doctored.dumps())
    assert main(["verify", str(path)]) == 2
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("violation ") for line in lines)
    assert json.loads(lines[0].split(" ", 1)[1])["check"] == "commit_before_ack"


def test_verify_unparseable_trace_exits_1(tmp_path):
    path = tmp_path / "junk.jsonl"
    path.write_text("{not json\n")
    assert main(["verify", str(path)]) == 1


def test_metrics_and_compare(fig4_trace, tmp_path, capsys):
    assert main(["metrics", str(fig4_trace)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "metric permanents 6" in out
    assert "metric minimum_set_size 4" in out
    assert "metric control.Commit 8" in out
    assert main(["metrics", str(fig4_trace), "--compare", str(fig4_trace)]) == 0
    assert "compare permanents 6 6" in capsys.readouterr().out.splitlines()


def test_metrics_truncated_trace_exits_1(fig4_trace, tmp_path):
    lines = [ln for ln in fig4_trace.read_text().splitlines() if '"Final"' not in ln]
    path = tmp_path / "cut.jsonl"
    path.write_text("\n".join(lines))
    assert main(["metrics", str(path)]) == 1


def test_baseline(capsys):
    assert main(["baseline", "fig4"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "protocol 2.2 initiator 2 committed permanents 4 minimum_set_size 4 cluster_size 5" in out
    assert "baseline 2.2 initiator 2 committed permanents 5 minimum_set_size 5 cluster_size 5" in out


def graph(tmp_path, n, edges):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"n": n, "edges": edges}))
    return str(path)


def test_cluster_path_graph(tmp_path, capsys):
    assert main(["cluster", graph(tmp_path, 3, [[1, 2], [2, 3]])]) == 0
    assert capsys.readouterr().out.splitlines() == [
        "1 ClusterHead 1 9/4",
        "2 Gateway 3 5/2",
        "3 ClusterHead 3 11/4",
    ]


def test_cluster_single_node(tmp_path, capsys):
    assert main(["cluster", graph(tmp_path, 1, [])]) == 0
    assert capsys.readouterr().out.splitlines() == ["1 ClusterHead 1 1/2"]


def test_cluster_require_connected(tmp_path):
    path = graph(tmp_path, 3, [[1, 2]])
    assert main(["cluster", path]) == 0
    assert main(["cluster", path, "--require-connected"]) == 1
    assert main(["cluster", graph(tmp_path, 2, [[1, 3]])]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "adhoc_ckpt", "run", "fig4", "--verify", "--quiet"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[-1] == "verified ok"
