import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from lexrl.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, main
from lexrl.envs import builtin_maze, maze_to_text


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_run_and_eval_round_trip(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[tlq]\nepisodes = 300\neval_episodes = 5\n[env]\nhorizon = 50\n")
    out = tmp_path / "out"
    assert main(["run", "--experiment", "tlq-train", "--config", str(ini), "--seeds", "0..1",
                 "--out", str(out)]) == EXIT_OK
    printed = rows(capsys.readouterr().out)
    assert printed[0] == ["seed", "success_rate", "mean_return_1", "mean_return_2"]
    assert [r[0] for r in printed[1:]] == ["0", "1"]
    assert (out / "summary.csv").is_file() and (out / "policy_seed1.json").is_file()

    maze = tmp_path / "maze.txt"
    maze.write_text(maze_to_text(builtin_maze("maze-small")))
    assert main(["eval", "--policy", str(out / "policy_seed1.json"), "--env", str(maze),
                 "--episodes", "3", "--horizon", "50"]) == EXIT_OK
    ev = rows(capsys.readouterr().out)
    assert ev[0][:2] == ["seed", "success_rate"] and len(ev) == 2


def test_config_errors_exit_2(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[tlq]\nbogus = 1\n")
    assert main(["run", "--experiment", "tlq-train", "--config", str(ini)]) == EXIT_CONFIG
    assert "unknown key 'bogus'" in capsys.readouterr().err
    assert main(["run", "--experiment", "tlq-train", "--seeds", "x"]) == EXIT_CONFIG
    assert main(["eval", "--policy", str(tmp_path / "none.json"), "--env", "maze-small"]) == EXIT_CONFIG


def test_bad_maze_file_exit_2(tmp_path, capsys):
    policy = tmp_path / "p.json"
    policy.write_text('{"schema": "lexrl-policy/1", "kind": "table", "actions": [0]}')
    maze = tmp_path / "m.txt"
    maze.write_text("|G_|\n|S_|__|\n")
    assert main(["eval", "--policy", str(policy), "--env", str(maze)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_runtime_abort_exit_3(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[lpa]\nstep_size = 1e200\nmax_iters = 50\n")
    with np.errstate(over="ignore", invalid="ignore"):
        code = main(["run", "--experiment", "lpa-benchmark", "--config", str(ini), "--out", str(tmp_path)])
    assert code == EXIT_ABORT
    assert "non-finite" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--experiment", "nope"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "lexrl.cli", "run", "--experiment", "lpa-benchmark",
                          "--out", str(tmp_path)], capture_output=True, text=True, timeout=120)
    assert out.returncode == 0
    assert rows(out.stdout)[0] == ["seed", "active_constraints", "iterations", "reason", "F1", "F2"]
