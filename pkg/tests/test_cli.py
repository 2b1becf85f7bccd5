import json

from hhvems.cli import main


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", "--cycle", "udds", "--algo", "instopt", "--max-time", "20",
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["algo"] == "instopt" and summary["fault"] is None
    assert (out / "log.csv").exists() and (out / "stats.json").exists()
    assert "fuel_g" in capsys.readouterr().out


def test_stats_learn_and_show(tmp_path, capsys):
    path = tmp_path / "s.json"
    assert main(["stats", "learn", "--cycle", "us06", "--out", str(path), "--passes", "1"]) == 0
    assert main(["stats", "show", str(path)]) == 0
    text = capsys.readouterr().out
    assert "[low]" in text and "[high]" in text and "w_set=" in text


def test_run_with_stats_file(tmp_path):
    path = tmp_path / "s.json"
    main(["stats", "learn", "--cycle", "udds", "--out", str(path), "--passes", "1"])
    assert main(["run", "--cycle", "udds", "--algo", "asddp", "--max-time", "5",
                 "--stats", str(path), "--out", str(tmp_path / "o")]) == 0


def test_grade_fit(tmp_path, capsys):
    assert main(["grade-fit", "--cycle", "synth:1", "--step", "200",
                 "--out", str(tmp_path / "g.csv")]) == 0
    assert "grade error" in capsys.readouterr().out
    assert main(["grade-fit", "--cycle", "udds"]) == 1


def test_experiment_progression(tmp_path, capsys):
    assert main(["experiment", "progression", "--cycle", "udds", "--algo", "apddp",
                 "--max-time", "5", "--runs", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "run1.json").exists()
    assert capsys.readouterr().out.count("run ") == 2
