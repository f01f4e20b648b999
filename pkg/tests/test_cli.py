import csv
import json

from rescurrents.cli import main

KEYS = {"scenario", "target", "epsilons", "pairings", "limit", "error", "alpha", "reference", "provenance", "pass",
        "tolerance", "runtime_ms"}


def test_tables(capsys):
    assert main(["tables", "--newton", "3"]) == 0
    out = capsys.readouterr().out
    assert "t1^2 - 2*t2" in out and "t1^3 - 3*t1*t2 + 3*t3" in out
    assert main(["tables", "--newton", "13"]) == 2


def test_run_writes_results_and_tables(tmp_path, capsys):
    out = tmp_path / "res"
    code = main(["run", "--scenario", "divisor-pl", "--target", "poincare-lelong", "--eps-count", "5",
                 "--out", str(out), "--timings"])
    recs = json.loads((out / "results.json").read_text())
    assert len(recs) == 1 and KEYS <= set(recs[0])
    rec = recs[0]
    assert rec["target"] == "poincare-lelong" and rec["provenance"] == "published"
    assert len(rec["epsilons"]) == 5 and rec["runtime_ms"] is not None
    assert code == (0 if rec["pass"] is not False else 1)
    # decimal strings with 15 significant digits
    assert len(rec["limit"]["re"].split("e")[0].replace("-", "").replace(".", "")) == 15
    with open(out / "poincare-lelong.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epsilon", "re", "im", "cells", "depth"] and len(rows) == 6
    assert "poincare-lelong" in capsys.readouterr().out


def test_runtime_is_null_without_timings(tmp_path):
    out = tmp_path / "res"
    main(["run", "--scenario", "exactness-whitney", "--out", str(out)])
    recs = json.loads((out / "results.json").read_text())
    assert recs and all(r["runtime_ms"] is None for r in recs)


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nname = bad\n[complex]\nranks = 1, 1\nphi1 = x + * y\n[cutoff]\nF = x\n")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "column" in capsys.readouterr().err
    assert main(["run", "--scenario", "divisor-pl", "--target", "nope", "--out", str(tmp_path)]) == 2


def test_verify_subset(tmp_path, capsys):
    assert main(["verify", "--suite", "paper", "--criteria", "1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] 1." in out and "1/1 criteria passed" in out
