import csv

import pytest

from dlcoal_astral.cli import main

SPECIES = "((A:1,B:1):0.5,(C:1,(D:0.5,E:0.5):0.5):0.5);"


def _simulate(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["simulate", "--species", SPECIES, "--lambda", "0.3", "--mu", "0.1", "--out", str(out), *extra])
    return code, out


def test_simulate_deterministic(tmp_path):
    c1, a = _simulate(tmp_path, "a.nwk", "--count", "30", "--seed", "4")
    c2, b = _simulate(tmp_path, "b.nwk", "--count", "30", "--seed", "4")
    assert c1 == c2 == 0
    assert a.read_text() == b.read_text()
    assert len(a.read_text().splitlines()) == 30


def test_simulate_count_zero(tmp_path):
    code, out = _simulate(tmp_path, "z.nwk", "--count", "0", "--seed", "1")
    assert code == 0 and out.read_text() == ""


def test_simulate_trace(tmp_path):
    trace = tmp_path / "t.csv"
    code, out = _simulate(tmp_path, "g.nwk", "--count", "10", "--seed", "2", "--trace", str(trace))
    rows = list(csv.DictReader(trace.open()))
    assert code == 0 and len(rows) == 10
    lines = out.read_text().split("\n")[:-1]
    for row, line in zip(rows, lines):
        assert (int(row["copies"]) == 0) == (line == "")


def test_zero_rates_give_species_topology(tmp_path):
    out = tmp_path / "g.nwk"
    assert main(["simulate", "--species", SPECIES, "--lambda", "0", "--mu", "0", "--count", "5",
                 "--seed", "1", "--out", str(out)]) == 0
    text = out.read_text()
    assert all(line.count("_0") == 5 for line in text.splitlines())


def test_infer_recovers_tree(tmp_path, capsys):
    _, genes = _simulate(tmp_path, "g.nwk", "--count", "200", "--seed", "3")
    res = tmp_path / "tree.nwk"
    scores = tmp_path / "scores.csv"
    assert main(["infer", "--genes", str(genes), "--mode", "multi", "--out", str(res), "--scores", str(scores)]) == 0
    assert res.read_text() == "(A,(B,(C,(D,E))));\n"
    assert "score" in capsys.readouterr().err
    rows = list(csv.reader(scores.open()))
    assert rows[0] == ["rank", "candidate", "score", "tie"] and len(rows) == 16
    assert main(["infer", "--genes", str(genes), "--mode", "one", "--seed", "1", "--out", str(res)]) == 0


def test_infer_tie_lists_all(tmp_path, capsys):
    genes = tmp_path / "tie.nwk"
    genes.write_text("((a_0,b_0),(c_0,d_0));\n((a_0,c_0),(b_0,d_0));\n\n")
    out = tmp_path / "o.nwk"
    assert main(["infer", "--genes", str(genes), "--mode", "multi", "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["(a,((b,d),c));", "(a,(b,(c,d)));"]
    assert "tie among 2" in capsys.readouterr().err


def test_tally(tmp_path):
    genes = tmp_path / "g.nwk"
    genes.write_text("(((a_0,b_0),(a_1,b_1)),(c_0,d_0));\n")
    out = tmp_path / "t.csv"
    assert main(["tally", "--genes", str(genes), "--mode", "multi", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert (rows[0]["n1"], rows[0]["n2"], rows[0]["n3"]) == ("4", "0", "0")
    assert main(["tally", "--genes", str(genes), "--mode", "multi", "--enumerate", "--out", str(out)]) == 0
    assert list(csv.DictReader(out.open()))[0]["n1"] == "4"


def test_bounds(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bounds", "--f", "0.5", "--delta", "2", "--lambda", "0.3", "--mu", "0.1", "--n", "5",
                 "--eps", "0.05", "--out", str(out)]) == 0
    assert "k_req" in capsys.readouterr().out
    assert dict(csv.reader(out.open()))["alpha_ub"].startswith("1.4918")


def test_config_defaults(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[bounds]\nf = 0.5\ndelta = 2\nlambda = 0.3\nmu = 0.1\nn = 5\neps = 0.05\n")
    assert main(["bounds", "--config", str(ini)]) == 0
    assert main(["bounds", "--config", str(ini), "--eps", "0.5"]) == 0


def test_experiment_subcommand(tmp_path, capsys):
    code = main(["experiment", "--kind", "survival", "--species", "((A:1,B:1):0.5,(C:1,D:1):0.5);",
                 "--lambda", "0.3", "--mu", "0.1", "--seed", "2", "--count", "2000", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "verdict:" in out and (tmp_path / "manifest.json").exists()


@pytest.mark.parametrize("argv, code", [
    (["simulate", "--species", SPECIES, "--count", "2"], 1),
    (["simulate", "--species", SPECIES, "--seed", "1", "--count", "-1"], 1),
    (["bounds", "--f", "0.5"], 1),
    (["bounds", "--f", "0.5", "--delta", "2", "--lambda", "0.2", "--mu", "0.2", "--n", "5", "--eps", "0.05"], 2),
    (["simulate", "--species", "((A:1,B:1);", "--seed", "1"], 2),
    (["infer", "--genes", "/nonexistent/genes.nwk", "--mode", "multi"], 2),
    (["experiment", "--kind", "gap", "--species", SPECIES, "--lambda", "0.1", "--mu", "0.1"], 1),
    ([], 1),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--bogus"])
    assert err.value.code == 1


def test_cap_exit_code(tmp_path):
    genes = tmp_path / "g.nwk"
    genes.write_text("((a_0,b_0),(c_0,(d_0,e_0)));\n")
    assert main(["infer", "--genes", str(genes), "--mode", "multi", "--cap", "4"]) == 2


def test_rejection_cap_exit_code(tmp_path):
    # a shallow tree with many duplications: one redraw per component cannot always succeed
    sp = "((A:0.001,B:0.001):0.001,(C:0.001,D:0.001):0.001);"
    code = main(["simulate", "--species", sp, "--lambda", "3", "--mu", "0", "--count", "200", "--seed", "1",
                 "--max-attempts", "1", "--out", str(tmp_path / "g")])
    assert code == 3
