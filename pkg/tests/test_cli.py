import csv
import json

import pytest

from masterloop import cli
from masterloop import loop_algebra as la
from masterloop.lattice_complex import build_rect_lattice

MINIMAL = {"group": "SO", "N": 2, "beta": 0.3, "dims": [1, 1], "loops": ["@p0"], "suites": ["verify-mle"],
           "chains": 400, "sweeps": 400, "burn_in": 100}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_minimal_run_passes(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", write(tmp_path, MINIMAL), "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    res = report["suites"]["verify-mle"]
    assert res["pass"] and res["zscore"] < 4
    assert {"lhs", "rhs", "residual", "zscore", "pass"} <= set(res)
    with open(out / "terms.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["term_kind", "indices", "coefficient", "estimate_re", "estimate_im", "stderr"]
    assert [r["term_kind"] for r in rows] == ["lhs", "deform-", "deform+"]


def test_unknown_edge_exits_2(tmp_path, capsys):
    cfg = {**MINIMAL, "loops": ["0+ 17+ 1- 2-"]}
    code = cli.main(["run", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "17" in capsys.readouterr().err
    cfg = {**MINIMAL, "edge": 17}
    assert cli.main(["run", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "edge 17" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [
    {"group": "SO"},
    {**MINIMAL, "suites": []},
    {**MINIMAL, "suites": ["verify-everything"]},
    {**MINIMAL, "colour": "red"},
    {**MINIMAL, "loops": ["0+ 1+"]},
    {**MINIMAL, "loops": ["@p3"]},
    {**MINIMAL, "group": "Sp"},
    {**MINIMAL, "sweeps": 10, "burn_in": 20},
    {**MINIMAL, "edge": 6, "loops": ["@p0"], "dims": [2, 1]},
])
def test_config_errors_exit_2(tmp_path, capsys, bad):
    assert cli.main(["run", "--config", write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("config error")


def test_unreadable_config(tmp_path, capsys):
    assert cli.main(["describe", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert cli.main(["describe", "--config", str(tmp_path / "broken.json")]) == 2


def test_gradient_check_su3(tmp_path, capsys):
    cfg = {"group": "SU", "N": 3, "gradient_cases": 100}
    out = tmp_path / "g"
    assert cli.main(["gradient-check", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    res = json.loads((out / "report.json").read_text())["suites"]["gradient-check"]
    assert res["cases"] == 100 and res["max_rel_error_gradient"] < 1e-6 and res["pass"]


@pytest.mark.parametrize("dims,edges,plaqs", [([1, 1], 4, 1), ([2, 2], 12, 4)])
def test_describe_rows(tmp_path, capsys, dims, edges, plaqs):
    cfg = {"group": "SO", "N": 2, "dims": dims}
    assert cli.main(["describe", "--config", write(tmp_path, cfg)]) == 0
    lines = capsys.readouterr().out.splitlines()
    edge_rows = lines[lines.index("edges:") + 2:lines.index("plaquettes:") - 1]
    plaq_rows = lines[lines.index("plaquettes:") + 2:]
    assert len(edge_rows) == edges and len(plaq_rows) == plaqs
    c = build_rect_lattice(dims)
    for p, row in enumerate(plaq_rows):
        assert la.parse_loop(" ".join(row.split()[-4:])) == c.boundary(p)


def test_same_seed_same_numbers(tmp_path, capsys):
    path = write(tmp_path, {**MINIMAL, "chains": 100, "sweeps": 200})
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out, seed in ((a, "3"), (b, "3"), (c, "4")):
        assert cli.main(["run", "--config", path, "--out", str(out), "--seed", seed]) == 0
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    rc = json.loads((c / "report.json").read_text())
    for r in (ra, rb, rc):
        r["suites"]["verify-mle"].pop("seconds")
    assert ra == rb
    assert (a / "terms.csv").read_text() == (b / "terms.csv").read_text()
    assert ra["suites"] != rc["suites"]
    assert ra["config"]["seed"] == 3


def test_report_round_trips_through_config(tmp_path, capsys):
    out = tmp_path / "first"
    path = write(tmp_path, {**MINIMAL, "chains": 100, "sweeps": 200})
    assert cli.main(["run", "--config", path, "--out", str(out)]) == 0
    first = json.loads((out / "report.json").read_text())
    again = write(tmp_path, first["config"], "again.json")
    assert cli.main(["run", "--config", again, "--out", str(tmp_path / "second")]) == 0
    second = json.loads((tmp_path / "second" / "report.json").read_text())
    for r in (first, second):
        r["suites"]["verify-mle"].pop("seconds")
    assert first == second


def test_sample_and_suite_override(tmp_path, capsys):
    cfg = {**MINIMAL, "group": "U", "N": 1, "chains": 100, "sweeps": 200}
    out = tmp_path / "s"
    assert cli.main(["sample", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    res = json.loads((out / "report.json").read_text())["suites"]["sample-only"]
    assert "W[@p0]" in res["estimates"]
    out2 = tmp_path / "t"
    cfg = {**MINIMAL, "chains": 200, "sweeps": 300, "haar_samples": 20_000}
    code = cli.main(["run", "--config", write(tmp_path, cfg), "--out", str(out2),
                     "--suite", "verify-ibp,verify-extrinsic,verify-pair"])
    assert code == 0
    suites = json.loads((out2 / "report.json").read_text())["suites"]
    assert set(suites) == {"verify-ibp", "verify-extrinsic", "verify-pair"}
    assert set(suites["verify-ibp"]) >= {"haar", "yang-mills"}


def test_extrinsic_on_unitary_is_config_error(tmp_path, capsys):
    cfg = {**MINIMAL, "group": "U", "N": 2, "suites": ["verify-extrinsic"]}
    assert cli.main(["run", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_rotation_flag(tmp_path, capsys):
    cfg = {"group": "SO", "N": 3, "dims": [2, 1], "loops": ["@p0", "@p1"], "edge": {"vertex": [1, 0], "axis": 1},
           "rotate": True, "chains": 200, "sweeps": 300, "burn_in": 100}
    out = tmp_path / "r"
    assert cli.main(["run", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    res = json.loads((out / "report.json").read_text())["suites"]["verify-mle"]
    assert len(res["rotations"]) == 2 and res["pass"]
