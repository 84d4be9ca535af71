import csv
import json
import logging

import numpy as np
import pytest

from ordinal_dtr import cli
from ordinal_dtr.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    OUT_OF_SCOPE,
    DataError,
    RunConfig,
    dataset_to_csv,
    ingest_dataset,
    main,
)
from ordinal_dtr.reference import reference_value
from ordinal_dtr.simlab import generate, get_scenario
from ordinal_dtr.stats import SeededRng

GOOD = """x1_age,x1_score,a1,x2_resp,a2,y2
1.5,0.2,1,0.3,-1,1
-0.5,1.1,-1,0.0,1,3
0.25,-2,1,1.5,1,2
"""

FAST = ["--profile", "desk", "--rbml", "20", "--burnin", "50", "--trees", "10", "--rql", "2",
        "--B", "100"]


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ingest_three_rows(tmp_path):
    d = ingest_dataset(write(tmp_path, GOOD))
    assert d.n == 3 and d.K == 3
    assert d.x1_names == ("age", "score") and d.x2_names == ("resp",)
    assert list(d.a2) == [-1, 1, 1] and list(d.y2) == [1, 3, 2]


def test_ingest_rejects_bad_treatment_with_row(tmp_path):
    bad = GOOD.replace("0.0,1,3", "0.0,0,3")
    with pytest.raises(DataError, match=r"row 2, column 'a2'"):
        ingest_dataset(write(tmp_path, bad))


@pytest.mark.parametrize("text, pattern", [
    ("x1_a,a1,a2\n1,1,1\n", "missing required"),
    ("x1_a,a1,x2_b,a2,y2\n1,1,2,1\n", "row 1: expected 5"),
    ("x1_a,a1,x2_b,a2,y2\n1,1,,1,2\n", "missing value"),
    ("x1_a,a1,x2_b,a2,y2\nfoo,1,2,1,2\n", "not a number"),
    ("x1_a,a1,x2_b,a2,y2\n1,1,2,1,2.5\n", "integer"),
    ("x1_a,a1,x2_b,a2,y2\n1,1,2,1,2\n2,1,2,-1,2\n", "single category"),
    ("x1_a,a1,x2_b,a2,y2,z\n1,1,2,1,2,0\n", "unexpected column"),
    ("", "empty file"),
])
def test_ingest_schema_errors(tmp_path, text, pattern):
    with pytest.raises(DataError, match=pattern):
        ingest_dataset(write(tmp_path, text))


def test_label_remap_is_logged(tmp_path, caplog):
    text = "x1_a,a1,x2_b,a2,y2\n1,1,0,1,0\n2,-1,0,1,1\n3,1,1,-1,2\n"
    with caplog.at_level(logging.INFO, logger="ordinal_dtr"):
        d = ingest_dataset(write(tmp_path, text))
    assert list(d.y2) == [1, 2, 3]
    assert d.label_map == {0: 1, 1: 2, 2: 3}
    assert "0 -> 1" in caplog.text and "2 -> 3" in caplog.text


def test_dataset_csv_round_trip(tmp_path):
    data, _ = generate(get_scenario(11), 50, SeededRng(0))
    p = tmp_path / "sim.csv"
    text = dataset_to_csv(data, p)
    back = ingest_dataset(p)
    for k in ("x1", "a1", "x2", "a2", "y2"):
        assert np.array_equal(getattr(back, k), getattr(data, k))
    assert dataset_to_csv(back) == text
    # zero-based labels come back out as written
    remapped = write(tmp_path, "x1_a,a1,x2_b,a2,y2\n1,1,0,1,0\n2,-1,0,1,1\n3,1,1,-1,2\n", "z.csv")
    rows = list(csv.reader(dataset_to_csv(ingest_dataset(remapped)).splitlines()))
    assert [r[-1] for r in rows[1:]] == ["0", "1", "2"]


def test_run_config_validation():
    with pytest.raises(cli.ConfigError):
        RunConfig("evaluate", ntr=0)
    with pytest.raises(cli.ConfigError):
        RunConfig("evaluate", estimator=["dwols"])
    with pytest.raises(cli.ConfigError):
        RunConfig("evaluate", scenario=[13])
    with pytest.raises(cli.ConfigError):
        RunConfig("evaluate", draws=10, rbml=20)
    with pytest.raises(cli.ConfigError):
        RunConfig("reproduce", scale=1.5)
    cfg = RunConfig("evaluate", profile="desk", draws=30, burnin=40, trees=15, rql=3, B=150)
    sc = cfg.study_config()
    assert (sc.sampler.R_bml, sc.sampler.burn1, sc.sampler.burn2, sc.sampler.M) == (30, 40, 40, 15)
    assert sc.R_ql == 3 and sc.bootstrap.B == 150


def test_exit_codes(tmp_path):
    assert main(["simulate", "--scenario", "13"]) == EXIT_CONFIG
    assert main(["fit"]) == EXIT_CONFIG
    cfg = write(tmp_path, json.dumps({"bogus": 1}), "c.json")
    assert main(["evaluate", "--config", str(cfg)]) == EXIT_CONFIG
    bad = write(tmp_path, GOOD.replace("0.0,1,3", "0.0,0,3"))
    assert main(["fit", "--data", str(bad)]) == EXIT_DATA
    assert main(["fit", "--data", str(tmp_path / "missing.csv")]) == EXIT_DATA
    with pytest.raises(SystemExit):
        main(["evaluate", "--estimator", "dwols"])


def test_config_file_and_flag_precedence(tmp_path):
    cfg = write(tmp_path, json.dumps({"ntr": 300, "seed": 4, "scenario": [3]}), "c.json")
    args = cli.build_parser().parse_args(["evaluate", "--config", str(cfg), "--seed", "9"])
    rc = cli.load_config(args)
    assert rc.ntr == 300 and rc.seed == 9 and rc.scenario == [3]


def test_simulate_then_fit(tmp_path):
    sim = tmp_path / "sim.csv"
    assert main(["simulate", "--scenario", "3", "--ntr", "200", "--seed", "2", "--out", str(sim)]) == EXIT_OK
    out = tmp_path / "fit"
    code = main(["fit", "--data", str(sim), "--estimator", "qlearning", "bml-bp", "--out", str(out)] + FAST)
    assert code == EXIT_OK
    with open(out / "psi_bml-bp.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cli.PSI_TABLE_COLUMNS and len(rows) == 1 + 2 * 200
    text = (out / "tree_bml-bp_stage2.txt").read_text()
    assert text.startswith("# R2 = ") and "node n=200" in text
    assert (out / "tree_qlearning_stage1.dot").read_text().startswith("digraph")


def test_reproduce_structure_and_reference_values(tmp_path):
    out = tmp_path / "rep.csv"
    code = main(["reproduce", "table2", "--scale", "0.1", "--scenario", "1", "--seed", "1",
                 "--out", str(out)] + FAST)
    assert code == EXIT_OK
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["qlearning", "dwols", "bml-bp", "bml-obart"]
    ran = [r for r in rows if r["method"] != "dwols"]
    assert len(ran) == 3 and all(r["bias_1"] not in (OUT_OF_SCOPE, "not run") for r in ran)
    dw = rows[1]
    assert dw["mse_2"] == OUT_OF_SCOPE and dw["mse_2_delta"] == OUT_OF_SCOPE
    bp = rows[2]
    assert bp["cover_2_reference_value"] == "1.000"
    assert float(bp["cover_2_delta"]) == pytest.approx(float(bp["cover_2"]) - 1.0, abs=1e-3)


def test_embedded_reference_values():
    assert reference_value("table2", 1, "bml-bp", "cover", 2) == 1.0
    assert reference_value("table2", 10, "bml-obart", "mse", 1) == 0.341
    assert reference_value("table2", 10, "bml-bp", "mse", 1) == 0.610


def test_evaluate_is_deterministic_across_threads(tmp_path):
    base = ["evaluate", "--scenario", "1", "3", "--estimator", "qlearning", "--ntr", "200", "--nte", "200",
            "--reps", "2", "--seed", "5"] + FAST
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(base + ["--out", str(a)]) == EXIT_OK
    assert main(base + ["--threads", "2", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
