import json

import pytest

from rgstep.cli import (
    ConfigError,
    RunConfig,
    bundle,
    check_ladder,
    default_ladder,
    load_config,
    main,
    round_trip,
    validate_document,
)
from rgstep.fieldalg import CouplingConstants


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


def test_default_ladder_is_valid_in_each_dimension():
    for d in (1, 2, 3, 4):
        check_ladder(default_ladder(d), d)


def test_bad_ladder_is_a_config_error(capsys):
    with pytest.raises(ConfigError):
        check_ladder([1, 2, 3, 4, 5, 6, 7], 1)
    code, report = run(capsys, ["serialize", "--set", 'a_ladder=["1/10","1/10","1/10","1/10","1/10","1/10","1/10"]'])
    assert code == 2 and "out of order" in report["error"]


def test_config_errors_exit_with_two(capsys, tmp_path):
    assert run(capsys, ["serialize", "--set", "L=2"])[0] == 2
    assert run(capsys, ["serialize", "--set", "colour=blue"])[0] == 2
    assert run(capsys, ["serialize", "--set", "a=[0,0]"])[0] == 2
    assert run(capsys, ["serialize", "--set", "noequals"])[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, ["serialize", "--config", str(bad)])[0] == 2
    assert run(capsys, ["flow", "--steps", "2"])[0] == 2


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"samples": 5, "seed": 3}))
    cfg = load_config(str(path), ["seed=9"])
    assert cfg.samples == 5 and cfg.seed == 9
    assert RunConfig.from_json(cfg.to_json()).to_json() == cfg.to_json()


def test_geometry_verify(capsys):
    code, report = run(capsys, ["geometry-verify"])
    assert code == 0 and report["passed"]
    assert report["checks"]["eta-lemma"]["passed"]


def test_identity_audit(capsys):
    code, report = run(capsys, ["identity-audit", "--set", "samples=1"])
    assert code == 0 and report["passed"]


def test_k1_demo(capsys):
    code, report = run(capsys, ["k1-demo", "--set", "samples=2"])
    assert code == 0 and all(s["equal"] for s in report["samples"])


def test_flow_from_zero_stays_at_zero(capsys):
    code, report = run(capsys, ["flow", "--steps", "1"])
    assert code == 0
    row = report["trajectory"][0]
    assert CouplingConstants.from_json(row["V_plus"]) == CouplingConstants()
    assert CouplingConstants.from_json(row["R_plus"]) == CouplingConstants()
    assert row["dq"] == "0"


def test_flow_is_deterministic(capsys):
    args = ["flow", "--steps", "1", "--set", 'V0={"g": "1/4", "nu": "1/10"}']
    first = run(capsys, args)
    second = run(capsys, args)
    assert first == second
    assert first[0] == 0
    assert first[1]["trajectory"][0]["nu_first_order"]["equal"]


def test_zd_check_on_the_small_ring_reports_infeasible(capsys):
    code, report = run(capsys, ["zd-check", "--set", "samples=1"])
    assert code == 1
    assert all(r["status"].startswith("infeasible") for r in report["results"])


def test_serialize_round_trip(capsys, tmp_path):
    out = tmp_path / "bundle.json"
    code, report = run(capsys, ["serialize", "--output", str(out)])
    assert code == 0 and all(report["round_trip"].values())
    docs = json.loads(out.read_text())
    for doc in docs.values():
        assert round_trip(doc) == round_trip(round_trip(doc))
    assert run(capsys, ["validate", str(out)])[0] == 0


def test_validate_edge_cases(capsys, tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    assert run(capsys, ["validate", str(empty)])[0] == 0
    for text in ("{}", "[]", "null"):
        empty.write_text(text)
        assert run(capsys, ["validate", str(empty)])[0] == 0
    broken = tmp_path / "broken.json"
    broken.write_text('{"kind": "torus", "data": {"d": 1,}')
    code, report = run(capsys, ["validate", str(broken)])
    assert code == 2 and "line 1" in report["errors"][0]
    assert run(capsys, ["validate", str(tmp_path / "missing.json")])[0] == 2


def test_validate_document_reports_locations():
    docs = bundle(RunConfig())
    assert validate_document(docs) == []
    broken = dict(docs)
    broken["torus"] = {"kind": "torus", "data": {"d": 1}}
    errors = validate_document(broken)
    assert errors and errors[0].startswith("$.torus.data")
    assert validate_document({"kind": "nothing", "data": {}})[0].startswith("$.kind")
    assert validate_document(7) == ["$: expected an object"]
