from __future__ import annotations

import json
import math

import pytest

from trapdex.cli import run

E2E = "tests/data/e2e"
SEARCH = "tests/data/search"
GOLDEN = "tests/data/golden"


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "ingest" in capsys.readouterr().out


@pytest.mark.parametrize("command", ["ingest", "crop-plan", "search", "classify",
                                     "evaluate", "split", "prompt"])
def test_subcommand_help_enumerates_flags(command, capsys):
    assert run([command, "--help"]) == 0
    assert "--" in capsys.readouterr().out


def test_unknown_flag_exits_one(capsys):
    assert run(["search", "--frobnicate"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("trapdex: error:") and err.count("\n") == 1


def test_missing_subcommand_exits_one(capsys):
    assert run([]) == 1


def test_search_matches_committed_golden(tmp_path, data_dir, capsys):
    out = tmp_path / "neighbors.jsonl"
    code = run(["search", "--db", str(data_dir / "search/db"),
                "--queries", str(data_dir / "search/queries"),
                "--metric", "l2", "-k", "3", "--out", str(out)])
    assert code == 0
    got = read_jsonl(out)
    expected = read_jsonl(data_dir / "search/golden_neighbors.jsonl")
    assert len(got) == len(expected)
    for mine, golden in zip(got, expected):
        assert mine["query_id"] == golden["query_id"]
        assert [n["id"] for n in mine["neighbors"]] == \
               [n["id"] for n in golden["neighbors"]]
        assert [n["label"] for n in mine["neighbors"]] == \
               [n["label"] for n in golden["neighbors"]]
        for a, b in zip(mine["neighbors"], golden["neighbors"]):
            assert math.isclose(a["score"], b["score"], rel_tol=1e-12, abs_tol=1e-12)


def test_search_stdout_and_determinism(tmp_path, data_dir):
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    threaded = tmp_path / "c.jsonl"
    argv = ["search", "--db", str(data_dir / "search/db"),
            "--queries", str(data_dir / "search/queries"), "-k", "2"]
    assert run(argv + ["--out", str(first)]) == 0
    assert run(argv + ["--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    # Thread fan-out must not change the emitted bytes.
    assert run(argv + ["--threads", "4", "--out", str(threaded)]) == 0
    assert threaded.read_bytes() == first.read_bytes()


def test_search_missing_store_exits_one(tmp_path, capsys):
    assert run(["search", "--db", str(tmp_path / "nope"),
                "--queries", str(tmp_path / "nope")]) == 1


def test_search_corrupt_store_exits_two(tmp_path, data_dir, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "manifest.json").write_text("{broken")
    assert run(["search", "--db", str(bad),
                "--queries", str(data_dir / "search/queries")]) == 2


def test_ingest_roundtrip(tmp_path, data_dir):
    store = tmp_path / "store"
    code = run(["ingest", "--records", f"{E2E}/db_records.jsonl",
                "--out", str(store), "--database"])
    assert code == 0
    manifest = json.loads((store / "manifest.json").read_text())
    assert manifest["count"] == 200 and manifest["dimension"] == 16
    assert manifest["variant"] == "cropped"


def test_ingest_empty_needs_dimension(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run(["ingest", "--records", str(empty), "--out", str(tmp_path / "s")]) == 2
    assert run(["ingest", "--records", str(empty), "--out", str(tmp_path / "s"),
                "--dimension", "4"]) == 0


def test_crop_plan_output(tmp_path, data_dir):
    out = tmp_path / "plans.jsonl"
    code = run(["crop-plan", "--detections", f"{GOLDEN}/megadetector.json",
                "--images", f"{GOLDEN}/coco.json", "--out", str(out)])
    assert code == 0
    plans = {row["image_id"]: row for row in read_jsonl(out)}
    # img001: animal at (0.1, 0.2, 0.3, 0.4) on 1000x800.
    assert plans["img001"]["side"] == 320
    assert plans["img001"]["rect"] == [90, 160, 320, 320]
    assert plans["img001"]["pad"] == [0, 0, 0, 0]
    # img004: full-frame animal on 640x480 -> vertical padding.
    assert plans["img004"]["side"] == 640
    assert plans["img004"]["rect"] == [0, 0, 640, 480]
    assert plans["img004"]["pad"] == [0, 80, 0, 80]
    # img002 has no detections, img003 failed: no plans.
    assert set(plans) == {"img001", "img004"}


def test_classify_second_without_full_provider_exits_one(capsys):
    code = run(["classify", "--detections", f"{E2E}/detections.json",
                "--db", f"{SEARCH}/db", "--queries", f"{SEARCH}/queries",
                "--strategy", "second", "--arrangement", "two"])
    assert code == 1
    assert "full" in capsys.readouterr().err


def test_classify_and_evaluate_pipeline(tmp_path, data_dir):
    db = tmp_path / "db"
    queries = tmp_path / "queries"
    assert run(["ingest", "--records", f"{E2E}/db_records.jsonl",
                "--out", str(db), "--database"]) == 0
    assert run(["ingest", "--records", f"{E2E}/query_records.jsonl",
                "--out", str(queries)]) == 0

    preds = tmp_path / "preds.jsonl"
    assert run(["classify", "--detections", f"{E2E}/detections.json",
                "--db", str(db), "--queries", str(queries),
                "--strategy", "empty", "--arrangement", "two",
                "--metric", "l2", "--mode", "knn", "-k", "1",
                "--truth", f"{E2E}/truth.json", "--out", str(preds)]) == 0
    rows = read_jsonl(preds)
    assert len(rows) == 50
    assert all(row["provenance"] == "crop_classifier" for row in rows)

    report_path = tmp_path / "report.json"
    assert run(["evaluate", "--preds", str(preds), "--truth", f"{E2E}/truth.json",
                "--group-by", "location", "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["overall"]["top1"] == 1.0
    assert report["overall"]["macro_f1"] == 1.0
    assert len(report["groups"]) == 5

    # The optional baseline flag adds the error-reduction figure.
    assert run(["evaluate", "--preds", str(preds), "--truth", f"{E2E}/truth.json",
                "--baseline-top1", "80.0", "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["error_reduction_vs_baseline"] == 1.0


def test_evaluate_reports_misses(tmp_path, capsys):
    preds = tmp_path / "preds.jsonl"
    preds.write_text('{"image_id": "q_c0_00", "variant": "cropped", '
                     '"ranking": [{"label": 0, "score": 1.0}]}\n')
    assert run(["evaluate", "--preds", str(preds),
                "--truth", f"{E2E}/truth.json"]) == 2
    assert "no prediction" in capsys.readouterr().err


def test_split_wct_deterministic(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    argv = ["split", "--truth", f"{E2E}/truth.json", "--scheme", "wct",
            "--seed", "7"]
    assert run(argv + ["--out", str(a)]) == 0
    assert run(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    roles = dict(line.split(",") for line in a.read_text().splitlines()[1:])
    assert set(roles.values()) == {"train", "val", "test"}


def test_split_safari_first_locations(tmp_path):
    out = tmp_path / "safari.csv"
    assert run(["split", "--truth", f"{E2E}/truth.json", "--scheme", "safari",
                "--x", "2", "--out", str(out)]) == 0
    roles = dict(line.split(",") for line in out.read_text().splitlines()[1:])
    for image_id, role in roles.items():
        cluster = image_id.split("_")[1]  # q_c<k>_<j> at loc<k>
        assert role == ("train" if cluster in ("c0", "c1") else "test")


def test_prompt_subcommand(tmp_path):
    captions = tmp_path / "captions.jsonl"
    captions.write_text('{"image_id": "a", "caption": "a coyote in the wild"}\n')
    out = tmp_path / "prompts.jsonl"
    assert run(["prompt", "--categories", "bobcat,coyote",
                "--captions", str(captions), "--out", str(out)]) == 0
    (row,) = read_jsonl(out)
    assert row["prompt"].startswith("Write a one-word answer")
    assert "bobcat, coyote" in row["prompt"]
    assert len(row["prompt_hash"]) == 64


def test_prompt_rejects_empty_category(tmp_path, capsys):
    captions = tmp_path / "captions.jsonl"
    captions.write_text('{"image_id": "a", "caption": "x"}\n')
    assert run(["prompt", "--truth", f"{GOLDEN}/coco.json",
                "--captions", str(captions), "--out",
                str(tmp_path / "p.jsonl")]) == 0
    rows = read_jsonl(tmp_path / "p.jsonl")
    assert "picture: bobcat, coyote?" in rows[0]["prompt"]
    assert "empty" not in rows[0]["prompt"]


def test_prompt_catalog_listing(tmp_path):
    out = tmp_path / "catalog.jsonl"
    assert run(["prompt", "--list-caption-prompts", "--out", str(out)]) == 0
    rows = read_jsonl(out)
    assert len(rows) == 9
    assert rows[0] == {"id": "none", "text": ""}


def test_config_file_defaults_and_flag_override(tmp_path, data_dir):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "db": f"{SEARCH}/db",
        "queries": f"{SEARCH}/queries",
        "k": 3,
        "metric": "l2",
    }))
    from_config = tmp_path / "cfg.jsonl"
    assert run(["--config", str(config), "search", "--out", str(from_config)]) == 0
    assert all(len(r["neighbors"]) == 3 for r in read_jsonl(from_config))

    overridden = tmp_path / "flag.jsonl"
    assert run(["--config", str(config), "search", "-k", "1",
                "--out", str(overridden)]) == 0
    assert all(len(r["neighbors"]) == 1 for r in read_jsonl(overridden))


def test_config_unknown_key_exits_one(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text('{"bogus": 1}')
    assert run(["--config", str(config), "search"]) == 1
    assert "bogus" in capsys.readouterr().err
