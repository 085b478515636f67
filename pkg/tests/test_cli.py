"""CLI end-to-end: filter -> augment -> eval -> dpo-prep over the fixture
corpus with record/replay mocks. The replay cache is recorded once per test
session through the library with scripted backends; every CLI invocation then
runs hermetically (no network, no EDA tools) and must be byte-identical
across repeated runs.

Frozen goldens (counts, c-vector) were computed once from the fixture corpus
at seed 20240817 and pinned here.
"""

import json

import pytest
from click.testing import CliRunner

from assertforge import dataset as ds
from assertforge import evalharness as ev
from assertforge.cli import main
from conftest import (
    E2E_GOLDEN_C_VECTOR as GOLDEN_C_VECTOR,
    E2E_GOLDEN_CHALLENGING as GOLDEN_CHALLENGING,
    E2E_GOLDEN_FAMILY_COUNTS as GOLDEN_FAMILY_COUNTS,
    E2E_GOLDEN_TRIPLES as GOLDEN_TRIPLES,
)
from fixture_corpus import EXPECTED_ACCEPTED


def invoke(*args):
    runner = CliRunner()
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def read_records(path):
    _, rows = ds.strip_meta_header(ds.read_jsonl(path))
    return rows


# -- filter -------------------------------------------------------------------


def test_filter_cli_counts(cli_env, tmp_path):
    out = tmp_path / "out"
    res = invoke("filter", "--config", cli_env["config"], "--out-dir", out)
    assert res.exit_code == 0, res.output
    report = read_records(out / "filter_report.jsonl")
    manifest = read_records(out / "manifest.jsonl")
    assert len(report) == 34
    assert sum(1 for r in report if r["status"] == "accepted") == len(EXPECTED_ACCEPTED)
    assert [m["id"] for m in manifest] == EXPECTED_ACCEPTED


def test_filter_cli_ten_files_two_bad(tmp_path):
    corpus = tmp_path / "ten"
    corpus.mkdir()
    for i in range(8):
        (corpus / f"good{i}.v").write_text(
            f"module g{i} (input clk, input d, output reg q);\n"
            f"  always @(posedge clk) q <= d ^ {i}'d0;\nendmodule\n"
        )
    (corpus / "bad1.v").write_text("module b1; assign x = 1'b0; endmodule\n")
    (corpus / "bad2.v").write_text("module b2;\n")
    res = invoke("filter", "--corpus-dir", corpus, "--out-dir", tmp_path / "o")
    assert res.exit_code == 0
    assert len(read_records(tmp_path / "o" / "manifest.jsonl")) == 8


def test_filter_cli_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    res = invoke("filter", "--corpus-dir", tmp_path / "empty", "--out-dir", tmp_path / "o")
    assert res.exit_code == 0
    assert read_records(tmp_path / "o" / "filter_report.jsonl") == []


def test_filter_cli_missing_dir(tmp_path):
    res = invoke("filter", "--corpus-dir", tmp_path / "nope", "--out-dir", tmp_path / "o")
    assert res.exit_code != 0
    assert "not found" in res.output


# -- augment ------------------------------------------------------------------


def _run_augment(cli_env, out_dir):
    res_f = invoke("filter", "--config", cli_env["config"], "--out-dir", out_dir)
    assert res_f.exit_code == 0, res_f.output
    res_a = invoke(
        "augment",
        "--config",
        cli_env["config"],
        "--manifest",
        out_dir / "manifest.jsonl",
        "--out-dir",
        out_dir,
    )
    assert res_a.exit_code == 0, res_a.output
    return res_a


AUGMENT_OUTPUTS = (
    "pt.jsonl",
    "bug.jsonl",
    "svabug.jsonl",
    "sva_eval_machine.jsonl",
    "split_plan.json",
    "augment_report.json",
)


def test_augment_cli_golden_counts(cli_env, tmp_path):
    out = tmp_path / "out"
    _run_augment(cli_env, out)
    counts = {
        "pt": len(read_records(out / "pt.jsonl")),
        "bug": len(read_records(out / "bug.jsonl")),
        "svabug": len(read_records(out / "svabug.jsonl")),
        "eval": len(read_records(out / "sva_eval_machine.jsonl")),
    }
    assert counts == GOLDEN_FAMILY_COUNTS
    report = json.loads((out / "augment_report.json").read_text())
    assert report["errors"] == []
    assert report["counts"]["families"] == GOLDEN_FAMILY_COUNTS


def test_augment_cli_byte_identical_runs(cli_env, tmp_path):
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    _run_augment(cli_env, out1)
    _run_augment(cli_env, out2)
    for name in AUGMENT_OUTPUTS:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_augment_cli_schemas(cli_env, tmp_path):
    out = tmp_path / "out"
    _run_augment(cli_env, out)
    for row in read_records(out / "pt.jsonl"):
        assert list(row) == ["code", "spec", "analysis"]
    for row in read_records(out / "bug.jsonl"):
        assert list(row) == ["spec", "buggy_code", "buggy_line", "corrected_line"]
        assert row["buggy_line"] in row["buggy_code"].split("\n")
    for row in read_records(out / "svabug.jsonl"):
        assert list(row) == [
            "spec",
            "buggy_sv_code",
            "log",
            "step_by_step",
            "buggy_line",
            "corrected_line",
            "cot",
        ]
        assert row["step_by_step"] == (row["cot"] is not None)
    plan = json.loads((out / "split_plan.json").read_text())
    assert set(plan) == {"meta", "seed", "bins"}
    assert [b["interval"] for b in plan["bins"]] == list(ds.BIN_LABELS)
    for b in plan["bins"]:
        assert set(b) == {"interval", "train", "test"}
        assert not (set(b["train"]) & set(b["test"]))


def test_augment_cli_missing_manifest(cli_env, tmp_path):
    res = invoke("augment", "--config", cli_env["config"], "--out-dir", tmp_path,
                 "--manifest", tmp_path / "none.jsonl")
    assert res.exit_code != 0


# -- eval -----------------------------------------------------------------------


def _run_eval(cli_env, tmp_path, tag):
    report = tmp_path / f"report_{tag}.json"
    results = tmp_path / f"results_{tag}.jsonl"
    res = invoke(
        "eval",
        cli_env["benchmark"],
        "--config",
        cli_env["config"],
        "--out",
        report,
        "--results",
        results,
        "--csv",
        tmp_path / f"report_{tag}.csv",
    )
    assert res.exit_code == 0, res.output
    return report, results


def test_eval_cli_matches_golden_cs(cli_env, tmp_path):
    report_path, results_path = _run_eval(cli_env, tmp_path, "a")
    rows = read_records(results_path)
    assert [r["c"] for r in rows] == GOLDEN_C_VECTOR
    assert all(r["n"] == 20 for r in rows)

    doc = json.loads(report_path.read_text())
    # Oracle: recompute expected rates from the frozen c-vector.
    for k in (1, 5):
        expected = sum(ev.pass_at_k(20, c, k) for c in GOLDEN_C_VECTOR) / len(
            GOLDEN_C_VECTOR
        )
        assert doc["overall"][f"pass@{k}"] == pytest.approx(expected, abs=1e-12)
    assert len(doc["histogram"]) == 21
    assert sum(doc["histogram"]) == len(GOLDEN_C_VECTOR)
    assert set(doc["by_source"]) == {"machine", "human"}


def test_eval_cli_byte_identical(cli_env, tmp_path):
    r1, s1 = _run_eval(cli_env, tmp_path, "b1")
    r2, s2 = _run_eval(cli_env, tmp_path, "b2")
    assert r1.read_bytes() == r2.read_bytes()
    assert s1.read_bytes() == s2.read_bytes()


def test_eval_cli_bad_schema(cli_env, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x"}\n')
    res = invoke("eval", bad, "--config", cli_env["config"])
    assert res.exit_code != 0


# -- dpo-prep ----------------------------------------------------------------------


def test_dpo_prep_cli_golden_counts(cli_env, tmp_path):
    _, results_path = _run_eval(cli_env, tmp_path, "dpo")
    triples_path = tmp_path / "triples.jsonl"
    res = invoke(
        "dpo-prep",
        results_path,
        "--benchmark",
        cli_env["benchmark"],
        "--out",
        triples_path,
    )
    assert res.exit_code == 0, res.output
    assert f"{GOLDEN_CHALLENGING} challenging cases" in res.output
    triples = read_records(triples_path)
    assert len(triples) == GOLDEN_TRIPLES
    for t in triples:
        assert set(t) == {"x", "p", "n"}
        assert t["p"] != t["n"]


def test_dpo_prep_all_correct_empty(cli_env, tmp_path):
    rows = [
        {
            "case_id": "human/incr-bug",
            "n": 20,
            "c": 20,
            "responses": [
                {"raw_text": "{}", "valid_json": True, "verdict": "correct"}
            ]
            * 20,
        }
    ]
    results = tmp_path / "allcorrect.jsonl"
    ds.write_jsonl(rows, results)
    out = tmp_path / "triples.jsonl"
    res = invoke("dpo-prep", results, "--benchmark", cli_env["benchmark"], "--out", out)
    assert res.exit_code == 0, res.output
    assert read_records(out) == []


def test_dpo_prep_wrong_count_errors(cli_env, tmp_path):
    rows = [
        {
            "case_id": "human/incr-bug",
            "n": 19,
            "c": 1,
            "responses": [
                {"raw_text": "{}", "valid_json": True, "verdict": "correct"}
            ]
            * 19,
        }
    ]
    results = tmp_path / "short.jsonl"
    ds.write_jsonl(rows, results)
    res = invoke(
        "dpo-prep", results, "--benchmark", cli_env["benchmark"], "--out", tmp_path / "t.jsonl"
    )
    assert res.exit_code == 1
    assert "expected 20" in res.output


# -- losses -------------------------------------------------------------------------


def test_losses_cli_worked_examples(tmp_path):
    probs = tmp_path / "probs.jsonl"
    ds.write_jsonl(
        [
            {"kind": "pt", "token_probs": [0.5, 0.25]},
            {"kind": "sft", "token_probs": [0.5]},
            {"kind": "dpo", "policy_p": 0.8, "ref_p": 0.5, "policy_n": 0.1, "ref_n": 0.4},
        ],
        probs,
    )
    res = invoke("losses", probs)
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["pt_loss"] == pytest.approx(2.0794415416798357, abs=1e-10)
    assert doc["sft_loss"] == pytest.approx(0.6931471805599453, abs=1e-10)
    assert doc["dpo_loss"] == pytest.approx(0.60459, abs=1e-4)


def test_losses_cli_unknown_kind(tmp_path):
    probs = tmp_path / "probs.jsonl"
    ds.write_jsonl([{"kind": "mystery"}], probs)
    res = invoke("losses", probs)
    assert res.exit_code != 0
