import json
import shutil

import pytest

from conftest import FIXTURE_ROOT
from ledgerlab.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def golden(tmp_path):
    for name in ("ledger.jsonl", "bundle.jsonl"):
        shutil.copyfile(FIXTURE_ROOT / name, tmp_path / name)
    return tmp_path / "ledger.jsonl"


def test_verify_and_tamper_exit_codes(capsys, golden, tmp_path):
    code, report = run(capsys, "verify", "--ledger", golden)
    assert code == EXIT_OK and report["verdict"] == "intact"
    code, manifest = run(capsys, "tamper", "--ledger", golden, "--k", 2, "--seed", 1, "--manifest", tmp_path / "m.json")
    assert code == EXIT_OK and len(manifest) == 2
    code, report = run(capsys, "verify", "--ledger", golden, "--mode", "paper")
    assert code == EXIT_FAIL and report["verdict"] == "tampered"


def test_tamper_bad_target_is_usage_error(capsys, golden):
    assert main(["tamper", "--ledger", str(golden), "--target", "nonsense"]) == EXIT_ERROR
    assert main(["tamper", "--ledger", str(golden), "--target", "9999:0:payload"]) == EXIT_ERROR
    assert main(["tamper", "--ledger", str(golden)]) == EXIT_ERROR


def test_stats_query_and_offchain(capsys, golden):
    code, summary = run(capsys, "stats", "--ledger", golden)
    assert code == EXIT_OK
    assert summary["block_count"] == 432 and summary["transaction_count"] == 434
    records = json.loads((FIXTURE_ROOT / "records.json").read_text())
    first = records[0]
    code, record = run(capsys, "query", first["id"], "--ledger", golden)
    assert code == EXIT_OK and record == first
    code, out = run(capsys, "query", "L0_nowhere_20240101_00000000", "--ledger", golden)
    assert code == EXIT_FAIL and out["error"] == "NotFound"
    blob = FIXTURE_ROOT / "offchain" / f"{first['id']}.dat"
    code, out = run(capsys, "check-offchain", first["id"], blob, "--ledger", golden)
    assert code == EXIT_OK and out["match"] is True
    code, out = run(capsys, "check-offchain", records[1]["id"], blob, "--ledger", golden)
    assert code == EXIT_FAIL and out["match"] is False


def test_ingest(capsys, tmp_path):
    code, out = run(capsys, "ingest", FIXTURE_ROOT / "records.json")
    assert code == EXIT_OK and out["count"] == 430
    bad = tmp_path / "bad.json"
    bad.write_text('[{"id": 1}]')
    code, out = run(capsys, "ingest", bad)
    assert code == EXIT_ERROR and out["error"] == "RecordFileInvalid" and out["failures"][0][0] == 0
    assert main(["ingest", str(tmp_path / "missing.json")]) == EXIT_ERROR


def test_init_submit_verify(capsys, tmp_path, records):
    net = tmp_path / "net"
    code, out = run(capsys, "init", "--out", net, "--seed", 11)
    assert code == EXIT_OK and "collaborator.OrgUIS" in out["identities"]
    recs = tmp_path / "records.json"
    recs.write_text(json.dumps([r.to_json() for r in records[:2]]))
    code, out = run(capsys, "submit", "--network", net, "--records", recs, "--identity", "collaborator.OrgESPOCH")
    assert code == EXIT_OK and [r["valid"] for r in out["receipts"]] == [True, True]
    code, report = run(capsys, "verify", "--ledger", net / "ledger.jsonl")
    assert code == EXIT_OK
    code, summary = run(capsys, "stats", "--ledger", net / "ledger.jsonl")
    assert summary["contract_invocation_count"] == 2
    code, _ = run(capsys, "submit", "--network", net, "--records", recs, "--identity", "peer0.OrgUIS")
    assert code == EXIT_ERROR


def test_seed_env_overrides_flag(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("LEDGERLAB_SEED", "11")
    code, a = run(capsys, "init", "--out", tmp_path / "a", "--seed", 3)
    monkeypatch.delenv("LEDGERLAB_SEED")
    code, b = run(capsys, "init", "--out", tmp_path / "b", "--seed", 11)
    assert a["seed"] == b["seed"] == 11
    assert (tmp_path / "a" / "ledger.jsonl").read_bytes() == (tmp_path / "b" / "ledger.jsonl").read_bytes()
    monkeypatch.setenv("LEDGERLAB_SEED", "eleven")
    assert main(["init", "--out", str(tmp_path / "c")]) == EXIT_ERROR


def test_run_scenario_small(capsys, tmp_path, records):
    recs = tmp_path / "records.json"
    recs.write_text(json.dumps([r.to_json() for r in records[:4]]))
    out = tmp_path / "ledger.jsonl"
    code, report = run(capsys, "run-scenario", "--records", recs, "--seed", 2, "--ledger-out", out)
    assert code == EXIT_OK and report["transactions_total"] == 8
    code, verdict = run(capsys, "verify", "--ledger", out)
    assert code == EXIT_OK
    assert main(["run-scenario", "--seed", "2"]) == EXIT_ERROR
