import csv
import json

import pytest

from http_stub import ChatStub
from shillaudit.audit import render_confidence_response
from shillaudit.cli import main
from shillaudit.synthetic import synthetic_catalog, synthetic_interactions


@pytest.fixture
def workspace(tmp_path):
    """Demo dataset plus a config file pointing at it."""
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    matrix = synthetic_interactions(120, 80, mean_profile_len=12, seed=0)
    matrix.save_csv(data_dir / "interactions.csv")
    synthetic_catalog(80, seed=0).save_jsonl(data_dir / "catalog.jsonl")
    out_dir = tmp_path / "out"
    config = tmp_path / "run.toml"
    config.write_text(
        f"""
output_dir = "{out_dir}"
seed = 7

[dataset]
interactions = "{data_dir / 'interactions.csv'}"
catalog = "{data_dir / 'catalog.jsonl'}"
domain = "movies"

[attack]
strategy = "random"
fake_fraction = 0.05
n_targets = 3
seed = 11

[prescreen]
delta = 0.9
tau = 0.6
components = 4

[audit]
mode = "confidence"

[recsys]
embedding_dim = 8
n_layers = 1
n_epochs = 3
seed = 7

[evaluate_rc]
top_n = 10

[sweep]
attacks = ["random", "bandwagon"]

[corpus]
injectors = ["random", "bandwagon"]
regimes = ["unpopular", "popular", "random"]
datasets = [{{name = "demo", interactions = "{data_dir / 'interactions.csv'}", catalog = "{data_dir / 'catalog.jsonl'}"}}]
"""
    )
    return {"config": str(config), "out": out_dir, "data": data_dir}


def run_cli(*argv):
    return main(list(argv))


class TestCmdAttack:
    def test_writes_poisoned_and_manifest(self, workspace, capsys):
        assert run_cli("attack", "--config", workspace["config"]) == 0
        manifest = json.loads((workspace["out"] / "attack_manifest.json").read_text())
        assert manifest["strategy"] == "random"
        assert len(manifest["fake_user_ids"]) == 6  # 5% of 120
        assert (workspace["out"] / "poisoned_interactions.csv").exists()
        assert (workspace["out"] / "config_snapshot.json").exists()

    def test_rerun_byte_identical_manifest(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        first = (workspace["out"] / "attack_manifest.json").read_bytes()
        run_cli("attack", "--config", workspace["config"])
        assert (workspace["out"] / "attack_manifest.json").read_bytes() == first

    def test_bandwagon_strategy_in_manifest(self, workspace):
        assert run_cli(
            "attack", "--config", workspace["config"], "--set", "attack.strategy=bandwagon"
        ) == 0
        manifest = json.loads((workspace["out"] / "attack_manifest.json").read_text())
        assert manifest["strategy"] == "bandwagon"

    def test_missing_interactions_is_config_error(self, workspace):
        code = run_cli(
            "attack", "--config", workspace["config"],
            "--set", "dataset.interactions=/nonexistent/file.csv",
        )
        assert code == 2


class TestCmdDetect:
    def test_oracle_mock_end_to_end(self, workspace, capsys):
        run_cli("attack", "--config", workspace["config"])
        assert run_cli("detect", "--config", workspace["config"], "--mock-auditor", "oracle") == 0
        report = json.loads((workspace["out"] / "detection_report.json").read_text())
        # oracle auditing: DR equals Stage-I recall, FAR exactly zero
        assert report["dr_raw"] == report["stage1_recall_raw"]
        assert report["far_raw"] == 0.0
        assert (workspace["out"] / "candidate_set.json").exists()
        assert (workspace["out"] / "verdict_log.jsonl").exists()

    def test_skip_audit_stage1_only(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        assert run_cli("detect", "--config", workspace["config"], "--skip-audit") == 0
        report = json.loads((workspace["out"] / "detection_report.json").read_text())
        assert report["pipeline"] == "stage1-only"
        assert report["dr_raw"] == report["stage1_recall_raw"]

    def test_always_genuine_flags_nothing(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        run_cli("detect", "--config", workspace["config"], "--mock-auditor", "always-genuine")
        report = json.loads((workspace["out"] / "detection_report.json").read_text())
        assert report["dr_raw"] == 0.0 and report["far_raw"] == 0.0

    def test_unreachable_endpoint_fails_fast_with_exit_3(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        code = run_cli(
            "detect", "--config", workspace["config"],
            "--set", "audit.base_url=http://127.0.0.1:1/v1/chat/completions",
            "--set", "audit.model_name=m",
        )
        assert code == 3
        # fails before prescreen: no candidate set was written
        assert not (workspace["out"] / "candidate_set.json").exists()

    def test_http_auditor_with_stub(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        with ChatStub(response_text=render_confidence_response("x", 5)) as stub:
            code = run_cli(
                "detect", "--config", workspace["config"],
                "--set", f"audit.base_url={stub.url}",
                "--set", "audit.model_name=stub-model",
            )
            assert code == 0
            assert stub.request_count > 0
        report = json.loads((workspace["out"] / "detection_report.json").read_text())
        assert report["far_raw"] == 0.0

    def test_transport_faults_never_crash_and_fail_open(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        # Baseline: all requests clear everyone.
        with ChatStub(response_text=render_confidence_response("x", 5)) as stub:
            run_cli(
                "detect", "--config", workspace["config"],
                "--set", f"audit.base_url={stub.url}",
                "--set", "audit.model_name=m",
                "--set", "audit.retries=0",
                "--set", "audit.max_concurrency=1",
            )
            clean_report = json.loads((workspace["out"] / "detection_report.json").read_text())
            # Faulty run: drops, malformed JSON, server errors injected.
            stub.script("drop", "malformed", "http500", "badshape", "drop")
            code = run_cli(
                "detect", "--config", workspace["config"],
                "--set", f"audit.base_url={stub.url}",
                "--set", "audit.model_name=m",
                "--set", "audit.retries=0",
                "--set", "audit.max_concurrency=1",
            )
            assert code == 0
            faulty_report = json.loads((workspace["out"] / "detection_report.json").read_text())
        # fail-open keeps FAR unchanged by transport failures
        assert faulty_report["far_raw"] == clean_report["far_raw"] == 0.0

    def test_scripted_auditor(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        responses = workspace["data"] / "responses.jsonl"
        responses.write_text("")
        code = run_cli(
            "detect", "--config", workspace["config"],
            "--mock-auditor", "scripted", "--scripted-responses", str(responses),
        )
        assert code == 0
        report = json.loads((workspace["out"] / "detection_report.json").read_text())
        assert report["dr_raw"] == 0.0  # everything fails parsing, fail-open


class TestCmdSweep:
    def test_grid_rows(self, workspace):
        code = run_cli(
            "sweep", "--config", workspace["config"],
            "--delta-grid", "0.85,0.9,0.95", "--tau-grid", "0.5,0.6",
        )
        assert code == 0
        with open(workspace["out"] / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert set(rows[0]) == {"delta", "tau", "DR", "FAR"}

    def test_single_cell_matches_detect_stage1(self, workspace):
        run_cli("attack", "--config", workspace["config"], "--set", "attack.strategy=random")
        run_cli("detect", "--config", workspace["config"], "--skip-audit")
        report = json.loads((workspace["out"] / "detection_report.json").read_text())
        run_cli(
            "sweep", "--config", workspace["config"],
            "--set", "sweep.attacks=random",
            "--delta-grid", "0.9", "--tau-grid", "0.6",
        )
        with open(workspace["out"] / "sweep.csv") as fh:
            row = next(csv.DictReader(fh))
        assert float(row["DR"]) == pytest.approx(report["dr_raw"])
        assert float(row["FAR"]) == pytest.approx(report["far_raw"])

    def test_dr_monotone_in_delta(self, workspace):
        run_cli(
            "sweep", "--config", workspace["config"],
            "--delta-grid", "0.5,0.7,0.9", "--tau-grid", "0.6",
        )
        with open(workspace["out"] / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        drs = [float(r["DR"]) for r in sorted(rows, key=lambda r: float(r["delta"]))]
        assert drs == sorted(drs, reverse=True)

    def test_empty_grid_rejected(self, workspace):
        assert run_cli("sweep", "--config", workspace["config"]) == 2


class TestCmdEvaluateRc:
    def test_perfect_defense_rc_exactly_100(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        run_cli("detect", "--config", workspace["config"], "--mock-auditor", "oracle")
        assert run_cli("evaluate-rc", "--config", workspace["config"]) == 0
        rc = json.loads((workspace["out"] / "rc_report.json").read_text())
        # oracle flags exactly the Stage-I-caught fakes; with full recall the
        # defended training set equals the clean one and RC is exactly 100
        report = json.loads((workspace["out"] / "detection_report.json").read_text())
        if report["dr_raw"] == 100.0:
            assert rc["rc"]["defended"]["rc_hr"] == 100.0
            assert rc["rc"]["defended"]["rc_ndcg"] == 100.0

    def test_schema_and_arithmetic(self, workspace):
        run_cli("attack", "--config", workspace["config"])
        run_cli("detect", "--config", workspace["config"], "--mock-auditor", "oracle")
        run_cli("evaluate-rc", "--config", workspace["config"])
        rc = json.loads((workspace["out"] / "rc_report.json").read_text())
        for setting in ("clean", "attack", "defended"):
            assert {"hr", "ndcg", "n_pairs"} <= set(rc["settings"][setting])
        for name in ("attack", "defended"):
            from shillaudit.metrics import recommendation_consistency

            expected = recommendation_consistency(
                rc["settings"][name]["hr"], rc["settings"]["clean"]["hr"]
            )
            assert rc["rc"][name]["rc_hr"] == expected

    def test_requires_attack_outputs(self, workspace):
        assert run_cli("evaluate-rc", "--config", workspace["config"]) == 2


class TestCmdBuildCorpus:
    def test_counts_and_balance(self, workspace, capsys):
        assert run_cli("build-corpus", "--config", workspace["config"]) == 0
        out = capsys.readouterr().out
        assert "6 malicious groups" in out
        lines = [
            json.loads(x)
            for x in (workspace["out"] / "rft_corpus.jsonl").read_text().splitlines()
        ]
        n_fake = sum(1 for l in lines if l["ground_truth"] == "Fake")
        assert n_fake == len(lines) - n_fake

    def test_no_datasets_rejected(self, workspace):
        code = run_cli(
            "build-corpus", "--config", workspace["config"], "--set", "corpus.datasets=",
        )
        assert code == 2


class TestCmdReport:
    def test_aggregates_outputs(self, workspace, capsys):
        run_cli("attack", "--config", workspace["config"])
        run_cli("detect", "--config", workspace["config"], "--mock-auditor", "oracle")
        assert run_cli("report", "--output-dir", str(workspace["out"])) == 0
        combined = json.loads((workspace["out"] / "combined_report.json").read_text())
        assert "attack" in combined and "detection" in combined

    def test_empty_dir_rejected(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert run_cli("report", "--output-dir", str(empty)) == 2


class TestTiming:
    def test_full_mock_detect_under_60s_on_500_users(self, tmp_path):
        import time

        data_dir = tmp_path / "data"
        data_dir.mkdir()
        matrix = synthetic_interactions(500, 300, mean_profile_len=30, seed=2)
        matrix.save_csv(data_dir / "interactions.csv")
        synthetic_catalog(300, seed=2).save_jsonl(data_dir / "catalog.jsonl")
        config = tmp_path / "run.toml"
        config.write_text(
            f"""
output_dir = "{tmp_path / 'out'}"
[dataset]
interactions = "{data_dir / 'interactions.csv'}"
catalog = "{data_dir / 'catalog.jsonl'}"
[attack]
fake_fraction = 0.02
seed = 1
[prescreen]
components = 8
"""
        )
        t0 = time.perf_counter()
        assert run_cli("attack", "--config", str(config)) == 0
        assert run_cli("detect", "--config", str(config), "--mock-auditor", "oracle") == 0
        assert time.perf_counter() - t0 < 60.0


class TestConfigHandling:
    def test_missing_config_file(self):
        assert run_cli("attack", "--config", "/nonexistent.toml") == 2

    def test_invalid_toml(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("this is not [valid")
        assert run_cli("attack", "--config", str(bad)) == 2

    def test_unknown_key_rejected(self, workspace):
        assert run_cli(
            "attack", "--config", workspace["config"], "--set", "attack.mystery_knob=1"
        ) == 2

    def test_invalid_section_value(self, workspace):
        assert run_cli(
            "attack", "--config", workspace["config"], "--set", "attack.fake_fraction=0.9"
        ) == 2

    def test_snapshot_reflects_overrides(self, workspace):
        run_cli(
            "attack", "--config", workspace["config"], "--set", "attack.seed=99"
        )
        snap = json.loads((workspace["out"] / "config_snapshot.json").read_text())
        assert snap["attack"]["seed"] == 99
