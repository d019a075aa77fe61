"""Config parsing, end-to-end sessions, replay, reporting, and CLI codes.

Detection counts for the planted bugs are frozen: every transaction in a
traverse session against a buggy mock must trip exactly the assertion that
bug class violates, and nothing else.
"""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from txforge.cli import main
from txforge.config import ConfigError, SessionConfig, config_from_mapping, load_config
from txforge.lifecycle import DEFAULT_TRAVERSAL_PLAN, LifecycleState, VALID_EDGES
from txforge.mocks import SyncStrategy
from txforge.orchestrator import ReplayError, Session, replay_session, run_session
from txforge.reporting import render_text, report_to_json_bytes, report_to_mapping

ALL_TAGS = ("create", "update", "withdraw")


def make_config(**overrides) -> SessionConfig:
    return config_from_mapping(dict(overrides))


def run_in_memory(**overrides):
    return Session(make_config(**overrides)).run()


class TestConfigParsing:
    def test_empty_mapping_gives_documented_defaults(self):
        config = config_from_mapping({})
        assert config.mode == "traverse"
        assert config.seed == 0
        assert config.transactions == 10
        assert config.plan == DEFAULT_TRAVERSAL_PLAN
        assert config.confirmations == 6
        assert config.wait_window == 15.0
        assert config.clock == "simulated"
        assert config.strategy is SyncStrategy.PASSIVE_WAITING
        assert config.source == "in_process"
        assert config.ticks == 1000
        assert config.reorg_probability == pytest.approx(1 / 24.43)
        assert config.drop_probability == 0.0
        assert config.execution_probability == 0.5
        assert config.strict_pool_equality is False
        assert config.record_log is True

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration keys.*typo_key"):
            config_from_mapping({"typo_key": 1})

    @pytest.mark.parametrize(
        "field,value,match",
        [
            ("mode", "stress", "mode must be one of"),
            ("clock", "lamport", "clock must be one of"),
            ("source", "ipc", "source must be one of"),
            ("strategy", "eager", "unknown strategy"),
            ("transactions", 0, "transactions must be an integer >= 1"),
            ("transactions", True, "transactions must be an integer"),
            ("seed", -1, "seed must be an integer >= 0"),
            ("confirmations", 0, "confirmations must be an integer >= 1"),
            ("ticks", 0, "ticks must be an integer >= 1"),
            ("wait_window", -0.5, "wait_window must be a non-negative number"),
            ("reorg_probability", 1.5, "probability in"),
            ("drop_probability", -0.1, "probability in"),
            ("execution_probability", "half", "probability in"),
        ],
    )
    def test_invalid_values_rejected(self, field, value, match):
        with pytest.raises(ConfigError, match=match):
            config_from_mapping({field: value})

    def test_http_source_requires_url(self):
        with pytest.raises(ConfigError, match="requires source_url"):
            config_from_mapping({"source": "http"})
        config = config_from_mapping({"source": "http", "source_url": "http://x/state"})
        assert config.source_url == "http://x/state"

    def test_file_source_requires_path(self):
        with pytest.raises(ConfigError, match="requires source_path"):
            config_from_mapping({"source": "file"})

    def test_plan_parsing(self):
        config = config_from_mapping({"plan": ["created", "pending", "dropped"]})
        assert config.plan == (
            LifecycleState.CREATED,
            LifecycleState.PENDING,
            LifecycleState.DROPPED,
        )

    @pytest.mark.parametrize(
        "plan,match",
        [
            ("created", "plan must be a list"),
            (["created", "teleported"], "unknown lifecycle state"),
            (["pending", "executed"], "must start at created"),
            (["created", "finalized"], "invalid transition"),
        ],
    )
    def test_bad_plans_rejected(self, plan, match):
        with pytest.raises(ConfigError, match=match):
            config_from_mapping({"plan": plan})

    def test_bug_flags_parsed_and_validated(self):
        config = config_from_mapping({"bug_flags": {"type1_premature_update": True}})
        assert config.bug_flags.type1_premature_update
        with pytest.raises(ConfigError, match="unknown bug flags"):
            config_from_mapping({"bug_flags": {"type9": True}})

    def test_field_rules_parsed_and_validated(self):
        config = config_from_mapping(
            {"field_rules": [{"path": "meta.*", "action": "exclude"}]}
        )
        assert config.field_rules is not None
        with pytest.raises(ConfigError):
            config_from_mapping({"field_rules": [{"path": "x", "action": "obliterate"}]})


class TestLoadConfig:
    def test_yaml_roundtrip(self, tmp_path):
        path = tmp_path / "session.yaml"
        path.write_text(
            "mode: soak\nseed: 42\ntransactions: 3\nticks: 50\n"
            "strategy: aggressive_updating\nbug_flags:\n  type2_no_rollback: true\n",
            encoding="utf-8",
        )
        config = load_config(path)
        assert config.mode == "soak"
        assert config.seed == 42
        assert config.strategy is SyncStrategy.AGGRESSIVE_UPDATING
        assert config.bug_flags.type2_no_rollback

    def test_empty_file_means_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_config(path) == config_from_mapping({})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("mode: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path)


class TestTraverseSessions:
    def test_correct_passive_dapp_is_clean(self):
        report = run_in_memory(transactions=6, record_log=False)
        counts = report.counts()
        assert counts == {
            "transactions": 6,
            "assertion_1": {"pass": 6, "violation": 0, "inconclusive": 0},
            "assertion_2": {"pass": 6, "violation": 0, "inconclusive": 0},
            "violations_total": 0,
            "inconclusive_total": 0,
        }
        assert not report.has_violations

    @pytest.mark.parametrize(
        "strategy", ["periodic_polling", "passive_waiting", "aggressive_updating"]
    )
    def test_every_correct_strategy_is_clean(self, strategy):
        report = run_in_memory(transactions=6, strategy=strategy, record_log=False)
        assert report.counts()["violations_total"] == 0

    def test_premature_update_bug_trips_assertion_1_on_every_tx(self):
        report = run_in_memory(
            transactions=10,
            bug_flags={"type1_premature_update": True},
            record_log=False,
        )
        counts = report.counts()
        assert counts["assertion_1"] == {"pass": 0, "violation": 10, "inconclusive": 0}
        assert counts["assertion_2"] == {"pass": 10, "violation": 0, "inconclusive": 0}
        assert report.has_violations

    def test_missing_rollback_bug_trips_assertion_2_on_every_tx(self):
        report = run_in_memory(
            transactions=10,
            strategy="aggressive_updating",
            bug_flags={"type2_no_rollback": True},
            record_log=False,
        )
        counts = report.counts()
        assert counts["assertion_1"] == {"pass": 10, "violation": 0, "inconclusive": 0}
        assert counts["assertion_2"] == {"pass": 0, "violation": 10, "inconclusive": 0}

    def test_volatile_journal_bug_also_trips_assertion_2(self):
        report = run_in_memory(
            transactions=10,
            strategy="aggressive_updating",
            bug_flags={"rollback_cleared_on_restart": True},
            record_log=False,
        )
        assert report.counts()["assertion_2"]["violation"] == 10

    def test_functionality_rotation(self):
        report = run_in_memory(transactions=6, record_log=False)
        assert [o.tag for o in report.outcomes] == [
            "create", "update", "withdraw", "create", "update", "withdraw",
        ]

    def test_every_traversal_is_complete_and_final(self):
        report = run_in_memory(transactions=6, record_log=False)
        for outcome in report.outcomes:
            assert outcome.complete
            assert outcome.lifecycle[0] == "created"
            assert outcome.lifecycle[-1] == "finalized"

    def test_drop_plan_leaves_both_assertions_inconclusive(self):
        report = run_in_memory(
            transactions=3,
            plan=["created", "pending", "dropped"],
            record_log=False,
        )
        counts = report.counts()
        assert counts["assertion_1"]["inconclusive"] == 3
        assert counts["assertion_2"]["inconclusive"] == 3
        assert counts["inconclusive_total"] == 3
        assert not report.has_violations


class TestSoakSessions:
    def test_soak_session_accounts_for_every_transaction(self):
        report = run_in_memory(
            mode="soak",
            transactions=5,
            ticks=400,
            seed=11,
            drop_probability=0.01,
            record_log=False,
        )
        counts = report.counts()
        assert counts["transactions"] == 5
        for name in ("assertion_1", "assertion_2"):
            assert sum(counts[name].values()) == 5

    def test_soak_lifecycles_are_legal_walks(self):
        report = run_in_memory(
            mode="soak", transactions=5, ticks=400, seed=11, record_log=False
        )
        for outcome in report.outcomes:
            states = [LifecycleState(name) for name in outcome.lifecycle]
            assert states[0] is LifecycleState.CREATED
            for edge in zip(states, states[1:]):
                assert edge in VALID_EDGES

    def test_soak_with_correct_dapp_raises_no_type1(self):
        # Assertion 1 stays clean even under overlap: a correct DApp never
        # shows the finalized value while its tx still sits in the pool.
        report = run_in_memory(
            mode="soak", transactions=5, ticks=400, seed=11, record_log=False
        )
        assert report.counts()["assertion_1"]["violation"] == 0


class TestDeterminism:
    def test_same_config_same_bytes(self):
        kwargs = dict(
            mode="soak", transactions=6, ticks=300, seed=1234,
            drop_probability=0.02, record_log=False,
        )
        first = run_in_memory(**kwargs)
        second = run_in_memory(**kwargs)
        assert report_to_json_bytes(first, ALL_TAGS) == report_to_json_bytes(second, ALL_TAGS)

    def test_different_seed_different_walks(self):
        outcomes = {}
        for seed in (1, 2):
            report = run_in_memory(
                mode="soak", transactions=6, ticks=300, seed=seed,
                drop_probability=0.02, record_log=False,
            )
            outcomes[seed] = [o.lifecycle for o in report.outcomes]
        assert outcomes[1] != outcomes[2]


class TestRunSessionOutputs:
    def test_writes_report_and_log(self, tmp_path):
        out = tmp_path / "out"
        report = run_session(make_config(transactions=3), out_dir=out)
        assert (out / "report.json").exists()
        assert (out / "report.txt").exists()
        assert (out / "session.log.jsonl").exists()
        mapping = json.loads((out / "report.json").read_text("utf-8"))
        assert mapping["format"] == "txforge-report/1"
        assert mapping["counts"]["transactions"] == 3
        assert (out / "report.json").read_bytes() == report_to_json_bytes(report, ALL_TAGS)
        header = json.loads((out / "session.log.jsonl").read_text("utf-8").splitlines()[0])
        assert header["format"] == "txforge-log/1"

    def test_record_log_can_be_disabled(self, tmp_path):
        out = tmp_path / "out"
        run_session(make_config(transactions=1, record_log=False), out_dir=out)
        assert (out / "report.json").exists()
        assert not (out / "session.log.jsonl").exists()

    def test_report_declares_all_functionalities(self, tmp_path):
        out = tmp_path / "out"
        run_session(make_config(transactions=1), out_dir=out)
        mapping = json.loads((out / "report.json").read_text("utf-8"))
        assert mapping["coverage"]["declared"] == ["create", "update", "withdraw"]
        assert mapping["coverage"]["exercised"] == ["create"]
        assert mapping["coverage"]["ratio"] == pytest.approx(1 / 3, abs=1e-4)


class TestReplay:
    def _session_dir(self, tmp_path, **overrides) -> Path:
        out = tmp_path / "session"
        run_session(make_config(transactions=6, **overrides), out_dir=out)
        return out

    def test_replay_reproduces_the_report_byte_for_byte(self, tmp_path):
        out = self._session_dir(tmp_path)
        replayed = replay_session(out / "session.log.jsonl")
        assert report_to_json_bytes(replayed) == (out / "report.json").read_bytes()

    def test_replay_reproduces_violations(self, tmp_path):
        out = self._session_dir(tmp_path, bug_flags={"type1_premature_update": True})
        replayed = replay_session(out / "session.log.jsonl")
        counts = replayed.counts()
        assert counts["assertion_1"]["violation"] == 6
        assert report_to_json_bytes(replayed) == (out / "report.json").read_bytes()

    def test_replay_checks_soak_logs_too(self, tmp_path):
        out = tmp_path / "soak"
        run_session(
            make_config(mode="soak", transactions=4, ticks=300, seed=7), out_dir=out
        )
        replayed = replay_session(out / "session.log.jsonl")
        original = json.loads((out / "report.json").read_text("utf-8"))
        assert replayed.counts() == original["counts"]

    def test_truncated_log_is_rejected(self, tmp_path):
        out = self._session_dir(tmp_path)
        log = out / "session.log.jsonl"
        lines = log.read_text("utf-8").splitlines()
        log.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        with pytest.raises(ReplayError, match="truncated"):
            replay_session(log)

    def test_unparseable_line_is_rejected(self, tmp_path):
        out = self._session_dir(tmp_path)
        log = out / "session.log.jsonl"
        lines = log.read_text("utf-8").splitlines()
        lines[2] = lines[2][:-10]
        log.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ReplayError, match="not valid JSON"):
            replay_session(log)

    def test_tampered_payload_fails_the_hash_check(self, tmp_path):
        out = self._session_dir(tmp_path)
        log = out / "session.log.jsonl"
        lines = log.read_text("utf-8").splitlines()
        for i, line in enumerate(lines):
            record = json.loads(line)
            if record.get("type") == "tx":
                record["payload"][0]["value"] = "forged"
                lines[i] = json.dumps(record, sort_keys=True)
                break
        log.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ReplayError, match="recomputed hash differs"):
            replay_session(log)

    def test_corrupt_snapshot_document_is_rejected(self, tmp_path):
        out = self._session_dir(tmp_path)
        log = out / "session.log.jsonl"
        lines = log.read_text("utf-8").splitlines()
        for i, line in enumerate(lines):
            record = json.loads(line)
            if record.get("type") == "snapshot":
                record["document_json"] = "]["
                lines[i] = json.dumps(record, sort_keys=True)
                break
        log.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ReplayError, match="corrupt"):
            replay_session(log)

    def test_illegal_logged_transitions_are_rejected(self, tmp_path):
        out = self._session_dir(tmp_path)
        log = out / "session.log.jsonl"
        lines = log.read_text("utf-8").splitlines()
        for i, line in enumerate(lines):
            record = json.loads(line)
            if record.get("type") == "trace_end":
                record["steps"] = [
                    {"state": "created", "visit": 1},
                    {"state": "finalized", "visit": 1},
                ]
                lines[i] = json.dumps(record, sort_keys=True)
                break
        log.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ReplayError, match="not performable"):
            replay_session(log)

    def test_wrong_format_header_is_rejected(self, tmp_path):
        log = tmp_path / "other.jsonl"
        log.write_text('{"format": "txforge-log/999", "session": {}}\n', encoding="utf-8")
        with pytest.raises(ReplayError, match="unsupported log format"):
            replay_session(log)

    def test_empty_and_missing_logs_are_rejected(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        with pytest.raises(ReplayError, match="log is empty"):
            replay_session(empty)
        with pytest.raises(ReplayError, match="cannot read log"):
            replay_session(tmp_path / "missing.jsonl")

    def test_end_count_mismatch_is_rejected(self, tmp_path):
        out = self._session_dir(tmp_path)
        log = out / "session.log.jsonl"
        lines = log.read_text("utf-8").splitlines()
        end = json.loads(lines[-1])
        end["transactions"] = 99
        lines[-1] = json.dumps(end, sort_keys=True)
        log.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ReplayError, match="end record says 99"):
            replay_session(log)


class TestReportRendering:
    def test_mapping_shape_for_a_buggy_session(self):
        report = run_in_memory(
            transactions=6,
            bug_flags={"type1_premature_update": True},
            record_log=False,
        )
        mapping = report_to_mapping(report, ALL_TAGS)
        assert mapping["counts"]["violations_total"] == 6
        assert [g["group_id"] for g in mapping["issue_groups"]] == [
            "create:type-1", "update:type-1", "withdraw:type-1",
        ]
        assert all(g["count"] == 2 for g in mapping["issue_groups"])
        tx_entry = mapping["transactions"][0]
        assert tx_entry["assertion_1"]["verdict"] == "violation"
        assert tx_entry["assertion_1"]["evidence"]["stage_a"] == "created:1"
        assert tx_entry["assertion_2"]["verdict"] == "pass"

    def test_text_summary_contains_the_verdict_table(self):
        report = run_in_memory(transactions=6, record_log=False)
        text = render_text(report_to_mapping(report, ALL_TAGS))
        assert "session mode=traverse seed=0 strategy=passive_waiting transactions=6" in text
        assert "assertion_1        6           0             0" in text
        assert "coverage: 3/3 functionalities exercised (ratio 1.0)" in text
        assert "no synchronization violations detected" in text

    def test_text_summary_lists_issue_groups(self):
        report = run_in_memory(
            transactions=3,
            strategy="aggressive_updating",
            bug_flags={"type2_no_rollback": True},
            record_log=False,
        )
        text = render_text(report_to_mapping(report, ALL_TAGS))
        assert "create:type-2" in text
        assert "no synchronization violations detected" not in text


class TestCli:
    def test_clean_run_exits_zero(self, tmp_path, capsys):
        code = main(["run", "--out", str(tmp_path / "out")])
        assert code == 0
        out = capsys.readouterr().out
        assert "report written to" in out
        assert (tmp_path / "out" / "report.json").exists()

    def test_violations_exit_two(self, tmp_path):
        config = tmp_path / "bug.yaml"
        config.write_text(
            "transactions: 2\nbug_flags:\n  type1_premature_update: true\n",
            encoding="utf-8",
        )
        code = main(["run", "--config", str(config), "--out", str(tmp_path / "out")])
        assert code == 2

    def test_bad_config_exits_one(self, tmp_path, capsys):
        config = tmp_path / "bad.yaml"
        config.write_text("made_up_key: 1\n", encoding="utf-8")
        code = main(["run", "--config", str(config), "--out", str(tmp_path / "out")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_seed_priority_flag_beats_env_beats_config(self, tmp_path, monkeypatch):
        config = tmp_path / "seeded.yaml"
        config.write_text("transactions: 1\nseed: 1\n", encoding="utf-8")

        def run_and_read_seed(argv):
            out = tmp_path / "out"
            assert main(argv + ["--out", str(out)]) == 0
            return json.loads((out / "report.json").read_text("utf-8"))["session"]["seed"]

        assert run_and_read_seed(["run", "--config", str(config)]) == 1
        monkeypatch.setenv("TXFORGE_SEED", "7")
        assert run_and_read_seed(["run", "--config", str(config)]) == 7
        assert run_and_read_seed(["run", "--config", str(config), "--seed", "9"]) == 9

    def test_malformed_seed_env_exits_one(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("TXFORGE_SEED", "not-a-number")
        code = main(["run", "--out", str(tmp_path / "out")])
        assert code == 1
        assert "TXFORGE_SEED" in capsys.readouterr().err

    def test_mode_override_is_validated(self, tmp_path, capsys):
        code = main(["run", "--mode", "chaos", "--out", str(tmp_path / "out")])
        assert code == 1
        assert "unknown mode" in capsys.readouterr().err

    def test_replay_command_matches_run_exit_code(self, tmp_path):
        config = tmp_path / "bug.yaml"
        config.write_text(
            "transactions: 2\nstrategy: aggressive_updating\n"
            "bug_flags:\n  type2_no_rollback: true\n",
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert main(["run", "--config", str(config), "--out", str(out)]) == 2
        assert main(["replay", "--log", str(out / "session.log.jsonl")]) == 2

    def test_replay_of_garbage_exits_one(self, tmp_path, capsys):
        path = tmp_path / "junk.jsonl"
        path.write_text("not json\n", encoding="utf-8")
        assert main(["replay", "--log", str(path)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_report_command_rerenders_and_propagates_exit(self, tmp_path, capsys):
        config = tmp_path / "bug.yaml"
        config.write_text(
            "transactions: 2\nbug_flags:\n  type1_premature_update: true\n",
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert main(["run", "--config", str(config), "--out", str(out)]) == 2
        capsys.readouterr()
        assert main(["report", "--in", str(out)]) == 2
        assert "assertion_1" in capsys.readouterr().out

    def test_report_command_without_report_exits_one(self, tmp_path, capsys):
        assert main(["report", "--in", str(tmp_path)]) == 1
        assert "no report.json" in capsys.readouterr().err
