"""Harness-layer tests: configuration, artifact writers, the command tool.

A module-scoped workspace runs all seven commands once with a small
configuration; the artifact assertions share it. Error-path tests run
against their own directories.
"""

import csv
import json
import subprocess

import pytest

from edgehealth import cli
from edgehealth.config import (
    ConfigError,
    config_hash,
    default_config,
    load_config,
)
from edgehealth.features import read_features_csv
from edgehealth.output import read_header, write_csv, write_summary
from edgehealth.rl import load_qtable

SMALL_CFG = """\
[signals]
n_windows = 6

[pool]
n_windows = 40

[amser]
n_seeds = 2
n_windows = 6

[rl]
episodes = 10
user_counts = [1, 2]
eval_seeds = [100]

[calibrate]
max_passes = 2
"""

ALL_COMMANDS = ("generate", "train-pool", "adapt", "simulate",
                "train-rl", "calibrate", "report")


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.toml"
    path.write_text(SMALL_CFG)
    return path


@pytest.fixture(scope="module")
def workspace(cfg_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("ws")
    for cmd in ALL_COMMANDS:
        code = run(cmd, "--config", str(cfg_path), "--out", str(out))
        assert code == 0, "command %s failed" % cmd
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        return list(csv.DictReader(fh, fieldnames=line.strip().split(",")))


class TestConfig:
    def test_defaults_cover_every_section(self):
        cfg = default_config()
        for section in ("run", "signals", "featurize", "pool", "amser",
                        "edgesim", "rl", "calibrate"):
            assert section in cfg.data
        assert cfg.data["run"]["seed"] == 0
        assert len(cfg.sha) == 12

    def test_unknown_key_is_named(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[pool]\nfamly = 'knn'\n")
        with pytest.raises(ConfigError, match="pool.famly"):
            load_config(path)

    def test_unknown_section_is_named(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[pools]\nfamily = 'knn'\n")
        with pytest.raises(ConfigError, match=r"\[pools\]"):
            load_config(path)

    def test_type_mismatch_names_dotted_path(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text("[run]\nseed = 'zero'\n")
        with pytest.raises(ConfigError, match="run.seed"):
            load_config(path)

    def test_include_overlays_then_including_file_wins(self, tmp_path):
        (tmp_path / "base.toml").write_text(
            "[rl]\nepisodes = 7\n\n[pool]\nfamily = 'centroid'\n"
        )
        child = tmp_path / "child.toml"
        child.write_text(
            "include = ['base.toml']\n\n[pool]\nfamily = 'ensemble'\n"
        )
        cfg = load_config(child)
        assert cfg["rl"]["episodes"] == 7
        assert cfg["pool"]["family"] == "ensemble"
        assert cfg["signals"]["n_windows"] == 200  # untouched default

    def test_circular_include_detected(self, tmp_path):
        (tmp_path / "a.toml").write_text("include = ['b.toml']\n")
        (tmp_path / "b.toml").write_text("include = ['a.toml']\n")
        with pytest.raises(ConfigError, match="circular include"):
            load_config(tmp_path / "a.toml")

    def test_missing_file_and_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("[run\nseed = 1\n")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_hash_ignores_out_dir_and_jobs(self, cfg_path):
        a = load_config(cfg_path)
        b = load_config(cfg_path, out_dir="/elsewhere", jobs=8)
        c = load_config(cfg_path, seed=1)
        assert a.sha == b.sha
        assert a.sha != c.sha

    def test_hash_is_stable_across_processes(self):
        data = default_config().data
        assert config_hash(data) == config_hash(json.loads(json.dumps(data)))

    def test_override_validation(self, cfg_path):
        with pytest.raises(ConfigError, match="run.seed"):
            load_config(cfg_path, seed=-1)
        with pytest.raises(ConfigError, match="run.jobs"):
            load_config(cfg_path, jobs=0)


class TestOutput:
    def test_csv_header_round_trips(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ("a", "b"), [(1, 2.5)], config_sha="c0ffee", seed=3)
        meta = read_header(path)
        assert meta["config"] == "c0ffee"
        assert meta["seed"] == "3"
        assert read_rows(path) == [{"a": "1", "b": "2.5"}]

    def test_dict_rows_must_cover_fields(self, tmp_path):
        with pytest.raises(ValueError, match="lacks fields"):
            write_csv(tmp_path / "t.csv", ("a", "b"), [{"a": 1}],
                      config_sha="x", seed=0)

    def test_sequence_rows_must_match_width(self, tmp_path):
        with pytest.raises(ValueError, match="cells"):
            write_csv(tmp_path / "t.csv", ("a", "b"), [(1,)],
                      config_sha="x", seed=0)

    def test_summary_carries_provenance(self, tmp_path):
        path = tmp_path / "summary.json"
        write_summary(path, {"n": 4}, config_sha="c0ffee", seed=9)
        payload = json.loads(path.read_text())
        assert payload["tool"] == "edgehealth"
        assert payload["config"] == "c0ffee"
        assert payload["seed"] == 9
        assert payload["metrics"] == {"n": 4}

    def test_plain_csv_is_rejected_by_header_reader(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_header(path)


class TestExitCodes:
    def test_unknown_config_key_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[pool]\nfamly = 'knn'\n")
        assert run("train-pool", "--config", str(bad),
                   "--out", str(tmp_path)) == 1
        assert "pool.famly" in capsys.readouterr().err

    def test_unknown_policy_lists_valid_ones(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[edgesim]\npolicy = 'fog'\n")
        assert run("simulate", "--config", str(bad),
                   "--out", str(tmp_path)) == 1
        err = capsys.readouterr().err
        for name in ("local", "edge", "cloud", "partial"):
            assert name in err

    def test_missing_pool_names_its_producer(self, cfg_path, tmp_path,
                                             capsys):
        assert run("adapt", "--config", str(cfg_path),
                   "--out", str(tmp_path)) == 2
        assert "edgehealth train-pool" in capsys.readouterr().err

    def test_report_names_first_missing_stage(self, cfg_path, tmp_path,
                                              capsys):
        assert run("report", "--config", str(cfg_path),
                   "--out", str(tmp_path)) == 2
        assert "edgehealth calibrate" in capsys.readouterr().err

    def test_no_command_is_a_usage_error(self, capsys):
        assert run() == 1
        assert "command" in capsys.readouterr().err

    def test_bad_flag_values(self, cfg_path, tmp_path, capsys):
        assert run("generate", "--config", str(cfg_path),
                   "--out", str(tmp_path), "--jobs", "0") == 1
        assert run("generate", "--config", str(cfg_path),
                   "--out", str(tmp_path), "--seed", "-1") == 1

    def test_console_script_reports_version(self):
        proc = subprocess.run(["edgehealth", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.startswith("edgehealth ")


class TestWorkspace:
    def test_every_csv_starts_with_one_audit_header(self, workspace):
        paths = sorted(workspace.rglob("*.csv"))
        assert len(paths) >= 15
        shas = set()
        for path in paths:
            meta = read_header(path)
            assert meta["seed"] == "0"
            shas.add(meta["config"])
        assert len(shas) == 1  # one configuration, one hash, everywhere

    def test_outcomes_schema(self, workspace):
        rows = read_rows(workspace / "adapt" / "outcomes.csv")
        assert list(rows[0]) == ["scenario", "mode", "seed", "accuracy",
                                 "latency_proxy", "speedup", "data_bytes",
                                 "reduction"]
        assert len(rows) == 4 * 2 * 2  # scenarios x modes x seeds
        for row in rows:
            assert 0.0 <= float(row["accuracy"]) <= 1.0
            assert float(row["speedup"]) >= 1.0

    def test_clean_scenario_modes_agree_per_seed(self, workspace):
        rows = read_rows(workspace / "adapt" / "outcomes.csv")
        s1 = [r for r in rows if r["scenario"] == "S1"]
        by_mode = {}
        for r in s1:
            by_mode.setdefault(r["mode"], []).append(
                (r["seed"], r["accuracy"], r["data_bytes"])
            )
        assert by_mode["amser"] == by_mode["baseline"]

    def test_feature_tables_round_trip(self, workspace):
        vectors = read_features_csv(workspace / "datasets" / "S1"
                                    / "features.csv")
        assert len(vectors) == 6
        assert [v.label for v in vectors] == [0, 1, 0, 1, 0, 1]
        assert vectors[0].window_id == "w0000"

    def test_exemplar_quality_tracks_the_scenario(self, workspace):
        s1 = read_rows(workspace / "datasets" / "S1" / "exemplar.csv")
        assert {r["quality"] for r in s1} == {"Reliable"}
        s3 = read_rows(workspace / "datasets" / "S3" / "exemplar.csv")
        by_modality = {}
        for r in s3:
            by_modality.setdefault(r["modality"], set()).add(r["quality"])
        assert by_modality["ecg"] == {"Unreliable"}
        assert by_modality["eda"] == {"Reliable"}

    def test_pool_manifest_is_closed_and_stamped(self, workspace):
        manifest = json.loads(
            (workspace / "pool" / "manifest.json").read_text()
        )
        assert len(manifest["models"]) == 26
        header = read_header(workspace / "adapt" / "outcomes.csv")
        assert manifest["meta"]["config"] == header["config"]

    def test_qtable_reloads_with_audit_header_present(self, workspace):
        table = load_qtable(workspace / "rl" / "qtable.csv")
        assert len(table) == 135
        assert table.n_actions == 6

    def test_sweep_covers_statics_plus_learned(self, workspace):
        rows = read_rows(workspace / "rl" / "sweep.csv")
        policies = {r["policy"] for r in rows}
        assert "rl" in policies
        assert len(policies) == 7  # six static placements plus the agent
        assert {r["users"] for r in rows} == {"1", "2"}

    def test_report_tables_have_expected_shapes(self, workspace):
        rep = workspace / "report"
        assert len(read_rows(rep / "fig8.csv")) == 54
        assert len(read_rows(rep / "fig13.csv")) == 8
        fig14 = read_rows(rep / "fig14.csv")
        assert [r["scenario"] for r in fig14] == ["S1", "S2", "S3", "S4"]
        assert float(fig14[0]["speedup"]) == 1.0
        assert float(fig14[0]["data_reduction"]) == 1.0
        assert len(read_rows(rep / "rl_curve.csv")) == 10
        overlay = read_rows(rep / "signal_overlay.csv")
        assert len(overlay) == 4 * (6000 + 240 + 3840)

    def test_summaries_parse_everywhere(self, workspace):
        paths = sorted(workspace.rglob("summary.json"))
        assert len(paths) == 7
        for path in paths:
            payload = json.loads(path.read_text())
            assert payload["tool"] == "edgehealth"
            assert "metrics" in payload
        adapt = json.loads((workspace / "adapt" / "summary.json").read_text())
        scenarios = adapt["metrics"]["scenarios"]
        assert sorted(scenarios) == ["S1", "S2", "S3", "S4"]
        for sid in scenarios:
            assert sorted(scenarios[sid]) == ["amser", "baseline"]

    def test_reruns_are_byte_identical(self, cfg_path, workspace):
        targets = (
            workspace / "datasets" / "S2" / "features.csv",
            workspace / "adapt" / "outcomes.csv",
            workspace / "adapt" / "summary.json",
        )
        before = [p.read_bytes() for p in targets]
        assert run("generate", "--config", str(cfg_path),
                   "--out", str(workspace)) == 0
        assert run("adapt", "--config", str(cfg_path),
                   "--out", str(workspace), "--jobs", "2") == 0
        after = [p.read_bytes() for p in targets]
        assert before == after

    def test_seed_flag_changes_data_and_header(self, cfg_path, workspace,
                                               tmp_path):
        assert run("generate", "--config", str(cfg_path),
                   "--out", str(tmp_path), "--seed", "1") == 0
        reseeded = tmp_path / "datasets" / "S1" / "features.csv"
        meta = read_header(reseeded)
        assert meta["seed"] == "1"
        base = workspace / "datasets" / "S1" / "features.csv"
        assert reseeded.read_bytes() != base.read_bytes()

    def test_env_var_supplies_out_dir(self, cfg_path, tmp_path, monkeypatch):
        monkeypatch.setenv("EDGEHEALTH_OUT", str(tmp_path / "envout"))
        assert run("simulate", "--config", str(cfg_path)) == 0
        assert (tmp_path / "envout" / "sim" / "trace.csv").exists()
