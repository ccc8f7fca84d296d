import json
import re
import subprocess
import sys

import numpy as np
import pytest

from maxmi import cli
from maxmi.config import ConfigError, RunConfig, dumps_config, load_config, parse_config
from maxmi.data import content_hash
from maxmi.discovery import ConceptSet
from maxmi.mi import MIProfile
from maxmi.plotting import plot_profile

SMALL_INI = """\
[task]
kind = reach_grasp_place
n_demos = 40

[discovery]
K = 3
max_sweeps = 2

[policy]
epochs = 2
hidden_sizes = 16,16

[run]
eval_episodes = 3
"""


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL_INI)
    return path


def run(ini, out, *args):
    return cli.main([*args, "--config", str(ini), "--out", str(out)])


def run_dir(ini, out, **overrides):
    return load_config(ini, {"run.output_dir": str(out), **overrides}).run_dir


# --- config -------------------------------------------------------------------


def test_config_round_trip():
    cfg = parse_config(SMALL_INI)
    assert parse_config(dumps_config(cfg)) == cfg
    assert cfg.discovery.K == 3 and cfg.policy.hidden_sizes == (16, 16) and cfg.n_demos == 40


def test_defaults_without_file():
    assert load_config(None) == RunConfig()


def test_hash_ignores_output_dir_but_not_settings():
    a = parse_config(SMALL_INI, {"run.output_dir": "x"})
    b = parse_config(SMALL_INI, {"run.output_dir": "y"})
    assert a.hash == b.hash and a.run_dir != b.run_dir
    assert parse_config(SMALL_INI, {"run.seed": "1"}).hash != a.hash
    assert re.fullmatch(r"[0-9a-f]{64}", a.hash)


def test_seed_reaches_every_stage():
    cfg = parse_config(SMALL_INI, {"run.seed": "17"})
    assert cfg.task.seed == cfg.discovery.seed == cfg.policy.seed == 17


def test_auto_values_and_overrides():
    cfg = parse_config(SMALL_INI, {"discovery.lambda": "auto", "policy.alpha": "0.5", "discovery.delta_t": "4"})
    assert cfg.discovery.lam is None and cfg.policy.alpha == 0.5 and cfg.discovery.delta_t == 4
    assert parse_config(SMALL_INI, {"discovery.lambda": "0.2"}).discovery.lam == 0.2


@pytest.mark.parametrize(
    "text",
    [
        "[bogus]\nx = 1\n",
        "[task]\ncolour = red\n",
        "[task]\nhorizon = ten\n",
        "[task]\nkind = juggling\n",
        "[discovery]\nK = 0\n",
        "[normalize]\nT = 16\n[discovery]\ndelta_t = 16\n",
        "[run]\neval_split = train\n",
        "no section header\n",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# --- subcommands -----------------------------------------------------------------


def test_eval_before_training_is_missing_artifact(ini, tmp_path):
    out = tmp_path / "out"
    assert run(ini, out, "eval") == cli.EXIT_MISSING
    assert not out.exists()


def test_concept_training_needs_discovery(ini, tmp_path):
    assert run(ini, tmp_path, "gen") == cli.EXIT_OK
    assert run(ini, tmp_path, "train-policy") == cli.EXIT_MISSING
    assert not (run_dir(ini, tmp_path) / "policy.txt").exists()


@pytest.mark.parametrize(
    "args",
    [["--config", "/nonexistent.ini"], ["--lambda", "abc"], ["--engine", "foo"], ["--alpha", "-1"]],
)
def test_config_errors_exit_2(args, tmp_path):
    assert cli.main(["gen", "--out", str(tmp_path), *args]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("seed", ["-1", str(2**64), "x"])
def test_bad_seed_rejected(seed, tmp_path):
    with pytest.raises(SystemExit) as err:
        cli.main(["gen", "--seed", seed, "--out", str(tmp_path)])
    assert err.value.code == cli.EXIT_CONFIG


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipeline")
    ini = base / "run.ini"
    ini.write_text(SMALL_INI)
    out = base / "runs"
    codes = {cmd: run(ini, out, cmd) for cmd in ["gen", "profile", "discover", "train-policy", "eval", "ablate", "plot"]}
    return ini, out, codes


def test_pipeline_succeeds(pipeline):
    _, _, codes = pipeline
    assert codes == dict.fromkeys(codes, cli.EXIT_OK)


def test_every_artifact_carries_the_config_hash(pipeline):
    ini, out, _ = pipeline
    cfg = load_config(ini, {"run.output_dir": str(out)})
    for name in cli.ARTIFACTS.values():
        text = (cfg.run_dir / name).read_text()
        assert cli.embedded_config_hash(text) == cfg.hash, name
    assert parse_config((cfg.run_dir / "config.ini").read_text()).hash == cfg.hash


def test_concepts_reference_the_dataset(pipeline):
    ini, out, _ = pipeline
    d = run_dir(ini, out)
    cs = ConceptSet.from_json((d / "concepts.json").read_text())
    assert cs.dataset_hash == content_hash((d / "dataset.txt").read_text())
    assert cs.trajectory_ids[0].startswith("reach_grasp_place")


def test_report_and_ablation_contents(pipeline):
    ini, out, _ = pipeline
    d = run_dir(ini, out)
    report = json.loads((d / "report.json").read_text())
    assert report["split"] == "seen" and report["n"] == 3 and set(report["subtask_rates"]) == {"grasp", "place"}
    rows = [ln for ln in (d / "ablation.csv").read_text().splitlines() if not ln.startswith("#")]
    assert rows[0].startswith("variant,lambda")
    assert [r.split(",")[0] for r in rows[1:]] == ["full", "maxmi_only", "pd_only"]


def test_rerun_is_byte_identical_and_idempotent(pipeline, tmp_path):
    ini, out, _ = pipeline
    first = run_dir(ini, out)
    other = tmp_path / "again"
    for cmd in ["gen", "profile", "discover", "train-policy", "eval", "ablate", "plot"]:
        assert run(ini, other, cmd) == cli.EXIT_OK
        # repeating a stage rewrites nothing
        assert run(ini, other, cmd) == cli.EXIT_OK
    second = run_dir(ini, other)
    for name in cli.ARTIFACTS.values():
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_conflicting_rewrite_is_refused(pipeline, tmp_path):
    ini, out, _ = pipeline
    d = run_dir(ini, tmp_path)
    assert run(ini, tmp_path, "gen") == cli.EXIT_OK
    (d / "dataset.txt").write_text((d / "dataset.txt").read_text() + "\n")
    assert run(ini, tmp_path, "gen") == cli.EXIT_RUNTIME


def test_foreign_artifact_is_refused(pipeline, tmp_path):
    ini, out, _ = pipeline
    d = run_dir(ini, tmp_path)
    d.mkdir(parents=True)
    text = (run_dir(ini, out) / "dataset.txt").read_text()
    (d / "dataset.txt").write_text(text.replace(cli.embedded_config_hash(text), "f" * 64))
    assert run(ini, tmp_path, "profile") == cli.EXIT_RUNTIME


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "maxmi", "eval", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == cli.EXIT_MISSING
    assert "missing" in proc.stderr


# --- plotting ------------------------------------------------------------------------


PROFILE = MIProfile(8, np.arange(8, 128), np.sin(np.arange(120) / 10.0))


def test_plot_profile_only():
    svg = plot_profile(PROFILE, T=128)
    assert svg.count("<polyline") == 1
    assert 'class="concept"' not in svg and 'class="event"' not in svg


def test_plot_concept_and_event_markers():
    svg = plot_profile(PROFILE, [20.5, 47.0, 99.0], {"grasp": 47.2, "place": 99.1}, T=128)
    assert svg.count('class="concept"') == 3
    assert svg.count('class="event"') == 2
    assert svg.count("<polyline") == 1


def test_plot_bytes_are_deterministic():
    assert plot_profile(PROFILE, [30.0], {"grasp": 31.0}, "t", 128) == plot_profile(PROFILE, [30.0], {"grasp": 31.0}, "t", 128)


def test_plot_rejects_malformed_csv():
    with pytest.raises(ValueError):
        MIProfile.from_csv("time,value\n1,2\n")
