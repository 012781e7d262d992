import importlib.util
import os
from pathlib import Path

import pytest

from app.core import config as config_module
from app.core.config import PipelineConfig, load_config, read_config_file
from app.core.errors import ConfigError
from app.models import ALL_NETWORKS, FeatureKind, Network


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "pipeline.cfg"
    path.write_text("# cohort run\nSEED=6\nfolds = 5\nnetworks=cerebellum, occipital\n")
    return path


def test_defaults():
    config = PipelineConfig()
    assert (config.folds, config.trees, config.seed) == (10, 400, 42)
    assert (config.rr, config.l_min, config.v_min) == (0.1, 2, 2)
    assert (config.shrinkage, config.edge_threshold, config.top_k) == (0.1, 0.2, 10)
    assert config.tau == "auto"
    assert config.networks == list(ALL_NETWORKS)


def test_file_keys_are_case_insensitive(config_file):
    assert read_config_file(config_file)["seed"] == "6"


def test_precedence_override_file_env(config_file, monkeypatch):
    monkeypatch.setenv("MSFMRI_SEED", "5")
    monkeypatch.setenv("MSFMRI_TREES", "50")
    assert load_config().seed == 5

    config = load_config(config_file)
    assert config.seed == 6
    assert config.trees == 50
    assert config.folds == 5
    assert config.networks == [Network.CEREBELLUM, Network.OCCIPITAL]

    assert load_config(config_file, {"seed": 7, "folds": None}).seed == 7
    assert load_config(config_file, {"seed": 7, "folds": None}).folds == 5


def test_feature_aliases():
    config = load_config(overrides={"feature_kinds": "eigvec, rqa"})
    assert config.feature_kinds == [FeatureKind.LEADING_EIGENVECTOR, FeatureKind.RQA]
    config = PipelineConfig(feature_kinds=["eigval"])
    assert config.feature_kinds == [FeatureKind.EIGENVALUES]


@pytest.mark.parametrize("value, expected", [("5", 5), ("auto", "auto"), (3, 3)])
def test_tau_forms(value, expected):
    assert load_config(overrides={"tau": value}).tau == expected


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("colour=blue\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.context["fields"] == ["colour"]


@pytest.mark.parametrize(
    "field, value",
    [("rr", 1.5), ("folds", 1), ("d_max", 2), ("shrinkage", 1.0), ("trees", 0), ("tau", "soon"), ("networks", "visual")],
)
def test_invalid_values(field, value):
    with pytest.raises(ConfigError) as info:
        load_config(overrides={field: value})
    assert any(f.startswith(field) for f in info.value.context["fields"])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_config_hash_tracks_results_only(tmp_path):
    base = PipelineConfig()
    assert base.config_hash() == PipelineConfig(run_dir=tmp_path / "elsewhere", jobs=4).config_hash()
    assert base.config_hash() != PipelineConfig(seed=1).config_hash()
    assert base.config_hash() != PipelineConfig(rr=0.05).config_hash()


def test_dotenv_is_read_without_touching_the_environment(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("MSFMRI_SEED", raising=False)
    monkeypatch.delenv("RUNS_ROOT", raising=False)
    (tmp_path / ".env").write_text("MSFMRI_SEED=9\nRUNS_ROOT=/data/runs\n")

    spec = importlib.util.spec_from_file_location("fresh_config", config_module.__file__)
    fresh = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(fresh)

    assert "MSFMRI_SEED" not in os.environ
    assert "RUNS_ROOT" not in os.environ
    assert fresh.settings.RUNS_ROOT == Path("/data/runs")
    assert PipelineConfig().seed == 9
    assert load_config(overrides={"seed": 3}).seed == 3

    monkeypatch.setenv("MSFMRI_SEED", "4")
    assert PipelineConfig().seed == 4
