import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError
from app.models import ALL_NETWORKS, FeatureKind, Network


class Settings(BaseSettings):
    RUNS_ROOT: Path = Path("./runs")
    API_PREFIX: str = "/api"

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")


settings = Settings()


LIST_FIELDS = ("networks", "feature_kinds")


def split_items(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class PipelineConfig(BaseSettings):
    """Every tunable of the pipeline, with the module defaults."""

    # paths
    data_root: Path = Path(".")
    manifest: Path = Path("manifest.csv")
    run_dir: Path = Path("./runs/latest")
    voxel_root: Optional[Path] = None

    networks: List[Network] = list(ALL_NETWORKS)
    feature_kinds: List[FeatureKind] = list(FeatureKind)

    # reho
    use_reho: bool = False
    reho_neighbors_only: bool = False

    # embedding
    tau: Union[Literal["auto"], int] = "auto"
    max_lag: int = 20
    d_max: int = 20
    epsilon: float = 0.05
    theiler: int = 0
    delay_method: Literal["autocorr", "mutual_info"] = "autocorr"
    force_k: Optional[int] = None

    # recurrence
    rr: float = 0.1
    l_min: int = 2
    v_min: int = 2
    render: bool = True
    render_size: int = 224
    render_png: bool = False

    # connectivity
    shrinkage: float = 0.1
    edge_threshold: float = 0.2
    signed: bool = False
    top_k: int = 10
    graph_method: Literal["partial", "pearson"] = "partial"

    # classify
    folds: int = 10
    trees: int = 400
    seed: int = 42
    max_depth: Optional[int] = None
    min_leaf: int = 1
    per_fold_mean: bool = False

    jobs: int = 1

    # unknown keys are rejected by load_config
    model_config = SettingsConfigDict(env_prefix="MSFMRI_", env_file=".env", extra="ignore")

    @field_validator(*LIST_FIELDS, mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        return split_items(value)

    @field_validator("feature_kinds", mode="before")
    @classmethod
    def _feature_aliases(cls, value: Any) -> Any:
        value = split_items(value)
        if isinstance(value, (list, tuple)):
            return [FeatureKind.parse(v) if isinstance(v, str) else v for v in value]
        return value

    @field_validator("tau", mode="before")
    @classmethod
    def _tau_mode(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lstrip("-").isdigit():
            return int(value)
        return value

    @field_validator("tau", "max_lag", "d_max", "l_min", "v_min", "render_size", "top_k", "trees", "min_leaf", "jobs")
    @classmethod
    def _positive(cls, value: Any, info) -> Any:
        if isinstance(value, int) and value < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return value

    @field_validator("d_max")
    @classmethod
    def _d_max(cls, value: int) -> int:
        if value < 3:
            raise ValueError("d_max must be >= 3")
        return value

    @field_validator("folds")
    @classmethod
    def _folds(cls, value: int) -> int:
        if value < 2:
            raise ValueError("folds must be >= 2")
        return value

    @field_validator("theiler")
    @classmethod
    def _theiler(cls, value: int) -> int:
        if value < 0:
            raise ValueError("theiler must be >= 0")
        return value

    @field_validator("epsilon")
    @classmethod
    def _epsilon(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("epsilon must be > 0")
        return value

    @field_validator("rr")
    @classmethod
    def _rate(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("rr must lie in (0, 1)")
        return value

    @field_validator("shrinkage")
    @classmethod
    def _shrinkage(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("shrinkage must lie in [0, 1)")
        return value

    @field_validator("edge_threshold")
    @classmethod
    def _edge_threshold(cls, value: float) -> float:
        if value < 0:
            raise ValueError("edge_threshold must be >= 0")
        return value

    @field_validator("max_depth", "force_k")
    @classmethod
    def _optional_positive(cls, value: Optional[int], info) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return value

    def config_hash(self) -> str:
        """Hash of every setting that influences results (run_dir excluded)."""
        payload = self.model_dump(mode="json", exclude={"run_dir", "jobs"})
        encoded = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(encoded).hexdigest()


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """Parse a flat key=value file; keys are matched case-insensitively."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", path=str(path))
    return {key.strip().lower(): value for key, value in dotenv_values(path).items()}


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """Build the pipeline config; CLI overrides beat the file, which beats env."""
    values: Dict[str, Any] = {}
    if path is not None:
        values.update({k: v for k, v in read_config_file(path).items() if v is not None})
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - set(PipelineConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown pipeline config key(s): {', '.join(unknown)}", fields=unknown)
    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        fields = [".".join(str(p) for p in err["loc"]) for err in e.errors()]
        raise ConfigError(f"invalid pipeline config: {e.error_count()} error(s)", fields=fields) from e
