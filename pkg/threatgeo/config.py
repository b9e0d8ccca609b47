"""
Run configuration: one JSON file, validated up front.

Relative paths resolve against the config file's directory. Secrets never
live here; the backend and scan API read their keys from the environment.
"""

import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .backends import DEFAULT_MODEL_ID, BackendConfig
from .errors import ConfigError
from .evaluate import GroundTruth
from .geopolitics import Bucket
from .ingest import SourceDescriptor, SourceFormat, SourceKind
from .ioc import Averaging
from .runmeta import RunMeta
from .scan_client import DEFAULT_STATIC_ML

logger = logging.getLogger(__name__)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SourceSettings(_Strict):
    source_id: str = Field(min_length=1)
    kind: SourceKind
    format: SourceFormat
    path: str

    def descriptor(self) -> SourceDescriptor:
        return SourceDescriptor(self.source_id, self.kind, self.path, self.format)


class BackendSettings(_Strict):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    provider: Literal["gemini", "mock"] = "gemini"
    mock_table: Optional[str] = None
    api_key_env: str = "GEMINI_API_KEY"
    model_id: str = DEFAULT_MODEL_ID
    temperature: float = Field(0.1, ge=0.0, le=1.0)
    inter_call_delay: float = Field(7.0, ge=0.0)
    max_retries: int = Field(2, ge=0)

    def backend_config(self) -> BackendConfig:
        return BackendConfig(
            model_id=self.model_id,
            temperature=self.temperature,
            inter_call_delay=self.inter_call_delay,
            max_retries=self.max_retries,
        )


class GroundTruthSettings(_Strict):
    source_id: Optional[str] = None
    categories: Dict[str, bool]
    default: Optional[bool] = None
    separator: str = ";"

    def ground_truth(self) -> GroundTruth:
        return GroundTruth(self.categories, self.source_id, self.default, self.separator)


class DyadSettings(_Strict):
    origin: str
    target: str
    bucket: Bucket = Bucket.YEAR


class CategoricalSettings(_Strict):
    source_id: str
    field: str
    k: int = Field(10, ge=1)


class IocSettings(_Strict):
    family_index: str
    # directory of recorded `<hash>.json` responses; live API when unset
    scan_fixtures: Optional[str] = None
    static_ml: List[str] = Field(default_factory=lambda: sorted(DEFAULT_STATIC_ML))
    max_per_family: Optional[int] = Field(None, ge=1)
    miss_on_unsupported: bool = False
    averaging: Averaging = Averaging.MICRO
    requests_per_minute: float = Field(4.0, gt=0)
    max_workers: int = Field(4, ge=1)
    api_key_env: str = "VT_API_KEY"


class RunConfig(_Strict):
    seed: int = 0
    output_dir: str = "out"
    sources: List[SourceSettings] = Field(default_factory=list)
    schema_path: Optional[str] = None
    backend: BackendSettings = Field(default_factory=BackendSettings)
    lexicon_path: Optional[str] = None
    roster_path: Optional[str] = None
    aliases_path: Optional[str] = None
    regions_path: Optional[str] = None
    cache_dir: str = "cache"
    ground_truth: Optional[GroundTruthSettings] = None
    eval_n_per_class: int = Field(100, ge=0)
    top_k: int = Field(5, ge=1)
    dyads: List[DyadSettings] = Field(default_factory=list)
    categorical: List[CategoricalSettings] = Field(default_factory=list)
    ioc: Optional[IocSettings] = None

    def run_meta(self) -> RunMeta:
        """Output location does not change the run's identity."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        return RunMeta.derive(payload, self.seed)

    def descriptors(self) -> List[SourceDescriptor]:
        return [s.descriptor() for s in self.sources]


def _problems(error: ValidationError) -> List[str]:
    out = []
    for e in error.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def _input_paths(cfg: RunConfig) -> Dict[str, Optional[str]]:
    paths: Dict[str, Optional[str]] = {
        "schema_path": cfg.schema_path,
        "lexicon_path": cfg.lexicon_path,
        "roster_path": cfg.roster_path,
        "aliases_path": cfg.aliases_path,
        "regions_path": cfg.regions_path,
        "backend.mock_table": cfg.backend.mock_table,
    }
    for i, s in enumerate(cfg.sources):
        paths[f"sources.{i}.path"] = s.path
    if cfg.ioc is not None:
        paths["ioc.family_index"] = cfg.ioc.family_index
        paths["ioc.scan_fixtures"] = cfg.ioc.scan_fixtures
    return paths


def _resolved(cfg: RunConfig, base_dir: str) -> RunConfig:
    def fix(p: Optional[str]) -> Optional[str]:
        if p is None or os.path.isabs(p) or p.startswith(("http://", "https://")):
            return p
        return os.path.normpath(os.path.join(base_dir, p))

    data = cfg.model_dump()
    for key in ("schema_path", "lexicon_path", "roster_path", "aliases_path", "regions_path", "output_dir", "cache_dir"):
        data[key] = fix(data[key])
    data["backend"]["mock_table"] = fix(data["backend"]["mock_table"])
    for s in data["sources"]:
        s["path"] = fix(s["path"])
    if data["ioc"] is not None:
        data["ioc"]["family_index"] = fix(data["ioc"]["family_index"])
        data["ioc"]["scan_fixtures"] = fix(data["ioc"]["scan_fixtures"])
    return RunConfig.model_validate(data)


def parse_config(data: Any, base_dir: str = ".") -> "LoadedConfig":
    try:
        declared = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("invalid run configuration", _problems(e)) from None
    cfg = _resolved(declared, base_dir)

    problems = []
    for name, path in _input_paths(cfg).items():
        if path and not path.startswith(("http://", "https://")) and not os.path.exists(path):
            problems.append(f"{name}: path not found: {path}")
    if cfg.backend.provider == "mock" and not cfg.backend.mock_table:
        problems.append("backend.mock_table: required when provider is 'mock'")
    ids = [s.source_id for s in cfg.sources]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        problems.append(f"sources: duplicate source_id {dupes}")
    if problems:
        raise ConfigError("invalid run configuration", problems)
    return LoadedConfig(cfg, declared.run_meta())


class LoadedConfig:
    """Resolved config plus the run identity computed from the file as written."""

    def __init__(self, config: RunConfig, meta: RunMeta):
        self.config = config
        self.meta = meta


def load_config(path: str, output_dir: Optional[str] = None) -> LoadedConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    loaded = parse_config(data, os.path.dirname(os.path.abspath(path)))
    if output_dir:
        loaded.config = loaded.config.model_copy(update={"output_dir": os.path.abspath(output_dir)})
    logger.debug("config %s: run_id=%s", path, loaded.meta.run_id)
    return loaded
