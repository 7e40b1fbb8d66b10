"""Run configuration loaded from YAML, with ``${VAR}`` environment interpolation.

Example::

    seed: 7
    cache_dir: .cache/overpass
    overpass_endpoint: https://overpass-api.de/api/interpreter
    parallelism: 4
    metrics: {tau: 10, large_gap_threshold: 200}
    pipeline: {representation: topology_direction, grounding: true}
    providers:
      gpt:
        kind: chat
        endpoint: ${LLM_ENDPOINT}
        model: gpt-4o
        api_key_env: OPENAI_API_KEY
      replay:
        kind: stub
        rules: fixtures/stub.json

Unset variables are left as written so a missing key is visible in errors.
"""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .llm.pipeline import PipelineOptions
from .llm.provider import ChatProvider, Provider, ProviderConfig, StubProvider
from .metrics import MetricsConfig
from .roadnet import OVERPASS_ENDPOINT, Representation

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interpolate(value: Any, env: dict[str, str] | None = None) -> Any:
    """Recursively substitute ``${NAME}`` in string leaves."""
    env = os.environ if env is None else env
    if isinstance(value, str):
        return _VAR.sub(lambda m: env.get(m.group(1), m.group(0)), value)
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class ProviderSpec:
    name: str
    kind: str = "chat"
    chat: ProviderConfig | None = None
    rules: str | None = None

    def build(self, audit_log: str | None = None) -> Provider:
        if self.kind == "stub":
            if not self.rules:
                raise ValueError(f"stub provider {self.name!r} needs a rules file")
            return StubProvider.from_file(self.rules, audit_log=audit_log)
        if self.kind == "chat":
            cfg = self.chat or ProviderConfig(name=self.name)
            if audit_log and not cfg.audit_log:
                cfg = dataclasses.replace(cfg, audit_log=audit_log)
            return ChatProvider(cfg)
        raise ValueError(f"unknown provider kind {self.kind!r}")


@dataclass
class RunConfig:
    dataset: str | None = None
    tasks: str | None = None
    cache_dir: str = ".cache/overpass"
    overpass_endpoint: str = OVERPASS_ENDPOINT
    providers: dict[str, ProviderSpec] = field(default_factory=dict)
    method: str = "linear"
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)
    seed: int = 0
    out: str | None = None
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def _provider_spec(name: str, raw: dict[str, Any], base: Path) -> ProviderSpec:
    raw = dict(raw)
    kind = raw.pop("kind", "chat")
    if kind == "stub":
        rules = raw.get("rules")
        if rules and not Path(rules).is_absolute():
            rules = str(base / rules)
        return ProviderSpec(name, "stub", rules=rules)
    known = {f.name for f in dataclasses.fields(ProviderConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"provider {name!r}: unknown keys {sorted(unknown)}")
    return ProviderSpec(name, kind, chat=ProviderConfig(name=name, **raw))


def load_config(path: str | os.PathLike | None, env: dict[str, str] | None = None) -> RunConfig:
    """Parse a YAML config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    data = interpolate(yaml.safe_load(path.read_text(encoding="utf-8")) or {}, env)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    base = path.parent
    data = dict(data)
    providers = {n: _provider_spec(n, spec or {}, base) for n, spec in (data.pop("providers", None) or {}).items()}
    metrics = MetricsConfig(**(data.pop("metrics", None) or {}))
    pipe = dict(data.pop("pipeline", None) or {})
    if "representation" in pipe:
        pipe["representation"] = Representation(pipe["representation"])
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return RunConfig(providers=providers, metrics=metrics, pipeline=PipelineOptions(**pipe), **data)
