"""Run configuration: YAML schema, endpoint profiles and run manifests.

A run config collects endpoint connection settings plus the pipeline
parameters (prompt family, sampling, bundle sizes, retrieval shape, seeds).
Secrets never live in the file: each endpoint names the environment variable
holding its token.  Manifests record what a run consumed and produced —
content hashes, parameters, package version — and deliberately contain no
timestamps, so re-running an identical setup yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from . import __version__
from .contexts import (
    DEFAULT_FREQUENCY_PENALTY,
    DEFAULT_MAX_NEW_TOKENS,
    DEFAULT_N_FOCUSED,
    DEFAULT_N_FREE,
    DEFAULT_TEMPERATURE,
    GenerationParams,
)
from .errors import ConfigError
from .gateway import DEFAULT_TIMEOUTS, ROLES, EndpointProfile, LlmGateway
from .prompts import FAMILIES
from .retrieval import (
    DEFAULT_CHUNK_OVERLAP,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_K_KEEP,
    DEFAULT_K_RETRIEVE,
)
from .evalsuite.sweeps import DEFAULT_SHUFFLE_SEEDS


@dataclass(frozen=True)
class EndpointSpec:
    """Declarative endpoint entry; tokens resolve via the named env var."""

    url: str = ""
    model: str = ""
    token_env: str = ""
    api: str = "chat"
    timeout: Optional[float] = None
    retries: int = 2
    max_parallel: int = 4
    backoff_base: float = 0.25


@dataclass(frozen=True)
class DataConfig:
    """Where the benchmark lives and where run artifacts go."""

    dataset: str = ""  # benchmark file path; CLI flags override
    tag: str = "canonical"  # loader format / benchmark tag
    output_dir: str = ""  # default artifact directory


@dataclass(frozen=True)
class PromptsConfig:
    family: str = "zephyr"
    shot_pair: Optional[str] = None  # None selects the per-benchmark default
    context_separator: str = "\n"


@dataclass(frozen=True)
class BundleConfig:
    temperature: float = DEFAULT_TEMPERATURE
    frequency_penalty: float = DEFAULT_FREQUENCY_PENALTY
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    n_focused: int = DEFAULT_N_FOCUSED
    n_free: int = DEFAULT_N_FREE

    def params(self) -> GenerationParams:
        return GenerationParams(
            temperature=self.temperature,
            frequency_penalty=self.frequency_penalty,
            max_new_tokens=self.max_new_tokens,
        )


@dataclass(frozen=True)
class ReaderConfig:
    k_contexts: int = 5
    max_new_tokens: int = 128


@dataclass(frozen=True)
class RetrievalConfig:
    chunk_size: int = DEFAULT_CHUNK_SIZE
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP
    k_retrieve: int = DEFAULT_K_RETRIEVE
    k_keep: int = DEFAULT_K_KEEP
    embed_batch_size: int = 64


@dataclass(frozen=True)
class SeedsConfig:
    base: int = 0
    shuffle: tuple[int, ...] = DEFAULT_SHUFFLE_SEEDS


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    endpoints: dict[str, EndpointSpec] = field(default_factory=dict)
    prompts: PromptsConfig = field(default_factory=PromptsConfig)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    reader: ReaderConfig = field(default_factory=ReaderConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "endpoints": {k: asdict(v) for k, v in sorted(self.endpoints.items())},
            "prompts": asdict(self.prompts),
            "bundle": asdict(self.bundle),
            "reader": asdict(self.reader),
            "retrieval": asdict(self.retrieval),
            "seeds": {"base": self.seeds.base, "shuffle": list(self.seeds.shuffle)},
        }


_TOP_LEVEL_KEYS = {"data", "endpoints", "prompts", "bundle", "reader", "retrieval", "seeds"}


def _build_section(cls, obj: Mapping[str, Any], where: str):
    allowed = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)} (allowed: {sorted(allowed)})")
    kwargs = dict(obj)
    if cls is SeedsConfig and "shuffle" in kwargs:
        kwargs["shuffle"] = tuple(int(s) for s in kwargs["shuffle"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(obj: Mapping[str, Any]) -> RunConfig:
    if not isinstance(obj, Mapping):
        raise ConfigError("config root must be a mapping")
    unknown = set(obj) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(
            f"config: unknown top-level keys {sorted(unknown)} (allowed: {sorted(_TOP_LEVEL_KEYS)})"
        )
    endpoints: dict[str, EndpointSpec] = {}
    for role, entry in (obj.get("endpoints") or {}).items():
        if role not in ROLES:
            raise ConfigError(f"endpoints: unknown role {role!r} (expected one of {ROLES})")
        if not isinstance(entry, Mapping):
            raise ConfigError(f"endpoints.{role}: entry must be a mapping")
        endpoints[role] = _build_section(EndpointSpec, entry, f"endpoints.{role}")
    prompts = _build_section(PromptsConfig, obj.get("prompts") or {}, "prompts")
    if prompts.family not in FAMILIES:
        raise ConfigError(
            f"prompts.family: unknown family {prompts.family!r} (expected one of {FAMILIES})"
        )
    config = RunConfig(
        data=_build_section(DataConfig, obj.get("data") or {}, "data"),
        endpoints=endpoints,
        prompts=prompts,
        bundle=_build_section(BundleConfig, obj.get("bundle") or {}, "bundle"),
        reader=_build_section(ReaderConfig, obj.get("reader") or {}, "reader"),
        retrieval=_build_section(RetrievalConfig, obj.get("retrieval") or {}, "retrieval"),
        seeds=_build_section(SeedsConfig, obj.get("seeds") or {}, "seeds"),
    )
    if config.reader.k_contexts < 0:
        raise ConfigError("reader.k_contexts must be >= 0")
    if not 0 <= config.retrieval.chunk_overlap < config.retrieval.chunk_size:
        raise ConfigError("retrieval: need 0 <= chunk_overlap < chunk_size")
    if config.retrieval.k_keep > config.retrieval.k_retrieve:
        raise ConfigError("retrieval: k_keep cannot exceed k_retrieve")
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if obj is None:
        obj = {}
    return parse_config(obj)


def build_profile(role: str, spec: EndpointSpec) -> EndpointProfile:
    """Materialise one endpoint profile, resolving URL and token fallbacks.

    The config URL wins; ``CTXGENIE_<ROLE>_URL`` fills a missing one.  Tokens
    come from ``token_env`` when named, else from ``CTXGENIE_<ROLE>_TOKEN``.
    """
    url = spec.url or os.environ.get(f"CTXGENIE_{role.upper()}_URL", "")
    if not url:
        raise ConfigError(
            f"endpoints.{role}: no url configured and CTXGENIE_{role.upper()}_URL is unset"
        )
    if spec.token_env:
        token: Optional[str] = os.environ.get(spec.token_env)
        if token is None:
            raise ConfigError(
                f"endpoints.{role}: token_env {spec.token_env!r} is not set in the environment"
            )
    else:
        token = os.environ.get(f"CTXGENIE_{role.upper()}_TOKEN")
    timeout = spec.timeout if spec.timeout is not None else DEFAULT_TIMEOUTS[role]
    return EndpointProfile(
        role=role,
        url=url,
        model=spec.model,
        token=token,
        api=spec.api,
        timeout=timeout,
        retries=spec.retries,
        max_parallel=spec.max_parallel,
        backoff_base=spec.backoff_base,
    )


def build_gateway(config: RunConfig, roles: tuple[str, ...] = ROLES) -> LlmGateway:
    """Gateway over every role the config declares (others resolve lazily
    from environment variables on first use)."""
    profiles = {
        role: build_profile(role, spec)
        for role, spec in config.endpoints.items()
        if role in roles
    }
    return LlmGateway(profiles=profiles)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(
    path: Union[str, Path],
    command: str,
    parameters: Mapping[str, Any],
    inputs: Mapping[str, Union[str, Path]],
    outputs: Mapping[str, Union[str, Path]],
) -> dict:
    """Record a run's identity: parameters plus content hashes of files.

    Input and output values are file paths, hashed at call time.  The
    manifest holds no timestamps or host details, so identical runs write
    identical bytes.
    """
    manifest = {
        "command": command,
        "package_version": __version__,
        "parameters": dict(parameters),
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "outputs": {name: sha256_file(p) for name, p in sorted(outputs.items())},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return manifest
