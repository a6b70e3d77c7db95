"""Run configuration: file values, environment overrides, flag overrides.

Precedence is file < environment < flags. Secrets never enter the config:
only the names of the environment variables holding API keys are recorded,
so a resolved-config echo can be embedded in every report.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError

# Example binding for a flow-level CSV export; any export can be bound by
# overriding schema_map in the config file.
DEFAULT_SCHEMA_MAP = {
    "src_ip": "IPV4_SRC_ADDR",
    "dst_ip": "IPV4_DST_ADDR",
    "dst_port": "L4_DST_PORT",
    "protocol": "PROTOCOL",
    "in_bytes": "IN_BYTES",
    "out_bytes": "OUT_BYTES",
    "in_pkts": "IN_PKTS",
    "out_pkts": "OUT_PKTS",
    "flow_duration_ms": "FLOW_DURATION_MILLISECONDS",
    "avg_iat_src_to_dst": "SRC_TO_DST_IAT_AVG",
    "avg_iat_dst_to_src": "DST_TO_SRC_IAT_AVG",
    "throughput_src_to_dst": "SRC_TO_DST_AVG_THROUGHPUT",
    "throughput_dst_to_src": "DST_TO_SRC_AVG_THROUGHPUT",
    "tcp_flags_aggregate": "TCP_FLAGS",
    "label": "Attack",
}

DEFAULT_CLASS_SET = ["Benign", "DDoS", "DoS", "Reconnaissance"]

ENV_SEED = "FLOWMEM_SEED"
ENV_TAU = "FLOWMEM_TAU"
ENV_OFFLINE = "FLOWMEM_OFFLINE"


@dataclass
class EmbedderConfig:
    kind: str = "hash"  # "hash" | "remote"
    dim: int = 384
    hash_seed: int = 0
    endpoint: str = ""
    model_name: str = ""
    batch_size: int = 64
    api_key_env: str = "FLOWMEM_EMBED_API_KEY"

    def fingerprint(self) -> str:
        if self.kind == "hash":
            return f"hash:dim={self.dim}:seed={self.hash_seed}"
        return f"remote:model={self.model_name}:dim={self.dim}"


@dataclass
class AgentConfig:
    kind: str = "mock"  # "mock" | "remote_llm"
    model_name: str = ""
    endpoint: str = ""
    temperature: float = 0.0
    max_response_tokens: int = 256
    timeout_s: float = 60.0
    retries: int = 3
    api_key_env: str = "FLOWMEM_CHAT_API_KEY"
    in_flight_limit: int = 1

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ConfigError("agent temperature is fixed at 0.0")


@dataclass
class PathsConfig:
    dataset: str = ""
    manifest: str = "split_manifest.json"
    library: str = "experience.lib"
    report: str = "report.json"
    curve_csv: str = "curve.csv"
    transcript: str = "transcript.jsonl"
    checkpoint: str = "checkpoint.json"


@dataclass
class RunConfig:
    class_set: list[str] = field(default_factory=lambda: list(DEFAULT_CLASS_SET))
    schema_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SCHEMA_MAP))
    tau: float = 0.5
    seed: int = 0
    quota_build: int = 0
    quota_eval: int = 0
    curve_window: int = 1000
    checkpoint_interval: int = 500
    ablation_mode: str = "full"  # "zero_shot" | "library_only" | "full"
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    agents: AgentConfig = field(default_factory=AgentConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def resolved(self) -> dict:
        """Plain-dict echo of every setting; safe to embed in reports."""
        return {
            "class_set": list(self.class_set),
            "schema_map": dict(self.schema_map),
            "tau": self.tau,
            "seed": self.seed,
            "quota_build": self.quota_build,
            "quota_eval": self.quota_eval,
            "curve_window": self.curve_window,
            "checkpoint_interval": self.checkpoint_interval,
            "ablation_mode": self.ablation_mode,
            "embedder": {
                "kind": self.embedder.kind,
                "dim": self.embedder.dim,
                "hash_seed": self.embedder.hash_seed,
                "endpoint": self.embedder.endpoint,
                "model_name": self.embedder.model_name,
                "batch_size": self.embedder.batch_size,
                "api_key_env": self.embedder.api_key_env,
            },
            "agents": {
                "kind": self.agents.kind,
                "model_name": self.agents.model_name,
                "endpoint": self.agents.endpoint,
                "temperature": self.agents.temperature,
                "max_response_tokens": self.agents.max_response_tokens,
                "timeout_s": self.agents.timeout_s,
                "retries": self.agents.retries,
                "api_key_env": self.agents.api_key_env,
                "in_flight_limit": self.agents.in_flight_limit,
            },
            "paths": {
                "dataset": self.paths.dataset,
                "manifest": self.paths.manifest,
                "library": self.paths.library,
                "report": self.paths.report,
                "curve_csv": self.paths.curve_csv,
                "transcript": self.paths.transcript,
                "checkpoint": self.paths.checkpoint,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def force_offline(self) -> None:
        self.embedder.kind = "hash"
        self.agents.kind = "mock"


def _apply_section(target, values: dict) -> None:
    for key, value in values.items():
        if not hasattr(target, key):
            raise ConfigError(f"unknown configuration key {key!r}")
        setattr(target, key, value)


def load_config(path: str | None = None) -> RunConfig:
    config = RunConfig()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        for section in ("embedder", "agents", "paths"):
            if section in data:
                _apply_section(getattr(config, section), data.pop(section))
        _apply_section(config, data)
    if config.agents.temperature != 0.0:
        raise ConfigError("agent temperature is fixed at 0.0")
    _apply_environment(config)
    return config


def _apply_environment(config: RunConfig) -> None:
    if os.environ.get(ENV_SEED):
        config.seed = int(os.environ[ENV_SEED])
    if os.environ.get(ENV_TAU):
        config.tau = float(os.environ[ENV_TAU])
    if os.environ.get(ENV_OFFLINE) == "1":
        config.force_offline()


def api_key_from_env(env_name: str) -> str | None:
    return os.environ.get(env_name) or None
