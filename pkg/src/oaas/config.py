"""Platform configuration: one file, env-var overrides, sane defaults."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

# Pinned seed for the ring hash so object ownership is reproducible across runs.
DEFAULT_HASH_SEED = 0x0AA5_5EED_C0FF_EE01


@dataclass
class PlatformConfig:
    data_dir: str = "oaas_data"
    secret: str = "dev-secret-change-me"
    host: str = "127.0.0.1"
    port: int = 8090
    public_base_url: str = ""  # defaults to http://{host}:{port}

    # dht cache
    cache_nodes: list[str] = field(default_factory=lambda: [f"node{i}" for i in range(4)])
    vnodes_per_node: int = 128
    hash_seed: int = DEFAULT_HASH_SEED
    batch_size: int = 100
    flush_interval_ms: int = 50
    flush_high_watermark: int = 1000
    cache_entry_cap: int = 100_000

    # invocation engine
    conflict_retries: int = 5
    retry_backoff_ms: float = 5.0
    task_deadline_ms: int = 30_000
    presign_ttl_s: int = 600
    dataflow_parallelism: int = 16
    async_workers: int = 8

    # runtime manager
    metrics_window_ms: int = 1000
    autoscale_tick_ms: int = 1000
    idle_timeout_s: float = 30.0
    cold_start_ms: float = 0.0
    admission_timeout_s: float = 30.0

    # durability
    durable_fsync: bool = False
    default_persistence_mode: str = "WRITE_THROUGH"  # for classes outside any template

    # boot-time catalog files
    registry_path: str | None = None
    template_catalog_path: str | None = None

    @property
    def base_url(self) -> str:
        return self.public_base_url or f"http://{self.host}:{self.port}"


_ENV_KEYS = {
    "OAAS_DATA_DIR": "data_dir",
    "OAAS_SECRET": "secret",
    "OAAS_HOST": "host",
    "OAAS_PORT": "port",
    "OAAS_PUBLIC_BASE_URL": "public_base_url",
    "OAAS_REGISTRY": "registry_path",
    "OAAS_TEMPLATES": "template_catalog_path",
    "OAAS_DEFAULT_PERSISTENCE": "default_persistence_mode",
}


def _snake(name: str) -> str:
    out = []
    for ch in name:
        if ch.isupper():
            out.append("_")
            out.append(ch.lower())
        else:
            out.append(ch)
    return "".join(out)


def load_config(path: str | None = None, env: dict | None = None) -> PlatformConfig:
    """Build a config from an optional YAML/JSON file plus environment overrides."""
    env = os.environ if env is None else env
    cfg = PlatformConfig()
    known = {f.name: f.type for f in fields(PlatformConfig)}

    if path:
        with open(path, "r", encoding="utf-8") as fh:
            tree = yaml.safe_load(fh) or {}
        if not isinstance(tree, dict):
            raise ValueError(f"config file {path} must contain a mapping")
        for key, value in tree.items():
            attr = _snake(key)
            if attr not in known:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, attr, value)

    for env_key, attr in _ENV_KEYS.items():
        if env_key in env:
            value: object = env[env_key]
            if attr == "port":
                value = int(value)  # type: ignore[arg-type]
            setattr(cfg, attr, value)
    return cfg
