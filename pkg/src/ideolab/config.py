"""Run configuration: one serializable object per experiment run.

The config hash is a stable digest of the canonical JSON serialization,
excluding the output directory (so re-running the same experiment into a
different directory yields byte-identical artifacts). Every artifact a
subcommand writes embeds the hash that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

HASH_EXCLUDED_FIELDS = ("out",)


@dataclass
class RunConfig:
    dataset: str = ""  # the set being classified (test/query items)
    train_dataset: str = ""  # demonstration source for pool building
    label_scheme: str = "direct"  # youtube_slant | adfontes | direct
    fields: str = "title"  # title | title-source | title-desc | title-source-desc
    k: int = 0
    select: str = "balanced"  # balanced | random
    order: str = "set-bsr"  # set-bsr | bsr
    pool_size: int = 0  # 0 means |train|
    probe_size: int = 2000
    pool_file: str = ""  # default resolves to <out>/pool.jsonl at run time
    seed: int = 0
    cot: bool = False
    chat_turns: bool = False
    mock: str = ""  # echo_majority | nearest_demo | fixed:<label> | "" for a live endpoint
    model_name: str = "gpt-4o"
    temperature: float = 0.0
    max_in_flight: int = 4
    max_retries: int = 3
    timeout: float = 30.0
    char_budget: int = 120_000
    embed_provider: str = "hashed"  # hashed | file:<path> | http(s)://<url>
    embed_dim: int = 64
    cache_dir: str = ""
    source_map: str = ""
    bootstrap_resamples: int = 1000
    out: str = "runs"

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hashed_dict(self) -> dict:
        d = self.to_json_dict()
        for key in HASH_EXCLUDED_FIELDS:
            d.pop(key, None)
        return d

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.hashed_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**raw)

    def merged(self, overrides: dict) -> "RunConfig":
        """New config with non-None override values applied."""
        values = self.to_json_dict()
        for key, value in overrides.items():
            if value is not None:
                if key not in values:
                    raise ValueError(f"unknown config key: {key}")
                values[key] = value
        return RunConfig(**values)
