"""Run configuration shared by the CLI commands.

Precedence, lowest to highest: defaults, config file, ``PRID_SEED``,
explicit command-line flags.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .evaluation import PROTOCOLS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # crop generation
    s: float = 0.5
    o_min: float = 0.25
    # alignment
    n_sigma: float = 3.0
    ref_width: int = 32
    ref_height: int = 96
    min_scale: float = 1e-3
    # hallucination
    mode: str = "baseline"
    lam: float = 10.0
    lr: float = 0.05
    steps: int = 200
    batch_size: int = 32
    hidden: int = 32
    # features
    n_strides: int = 6
    bins: int = 32
    dim: int = 0  # 0 keeps the raw channels*bins histogram
    sources: int = 2
    # evaluation
    protocol: str = "crop-cuhk03"
    trials: int = 10
    query_camera: int = 0
    # shared
    seed: int = 0
    threads: int = 1

    def validate(self) -> "RunConfig":
        checks = [
            (0.0 < self.s <= 1.0, "s must lie in (0, 1]"),
            (0.0 <= self.o_min <= 1.0, "o_min must lie in [0, 1]"),
            (self.n_sigma > 0, "n_sigma must be positive"),
            (self.ref_width > 0 and self.ref_height > 0, "reference frame dimensions must be positive"),
            (self.min_scale > 0, "min_scale must be positive"),
            (self.mode in ("baseline", "tiny-trained"), f"unknown hallucination mode {self.mode!r}"),
            (self.lam >= 0 and math.isfinite(self.lam), "lambda must be non-negative"),
            (self.lr >= 0 and math.isfinite(self.lr), "lr must be non-negative"),
            (self.steps >= 1, "steps must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.hidden >= 1, "hidden must be >= 1"),
            (self.n_strides >= 1, "n_strides must be >= 1"),
            (self.bins >= 2, "bins must be >= 2"),
            (self.dim >= 0, "dim must be >= 0"),
            (self.sources in (1, 2), "sources must be 1 or 2"),
            (self.protocol in PROTOCOLS, f"protocol must be one of {PROTOCOLS}"),
            (self.trials >= 1, "trials must be >= 1"),
            (0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def read_config_file(path) -> dict:
    """JSON object, or ``key = value`` lines with ``#`` comments."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            raw[k.strip().replace("-", "_")] = v.strip()
    unknown = sorted(set(raw) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def resolve_config(config_path=None, overrides: dict | None = None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    values = {}
    if config_path:
        values.update(read_config_file(config_path))
    if env.get("PRID_SEED"):
        values["seed"] = _coerce("seed", env["PRID_SEED"])
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    return RunConfig(**values).validate()
