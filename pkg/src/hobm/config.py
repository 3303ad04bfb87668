"""Experiment configuration: JSON files validated against ``config.schema.json``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema

from .decomposition import PROJECTION_FIT
from .hbm import AisConfig, FitConfig, GibbsConfig
from .rbm import CdConfig


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("hobm").joinpath("config.schema.json").read_text())


@dataclass(frozen=True)
class RunConfig:
    n: int
    sample_sizes: tuple[int, ...]
    replicates: int = 24
    base_seed: int = 0
    mode: str = "exact"
    output_dir: str | None = None
    hbm_orders: tuple[int, ...] = ()
    rbm_hidden: tuple[int, ...] = ()
    mle_sample_size: int = 1_000_000
    fit: FitConfig = FitConfig()
    projection_fit: FitConfig = PROJECTION_FIT
    gibbs: GibbsConfig = GibbsConfig()
    ais: AisConfig = AisConfig()
    cd: CdConfig = CdConfig()
    config_hash: str = ""
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def with_overrides(self, mode=None, seed=None, output_dir=None) -> "RunConfig":
        cfg = self
        if mode is not None:
            cfg = replace(cfg, mode=mode, fit=replace(cfg.fit, mode=mode))
        if seed is not None:
            cfg = replace(cfg, base_seed=int(seed))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        return cfg


def _describe(error: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in error.absolute_path) or "<root>"
    msg = f"config error at {where}: {error.message}"
    note = error.schema.get("description") if isinstance(error.schema, dict) else None
    if note:
        msg += f" ({note})"
    return msg


def parse_config(raw: dict, config_hash: str = "") -> RunConfig:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(_describe(e) for e in errors))

    n = raw["n"]
    sizes = tuple(raw["sample_sizes"])
    if list(sizes) != sorted(sizes):
        raise ConfigError("config error at sample_sizes: must be sorted ascending")
    orders = tuple(raw.get("hbm", {}).get("orders", ()))
    bad = [k for k in orders if k > n]
    if bad:
        raise ConfigError(f"config error at hbm/orders: orders {bad} exceed n={n}")
    mode = raw.get("mode", "exact")
    fit = FitConfig(mode=mode, **raw.get("fit", {}))
    projection_fit = replace(PROJECTION_FIT, **raw.get("projection_fit", {}))
    rbm = raw.get("rbm", {})
    return RunConfig(
        n=n,
        sample_sizes=sizes,
        replicates=raw.get("replicates", 24),
        base_seed=raw.get("base_seed", 0),
        mode=mode,
        output_dir=raw.get("output_dir"),
        hbm_orders=orders,
        rbm_hidden=tuple(rbm.get("hidden", ())),
        mle_sample_size=rbm.get("mle_sample_size", 1_000_000),
        fit=fit,
        projection_fit=projection_fit,
        gibbs=GibbsConfig(**raw.get("gibbs", {})),
        ais=AisConfig(**raw.get("ais", {})),
        cd=CdConfig(**raw.get("cd", {})),
        config_hash=config_hash,
        raw=raw,
    )


def load_config(path) -> RunConfig:
    data = Path(path).read_bytes()
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config error: {path} is not valid JSON ({exc})") from None
    return parse_config(raw, hashlib.sha256(data).hexdigest())
