"""Campaign configuration: a TOML file resolved against built-in defaults.

Every stage reads only the resolved mapping, so the canonical JSON of
``CampaignConfig.data`` is what the artifact hashes are built from.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models.scenario import MM, Scenario, ScenarioError

MODEL_KINDS = ("channel-classical", "channel-generalized", "pore-network")
MODES = ("volume", "surface")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": None,
    "output_dir": "campaign",
    "scenario": {"units": "mm"},
    "reference": {
        "v_top": 1.0e-3,
        "cells_per_inclusion": 10,
        "refinement": [],
        "p_hat": 2.0,
        "solver": "minres",
        "rtol": 1e-10,
        "maxiter": 2000,
    },
    "models": [],
    "surrogate": {"degree": 5, "n_train": 300, "n_test": 150, "max_failure_fraction": 0.0},
    "discrepancy": {"vel_max": 1e-5, "p_max": 1e-3},
    "mcmc": {"walkers": 50, "max_steps": 100_000, "check_every": 1000, "rel_tol": 0.01},
    "comparison": {"n_bme": 100_000, "replicates": 1000, "noise_scale": {}, "model_priors": []},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown configuration key {path + k!r}")
        if isinstance(base[k], dict) and not isinstance(v, dict):
            raise ConfigError(f"{path + k!r} must be a table")
        if isinstance(base[k], dict) and k not in ("scenario", "noise_scale"):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive_int(d: dict, key: str, where: str):
    v = d[key]
    if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
        raise ConfigError(f"{where}.{key} must be a positive integer, got {v!r}")


@dataclass
class CampaignConfig:
    data: dict
    source: Path | None = None

    @classmethod
    def from_mapping(cls, raw: dict, source=None) -> "CampaignConfig":
        cfg = cls(_merge(DEFAULTS, raw), None if source is None else Path(source))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"configuration file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_mapping(raw, path)

    # -- validation -----------------------------------------------------
    def validate(self):
        d = self.data
        if d["seed"] is None:
            raise ConfigError("an explicit integer 'seed' is required")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or d["seed"] < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {d['seed']!r}")
        for key in ("degree", "n_train", "n_test"):
            _positive_int(d["surrogate"], key, "surrogate")
        if not 0 <= d["surrogate"]["max_failure_fraction"] < 1:
            raise ConfigError("surrogate.max_failure_fraction must lie in [0, 1)")
        for key in ("walkers", "max_steps", "check_every"):
            _positive_int(d["mcmc"], key, "mcmc")
        if not d["mcmc"]["rel_tol"] > 0:
            raise ConfigError("mcmc.rel_tol must be positive")
        for key in ("n_bme", "replicates"):
            _positive_int(d["comparison"], key, "comparison")
        ref = d["reference"]
        if not ref["v_top"] > 0:
            raise ConfigError("reference.v_top must be positive")
        _positive_int(ref, "cells_per_inclusion", "reference")
        if ref["refinement"] and len(set(ref["refinement"])) < 3:
            raise ConfigError("reference.refinement needs at least three distinct levels")
        if ref["solver"] not in ("minres", "direct"):
            raise ConfigError(f"unknown reference.solver {ref['solver']!r}")
        for key in ("vel_max", "p_max"):
            if not d["discrepancy"][key] > 0:
                raise ConfigError(f"discrepancy.{key} must be positive")
        for k, v in d["comparison"]["noise_scale"].items():
            if k not in ("velocity", "pressure") or not v >= 0:
                raise ConfigError(f"comparison.noise_scale.{k} must be a non-negative velocity/pressure scale")

        if not d["models"]:
            raise ConfigError("at least one [[models]] entry is required")
        ids = []
        for m in d["models"]:
            unknown = set(m) - {"id", "kind", "mode"}
            if unknown:
                raise ConfigError(f"unknown model keys {sorted(unknown)}")
            if "id" not in m or "kind" not in m:
                raise ConfigError("every model entry needs 'id' and 'kind'")
            if m["kind"] not in MODEL_KINDS:
                raise ConfigError(f"model {m['id']!r}: unknown kind {m['kind']!r} (known: {', '.join(MODEL_KINDS)})")
            m.setdefault("mode", "volume")
            if m["mode"] not in MODES:
                raise ConfigError(f"model {m['id']!r}: unknown averaging mode {m['mode']!r}")
            if m["mode"] == "surface" and m["kind"] != "pore-network":
                raise ConfigError(f"model {m['id']!r}: throat-surface averaging applies to pore-network models only")
            ids.append(m["id"])
        if len(set(ids)) != len(ids):
            raise ConfigError("model ids must be unique")
        pri = d["comparison"]["model_priors"]
        if pri and (len(pri) != len(ids) or any(p < 0 for p in pri) or abs(sum(pri) - 1) > 1e-9):
            raise ConfigError("comparison.model_priors must have one non-negative entry per model summing to 1")
        self.scenario()  # surfaces geometry / extraction-point errors early

    # -- accessors --------------------------------------------------------
    def scenario(self) -> Scenario:
        sc = dict(self.data["scenario"])
        units = sc.pop("units", "mm")
        if units not in ("mm", "m"):
            raise ConfigError(f"scenario.units must be 'mm' or 'm', got {units!r}")
        try:
            return Scenario.from_dict(sc, MM if units == "mm" else 1.0)
        except (ScenarioError, KeyError, TypeError) as exc:
            raise ConfigError(f"scenario: {exc}") from None

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def models(self) -> list[dict]:
        return self.data["models"]

    def model(self, model_id: str) -> dict:
        for m in self.models:
            if m["id"] == model_id:
                return m
        raise ConfigError(f"unknown model {model_id!r} (configured: {', '.join(m['id'] for m in self.models)})")

    def with_seed(self, seed: int) -> "CampaignConfig":
        d = copy.deepcopy(self.data)
        d["seed"] = int(seed)
        out = CampaignConfig(d, self.source)
        out.validate()
        return out

    def section_hash(self, *keys) -> str:
        return digest({k: self.data[k] for k in keys})

    def hash(self) -> str:
        return digest(self.data)


def digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()


def _jsonable(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def default_config_path() -> Path:
    return Path(str(resources.files("ffpmbench") / "data" / "default.toml"))


def load_default() -> CampaignConfig:
    return CampaignConfig.load(default_config_path())
