"""Reading :class:`RunConfig` from YAML or JSON files.

Example::

    max_searches: 2
    decoding: {temperature: 0.0, seed: 42, max_tokens: 1024}
    instructions:            # optional; all four roles if present
      Factual: "..."
    moderator:
      priority: [Computational, Factual, Logical, Completeness]
      majority_first: false
    backends:
      model: {kind: scripted, playbook: playbook.yaml}
      embedding: {kind: hash, dim: 256}
      search: {kind: local, corpus: corpus.jsonl}
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Mapping

import yaml

from sigma_agents.core import (
    ALL_ROLES,
    AgentInstruction,
    AgentRole,
    BackendSettings,
    ConfigError,
    DecodingParams,
    EmbeddingSettings,
    MissingRole,
    ModelSettings,
    RunConfig,
    SearchSettings,
    validate_config,
)

_SCALARS = ("max_searches", "max_steps", "top_k", "candidate_pool", "result_char_limit")


def _section(raw: Any, path: str) -> Mapping[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError("expected a mapping", path)
    return raw


def _build(cls: type, raw: Any, path: str) -> Any:
    data = _section(raw, path)
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError("unknown field", f"{path}.{key}")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError("expected true/false", f"{path}.{key}")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("expected a number", f"{path}.{key}")
            value = float(value)
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("expected an integer", f"{path}.{key}")
        elif isinstance(default, dict):
            value = {str(k): str(v) for k, v in _section(value, f"{path}.{key}").items()}
        elif value is not None and not isinstance(value, str):
            raise ConfigError("expected a string", f"{path}.{key}")
        kwargs[key] = value
    return cls(**kwargs)


def _role(name: Any, path: str) -> AgentRole:
    try:
        return AgentRole(name)
    except ValueError:
        choices = ", ".join(r.value for r in ALL_ROLES)
        raise ConfigError(f"unknown role {name!r} (expected one of {choices})", path) from None


def config_from_dict(raw: Any) -> RunConfig:
    data = dict(_section(raw, "config"))
    kwargs: dict[str, Any] = {}
    for name in _SCALARS:
        if name in data:
            value = data.pop(name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("expected an integer", name)
            kwargs[name] = value
    if "decoding" in data:
        kwargs["decoding"] = _build(DecodingParams, data.pop("decoding"), "decoding")
    if "instructions" in data:
        given = _section(data.pop("instructions"), "instructions")
        instructions = []
        for name, text in given.items():
            role = _role(name, f"instructions.{name}")
            if not isinstance(text, str) or not text.strip():
                raise ConfigError("expected a non-empty prompt", f"instructions.{name}")
            instructions.append(AgentInstruction(role, text))
        missing = [r.value for r in ALL_ROLES if r not in {i.role for i in instructions}]
        if missing:
            raise MissingRole(f"missing instruction(s) for {', '.join(missing)}", "instructions")
        kwargs["instructions"] = tuple(sorted(instructions, key=lambda i: ALL_ROLES.index(i.role)))
    if "moderator" in data:
        mod = dict(_section(data.pop("moderator"), "moderator"))
        if "priority" in mod:
            order = mod.pop("priority")
            if not isinstance(order, list):
                raise ConfigError("expected a list of roles", "moderator.priority")
            kwargs["priority"] = tuple(_role(n, f"moderator.priority[{i}]") for i, n in enumerate(order))
        if "majority_first" in mod:
            flag = mod.pop("majority_first")
            if not isinstance(flag, bool):
                raise ConfigError("expected true/false", "moderator.majority_first")
            kwargs["majority_first"] = flag
        for key in mod:
            raise ConfigError("unknown field", f"moderator.{key}")
    if "backends" in data:
        b = dict(_section(data.pop("backends"), "backends"))
        parts = {
            "model": _build(ModelSettings, b.pop("model", None), "backends.model"),
            "embedding": _build(EmbeddingSettings, b.pop("embedding", None), "backends.embedding"),
            "search": _build(SearchSettings, b.pop("search", None), "backends.search"),
        }
        rest = _build(BackendSettings, {k: v for k, v in b.items()}, "backends")
        kwargs["backends"] = dataclasses.replace(rest, **parts)
    for key in data:
        raise ConfigError("unknown field", key)
    return validate_config(RunConfig(**kwargs))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from None
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        err = type(exc)(f"{exc} (in {path})")
        err.path = exc.path
        raise err from None
