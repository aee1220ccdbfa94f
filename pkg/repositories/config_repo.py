"""
repositories/config_repo.py
---------------------------
YAML experiment configs -> ExperimentConfig.

Every error names the dotted field path and, when the field appears in the
file, its 1-based source line.

Users are declared as

    users:
      - key: "128:0f3a..."          # or: passphrase: "correct horse"
        objective: alice           # optional, default 'user<i>'
        transform: {A: [[-1, 0], [0, -1]], c: [0, 0]}   # spatial tasks
        offset: 3                                      # classification

or generated with

    synthetic_users: {count: 30, seed: 7}
"""

import dataclasses
import os
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

import numpy as np
import yaml

from models.key import Key
from models.settings import ExperimentConfig, UserSpec
from models.task import GoalTransform, UserObjective
from services.keyspace_service import KeyspaceService, key_from_passphrase
from utils.errors import ConfigError, KeyspaceError, StorageError
from utils.logger import get_logger

logger = get_logger(__name__)

SPECIAL_FIELDS = ("users", "objectives", "synthetic_users")


def _line_map(node, path: str = "", out: Optional[dict] = None) -> dict[str, int]:
    """Dotted path -> 1-based line of every node in a composed YAML tree."""
    out = {} if out is None else out
    if node is None:
        return out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            child = f"{path}.{key_node.value}" if path else str(key_node.value)
            out[child] = key_node.start_mark.line + 1
            _line_map(value_node, child, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_map(item, f"{path}[{i}]", out)
    return out


class _Ctx:
    def __init__(self, lines: dict[str, int]):
        self.lines = lines

    def line(self, path: str) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return None

    def error(self, message: str, path: str) -> ConfigError:
        return ConfigError(message, field=path, line=self.line(path))


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value: Any, tp: Any, path: str, ctx: _Ctx) -> Any:
    origin, args = get_origin(tp), get_args(tp)
    if tp is Any:
        return value
    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path, ctx)
    if tp is GoalTransform:
        return _transform(value, path, ctx)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path, ctx)
    if origin is list:
        if not isinstance(value, list):
            raise ctx.error(f"expected a list, got {type(value).__name__}", path)
        return [_coerce(v, args[0], f"{path}[{i}]", ctx) for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ctx.error(f"expected true/false, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ctx.error(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ctx.error(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ctx.error(f"expected a string, got {value!r}", path)
        return value
    return value


def _build(cls, data: Any, path: str, ctx: _Ctx, skip: tuple = ()):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ctx.error(f"expected a mapping for {_type_name(cls)}", path)
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        child = f"{path}.{key}" if path else str(key)
        if key in skip:
            continue
        if key not in names:
            raise ctx.error(f"unknown field '{key}'", child)
        kwargs[key] = _coerce(value, hints[key], child, ctx)
    try:
        return cls(**kwargs)
    except ConfigError as e:
        where = e.field or path
        raise ctx.error(e.message, where) from e


def _transform(value: Any, path: str, ctx: _Ctx) -> GoalTransform:
    if isinstance(value, str) and value in ("reflection", "identity"):
        raise ctx.error("named transforms need a dimension; give A and c explicitly", path)
    if not isinstance(value, dict) or set(value) - {"A", "c"} or "A" not in value:
        raise ctx.error("transform must be a mapping with 'A' (and optional 'c')", path)
    try:
        a = np.asarray(value["A"], dtype=np.float64)
        c = np.asarray(value.get("c", [0.0] * a.shape[0]), dtype=np.float64)
    except (TypeError, ValueError, IndexError) as e:
        raise ctx.error(f"transform entries must be numeric: {e}", path) from e
    try:
        return GoalTransform(A=a, c=c)
    except ConfigError as e:
        raise ctx.error(e.message, f"{path}.{(e.field or 'A').split('.')[-1]}") from e


def _objective(objective_id: str, data: dict, path: str, ctx: _Ctx) -> UserObjective:
    transform = _transform(data["transform"], f"{path}.transform", ctx) if "transform" in data else None
    offset = None
    if "offset" in data:
        offset = _coerce(data["offset"], int, f"{path}.offset", ctx)
        if offset <= 0:
            raise ctx.error("offset must be a positive integer", f"{path}.offset")
    return UserObjective(objective_id=objective_id, transform=transform, offset=offset)


def _users(raw: dict, key_len: int, ctx: _Ctx) -> tuple[list[UserSpec], dict[str, UserObjective]]:
    objectives: dict[str, UserObjective] = {}
    for obj_id, spec in (raw.get("objectives") or {}).items():
        path = f"objectives.{obj_id}"
        if not isinstance(spec, dict) or set(spec) - {"transform", "offset"}:
            raise ctx.error("objective must be a mapping of 'transform' and/or 'offset'", path)
        objectives[str(obj_id)] = _objective(str(obj_id), spec, path, ctx)

    users: list[UserSpec] = []
    entries = raw.get("users") or []
    if not isinstance(entries, list):
        raise ctx.error("users must be a list", "users")
    for i, entry in enumerate(entries):
        path = f"users[{i}]"
        if not isinstance(entry, dict):
            raise ctx.error("each user must be a mapping", path)
        unknown = set(entry) - {"key", "passphrase", "objective", "transform", "offset"}
        if unknown:
            raise ctx.error(f"unknown field '{sorted(unknown)[0]}'", f"{path}.{sorted(unknown)[0]}")
        try:
            if "key" in entry:
                key = Key.from_hex(str(entry["key"]))
            elif "passphrase" in entry:
                key = key_from_passphrase(str(entry["passphrase"]), key_len)
            else:
                raise ctx.error("user needs 'key' or 'passphrase'", path)
        except KeyspaceError as e:
            raise ctx.error(str(e), f"{path}.key") from e
        obj_id = str(entry.get("objective", f"user{i}"))
        if "transform" in entry or "offset" in entry:
            if obj_id in objectives:
                raise ctx.error(f"objective '{obj_id}' is defined twice", f"{path}.objective")
            objectives[obj_id] = _objective(obj_id, entry, path, ctx)
        try:
            users.append(UserSpec(key=key, objective_id=obj_id))
        except ConfigError as e:
            raise ctx.error("user keys must not be null", f"{path}.key") from e

    synthetic = raw.get("synthetic_users")
    if synthetic is not None:
        if not isinstance(synthetic, dict) or set(synthetic) - {"count", "seed", "objectives"}:
            raise ctx.error("synthetic_users takes 'count', 'seed' and 'objectives'", "synthetic_users")
        count = _coerce(synthetic.get("count", 0), int, "synthetic_users.count", ctx)
        seed = _coerce(synthetic.get("seed", 0), int, "synthetic_users.seed", ctx)
        ids = synthetic.get("objectives") or ["personalized"]
        rng = np.random.default_rng(seed)
        keys = KeyspaceService(key_len).distinct(count, [u.key for u in users], rng)
        for j, key in enumerate(keys):
            users.append(UserSpec(key=key, objective_id=str(ids[j % len(ids)])))
    return users, objectives


class ConfigRepository:
    """Loads experiment configs from YAML files."""

    def parse(self, text: str, source: str = "<string>") -> ExperimentConfig:
        """
        Raises:
            ConfigError: On YAML syntax errors or invalid fields (with path and line).
        """
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            raw = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML in {source}: {e}", line=mark.line + 1 if mark else None) from e
        ctx = _Ctx(_line_map(node))
        if not isinstance(raw, dict):
            raise ConfigError(f"{source} must contain a mapping")
        if "task" not in raw:
            raise ConfigError("missing required field", field="task")

        train_raw = raw.get("train") or {}
        key_len = train_raw.get("key_len", 128) if isinstance(train_raw, dict) else 128
        if isinstance(key_len, bool) or not isinstance(key_len, int) or key_len <= 0:
            raise ctx.error("key_len must be a positive integer", "train.key_len")
        users, objectives = _users(raw, key_len, ctx)

        config = _build(ExperimentConfig, raw, "", ctx, skip=SPECIAL_FIELDS)
        for uid in {u.objective_id for u in users}:
            objectives.setdefault(uid, UserObjective(objective_id=uid))
        config.users = users
        config.objectives = objectives
        try:
            config.__post_init__()
        except ConfigError as e:
            raise ctx.error(e.message, e.field or "users") from e
        return config

    def load(self, path: str) -> ExperimentConfig:
        """
        Raises:
            StorageError: If the file cannot be read.
            ConfigError: If its content is invalid.
        """
        if not os.path.exists(path):
            raise StorageError(f"config file not found: '{path}'")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise StorageError(f"cannot read config '{path}': {e}") from e
        config = self.parse(text, source=path)
        logger.info(f"Loaded {config.task} config from {path} (hash {config.config_hash()})")
        return config
