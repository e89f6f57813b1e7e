"""
Job configuration: `--config` files merged with command-line flags into a JobConfig.

A config file holds flat `key = value` lines and `dist <name>` ... `end`
blocks in the distribution text format. Flags given on the command line
override file values.
"""
import logging
import os
from typing import Any, Callable, Dict, Optional, Tuple

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.core.probdist import JointDist, parse_distributions
from app.core.simplexopt import OptimizerSettings
from app.services.schemas import JobConfig, MetricSpec, RateFunctionSpec, SweepSpec

logger = logging.getLogger(__name__)

# key -> (JobConfig field, converter)
_SCALAR_KEYS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    "kind": ("kind", str),
    "mode": ("mode", str),
    "decoder": ("decoder", str),
    "delta": ("delta", float),
    "er": ("er", float),
    "ee": ("ee", float),
    "n": ("n", int),
    "codes": ("codes", int),
    "seed": ("seed", int),
    "epsilon": ("epsilon", float),
    "out": ("out_dir", str),
    "oracle_step": ("oracle_step", float),
}
_SETTINGS_KEYS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    "rounds": ("rounds", int),
    "coarse": ("coarse_resolution", int),
    "starts": ("starts", int),
}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}
_KNOWN = set(_SCALAR_KEYS) | set(_SETTINGS_KEYS) | {
    "source", "rate", "metric", "sweep", "oracle", "cross_check",
}


def parse_config_text(text: str) -> Tuple[Dict[str, Tuple[str, int, int]], Dict[str, JointDist]]:
    """
    Split a config file into its `key = value` entries and its distribution blocks.

    Returns:
        (entries, dists): entries map key -> (raw value, line, value column).
    """
    dists = parse_distributions(text)
    entries: Dict[str, Tuple[str, int, int]] = {}
    in_block = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#")[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        if in_block:
            in_block = stripped != "end"
            continue
        if stripped.startswith("dist ") or stripped == "dist":
            in_block = True
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno, len(line) - len(line.lstrip()) + 1)
        key = key.strip().lower()
        if key not in _KNOWN:
            raise ConfigError(f"unknown key {key!r}", lineno, len(line) - len(line.lstrip()) + 1)
        column = len(line) - len(value) + (len(value) - len(value.lstrip())) + 1
        entries[key] = (value.strip(), lineno, column)
    return entries, dists


def _convert(key: str, raw: str, convert: Callable[[str], Any], where: Tuple[Optional[int], Optional[int]]):
    try:
        return convert(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {raw!r}", *where)


def _parse_bool(key: str, raw: Any, where) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in _BOOL_TRUE:
        return True
    if text in _BOOL_FALSE:
        return False
    raise ConfigError(f"bad boolean for {key!r}: {raw!r}", *where)


def load_source_file(path: str) -> Dict[str, JointDist]:
    if not os.path.exists(path):
        raise ConfigError(f"distribution file not found: {path}")
    with open(path) as f:
        return parse_distributions(f.read())


def _pick_source(dists: Dict[str, JointDist]) -> Tuple[str, JointDist]:
    """The block named `source` if present, else the first one."""
    if not dists:
        raise ConfigError("no distribution blocks found")
    if "source" in dists:
        return "source", dists["source"]
    first = next(iter(dists))
    return first, dists[first]


def build_job(command: str, flags: Optional[Dict[str, Any]] = None,
              config_path: Optional[str] = None) -> JobConfig:
    """
    Merge a config file (if any) with flags into a validated JobConfig.

    Flags whose value is None are treated as unset. A `source` value names a
    dist block of the config file or, failing that, a file of dist blocks.
    """
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    entries: Dict[str, Tuple[str, int, int]] = {}
    dists: Dict[str, JointDist] = {}
    if config_path:
        if not os.path.exists(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        with open(config_path) as f:
            entries, dists = parse_config_text(f.read())
        logger.info(f"Loaded config {config_path}: {len(entries)} keys, {len(dists)} distributions")

    def lookup(key: str):
        if key in flags:
            return flags[key], (None, None)
        if key in entries:
            raw, line, col = entries[key]
            return raw, (line, col)
        return None, (None, None)

    fields: Dict[str, Any] = {"command": command}
    for key, (field, convert) in _SCALAR_KEYS.items():
        raw, where = lookup(key)
        if raw is not None:
            fields[field] = raw if not isinstance(raw, str) else _convert(key, raw, convert, where)

    settings = OptimizerSettings.from_config()
    updates = {}
    for key, (field, convert) in _SETTINGS_KEYS.items():
        raw, where = lookup(key)
        if raw is not None:
            updates[field] = raw if not isinstance(raw, str) else _convert(key, raw, convert, where)
    if updates:
        try:
            settings = OptimizerSettings(**{**settings.model_dump(), **updates})
        except ValidationError as e:
            raise ConfigError(f"bad optimizer settings: {e.errors()[0]['msg']}")
    fields["settings"] = settings

    for key in ("oracle", "cross_check"):
        raw, where = lookup(key)
        if raw is not None:
            fields[key] = _parse_bool(key, raw, where)

    raw, where = lookup("source")
    if raw is not None:
        if raw in dists:
            name, dist = raw, dists[raw]
        else:
            file_dists = load_source_file(raw)
            dists = {**file_dists, **dists}
            name, dist = _pick_source(file_dists)
        fields["source_name"], fields["source"] = name, dist.mass.tolist()
    elif dists:
        name, dist = _pick_source(dists)
        fields["source_name"], fields["source"] = name, dist.mass.tolist()

    for key, parser in (("metric", lambda t: MetricSpec.parse(t, dists)),
                        ("rate", RateFunctionSpec.parse),
                        ("sweep", SweepSpec.parse)):
        raw, where = lookup(key)
        if raw is None:
            continue
        try:
            fields[key] = parser(raw)
        except ConfigError as e:
            if e.line is None and where[0] is not None:
                raise ConfigError(str(e), *where)
            raise
        except (ValidationError, ValueError) as e:
            raise ConfigError(f"bad {key} {raw!r}: {e}", *where)

    try:
        return JobConfig(**fields)
    except ValidationError as e:
        err = e.errors()[0]
        raise ConfigError(f"invalid job config ({'.'.join(str(p) for p in err['loc'])}): {err['msg']}")


def job_source(job: JobConfig) -> JointDist:
    if job.source is None:
        raise ConfigError(f"'{job.command}' needs a source distribution (--source or a dist block)")
    return JointDist.from_array(job.source)


def oracle_step(job: JobConfig) -> Optional[float]:
    return job.oracle_step if job.oracle else None


def output_path(job: JobConfig, filename: str) -> str:
    return os.path.join(job.out_dir, filename)
