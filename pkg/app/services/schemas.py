"""
Typed models shared by the services and the command line.

Models:
- MetricSpec / RateFunctionSpec / DecoderSpec: declarative inputs, parsed from `kind:k=v,...` flags
- ExponentResult / TradeoffPoint: formula outputs with witnesses and optimizer diagnostics
- EnsembleEstimate / ZCheckReport: simulator outputs
- SweepSpec / JobConfig: one command-line job
"""
import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from app.config import Config
from app.core.errors import ConfigError
from app.core.simplexopt import OptimizerSettings


class MetricKind(str, Enum):
    MATCHED_LL = "matched_ll"
    MISMATCHED_LL = "mismatched_ll"
    NEG_COND_ENTROPY = "neg_cond_entropy"


class RateKind(str, Enum):
    CONSTANT = "constant"
    ENTROPY = "entropy"
    TABLE = "table"
    J_RATE = "j_rate"
    OMEGA_RATE = "omega_rate"


class DecoderKind(str, Enum):
    GLD = "gld"
    MAP = "map"
    MCE = "mce"
    SCE = "sce"


def _params(text: str) -> Tuple[str, Dict[str, str]]:
    """Split `kind:a=1,b=2` (or `kind:value`) into the kind and its parameters."""
    kind, _, rest = text.strip().partition(":")
    params: Dict[str, str] = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        params[key.strip() if sep else "value"] = value.strip() if sep else key.strip()
    return kind.strip().lower(), params


def _number(params: Dict[str, str], key: str, default: Optional[float] = None) -> float:
    if key not in params:
        if default is None:
            raise ConfigError(f"missing parameter '{key}'")
        return default
    try:
        return float(params[key])
    except ValueError:
        raise ConfigError(f"parameter '{key}' is not a number: {params[key]!r}")


class MetricSpec(BaseModel):
    kind: MetricKind = MetricKind.MATCHED_LL
    beta: float = Field(default=1.0, gt=0)
    tilde_p: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _needs_tilde(self):
        if self.kind == MetricKind.MISMATCHED_LL and self.tilde_p is None:
            raise ValueError("mismatched_ll metric needs tilde_p")
        return self

    @classmethod
    def parse(cls, text: str, dists: Optional[Dict[str, Any]] = None) -> "MetricSpec":
        """
        Accepts `matched:beta=1`, `mismatched:beta=2,tilde=<dist name>`,
        `mce` / `sce` / `neg_cond_entropy`.
        """
        kind, params = _params(text)
        if kind in ("matched", "matched_ll"):
            return cls(kind=MetricKind.MATCHED_LL, beta=_number(params, "beta", 1.0))
        if kind in ("mismatched", "mismatched_ll"):
            name = params.get("tilde")
            if not name or not dists or name not in dists:
                raise ConfigError(f"mismatched metric references unknown distribution {name!r}")
            return cls(kind=MetricKind.MISMATCHED_LL, beta=_number(params, "beta", 1.0),
                       tilde_p=dists[name].mass.tolist())
        if kind in ("mce", "sce", "neg_cond_entropy"):
            return cls(kind=MetricKind.NEG_COND_ENTROPY)
        raise ConfigError(f"unknown metric kind {kind!r}")

    def label(self) -> str:
        if self.kind == MetricKind.NEG_COND_ENTROPY:
            return "neg_cond_entropy"
        return f"{self.kind.value}:beta={self.beta:g}"


class RateFunctionSpec(BaseModel):
    kind: RateKind = RateKind.CONSTANT
    value: float = Field(default=0.0, ge=0)
    table: List[Tuple[List[float], float]] = Field(default_factory=list)
    e_r: Optional[float] = Field(default=None, ge=0)
    delta: Optional[float] = Field(default=None, gt=0)
    e_e: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _check_params(self):
        if self.kind == RateKind.TABLE:
            if len(self.table) < 2:
                raise ValueError("table rate function needs at least two entries")
            if any(r < 0 or not math.isfinite(r) for _, r in self.table):
                raise ValueError("table rates must be finite and nonnegative")
        if self.kind == RateKind.J_RATE and (self.e_r is None or self.delta is None):
            raise ValueError("j_rate needs e_r and delta")
        if self.kind == RateKind.OMEGA_RATE and self.e_e is None:
            raise ValueError("omega_rate needs e_e")
        return self

    @classmethod
    def constant(cls, value: float) -> "RateFunctionSpec":
        return cls(kind=RateKind.CONSTANT, value=value)

    @classmethod
    def parse(cls, text: str) -> "RateFunctionSpec":
        """
        Accepts `const:0.4`, `entropy`, `j:er=0.1,delta=0.1`, `omega:ee=0.2`
        and `table:0.2/0.8=0.1;0.5/0.5=0.3` (U-marginal=rate pairs).
        """
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        if kind == "table":
            entries = []
            for item in filter(None, (p.strip() for p in rest.split(";"))):
                point, sep, rate = item.partition("=")
                if not sep:
                    raise ConfigError(f"table entry {item!r} needs '<marginal>=<rate>'")
                try:
                    q = [float(x) for x in point.split("/")]
                    entries.append((q, float(rate)))
                except ValueError:
                    raise ConfigError(f"table entry {item!r} is not numeric")
            return cls(kind=RateKind.TABLE, table=entries)
        _, params = _params(text)
        if kind in ("const", "constant"):
            return cls.constant(_number(params, "value"))
        if kind == "entropy":
            return cls(kind=RateKind.ENTROPY)
        if kind in ("j", "j_rate"):
            return cls(kind=RateKind.J_RATE, e_r=_number(params, "er"), delta=_number(params, "delta"))
        if kind in ("omega", "omega_rate"):
            return cls(kind=RateKind.OMEGA_RATE, e_e=_number(params, "ee"))
        raise ConfigError(f"unknown rate kind {kind!r}")

    def label(self) -> str:
        if self.kind == RateKind.CONSTANT:
            return f"const:{self.value:g}"
        if self.kind == RateKind.J_RATE:
            return f"j:er={self.e_r:g},delta={self.delta:g}"
        if self.kind == RateKind.OMEGA_RATE:
            return f"omega:ee={self.e_e:g}"
        return self.kind.value


class DecoderSpec(BaseModel):
    kind: DecoderKind = DecoderKind.MAP
    metric: MetricSpec = Field(default_factory=MetricSpec)

    @classmethod
    def parse(cls, kind: str, metric: Optional[MetricSpec] = None) -> "DecoderSpec":
        try:
            decoder = DecoderKind(kind.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown decoder {kind!r}")
        if decoder in (DecoderKind.MCE, DecoderKind.SCE):
            metric = MetricSpec(kind=MetricKind.NEG_COND_ENTROPY)
        return cls(kind=decoder, metric=metric or MetricSpec())


class ExponentResult(BaseModel):
    value: float
    witness: Optional[List[Any]] = None
    feasible: bool = True
    est_error: float = Field(default=0.0, ge=0)
    refinement_rounds: int = 0

    @field_validator("value")
    @classmethod
    def _nonnegative(cls, v: float) -> float:
        if v < 0:
            raise ValueError(f"exponent must be nonnegative, got {v}")
        return v


class TradeoffPoint(BaseModel):
    x: float
    y: float
    witness: Optional[List[Any]] = None
    y_trc: Optional[float] = None
    plateau: Optional[float] = None


class EnsembleEstimate(BaseModel):
    n: int
    codes: int
    seed: int
    decoder: str
    rate_spec: str
    mean_pe: float
    mean_log_pe: float
    se_pe: float
    se_log_pe: float
    per_code_pe: List[float]
    exponent_rc: float
    exponent_trc: float
    zero_pe_codes: int = 0
    all_zero: bool = False


class ZCheckReport(BaseModel):
    n: int
    epsilon: float
    trials: int
    skipped: int
    violations: int
    violation_fraction: float
    tail_bound: float


class SweepSpec(BaseModel):
    variable: str
    start: float
    stop: float
    steps: int = Field(ge=1)

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        parts = text.split(":")
        if len(parts) != 4:
            raise ConfigError(f"sweep must be var:min:max:steps, got {text!r}")
        try:
            return cls(variable=parts[0].strip(), start=float(parts[1]), stop=float(parts[2]), steps=int(parts[3]))
        except ValueError as e:
            raise ConfigError(f"bad sweep {text!r}: {e}")

    def values(self) -> List[float]:
        if self.steps == 1:
            return [self.start]
        h = (self.stop - self.start) / (self.steps - 1)
        return [self.start + i * h for i in range(self.steps)]


class JobConfig(BaseModel):
    command: str
    source: Optional[List[List[float]]] = None
    source_name: str = "source"
    metric: MetricSpec = Field(default_factory=MetricSpec)
    rate: RateFunctionSpec = Field(default_factory=RateFunctionSpec)
    kind: str = "er_map"
    mode: str = "e_given_er"
    decoder: str = "map"
    sweep: Optional[SweepSpec] = None
    delta: float = 0.1
    er: float = 0.0
    ee: float = 0.0
    n: int = Field(default=8, ge=1)
    codes: int = Field(default=100, ge=1)
    seed: int = Field(default_factory=lambda: Config.DEFAULT_SEED, ge=0)
    epsilon: Optional[float] = Field(default=None, gt=0)
    out_dir: str = Field(default_factory=lambda: Config.OUTPUT_DIR)
    oracle: bool = False
    cross_check: bool = False
    oracle_step: float = 1.0 / 128
    settings: OptimizerSettings = Field(default_factory=OptimizerSettings.from_config)
