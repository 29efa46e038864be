import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional, Tuple

from src.errors import InputError

REGIMES = ("hier-only", "textattr", "taxonssl", "combined")
OPTIMIZERS = ("sgd", "adam")
STAGE_ORDERS = ("textattr-first", "taxonssl-first")


@dataclass
class TrainConfig:
    """Training configuration; field names match the JSON config file keys"""
    regime: str = "hier-only"
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    optimizer: str = "adam"
    momentum: float = 0.9
    cosine_decay: bool = True
    warmup_epochs: int = 5
    tau: float = 0.1  # text alignment temperature
    tacl_temperature: float = 0.1
    tacl_form: str = "printed"
    alpha: float = 0.0
    lambda_pl: float = 0.0
    lambda_tacl: float = 0.0
    k_start: float = 20.0
    k_end: float = 80.0
    memory_bank_size: int = 2048
    weak_noise: float = 0.05
    strong_noise: float = 0.2
    strong_dropout: float = 0.2
    hidden_dims: Tuple[int, ...] = (128, 128)
    head_layers: Optional[Tuple[int, ...]] = None
    holdout_fraction: float = 0.2
    stage_switch_epoch: Optional[int] = None
    stage_order: str = "textattr-first"
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["hidden_dims"] = list(self.hidden_dims)
        data["head_layers"] = list(self.head_layers) if self.head_layers is not None else None
        return data

    def config_hash(self) -> str:
        encoded = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()[:16]

    def validate(self):
        if self.regime not in REGIMES:
            raise InputError(f"regime must be one of {REGIMES}, got '{self.regime}'")
        if self.optimizer not in OPTIMIZERS:
            raise InputError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if self.stage_order not in STAGE_ORDERS:
            raise InputError(f"stage_order must be one of {STAGE_ORDERS}, got '{self.stage_order}'")
        if self.tacl_form not in ("printed", "supcon"):
            raise InputError(f"tacl_form must be 'printed' or 'supcon', got '{self.tacl_form}'")
        for name in ("epochs", "batch_size", "memory_bank_size"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("learning_rate", "tau", "tacl_temperature"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("weight_decay", "alpha", "lambda_pl", "lambda_tacl", "weak_noise", "strong_noise", "warmup_epochs"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 <= self.strong_dropout < 1.0:
            raise InputError(f"strong_dropout must be in [0, 1), got {self.strong_dropout}")
        for name in ("k_start", "k_end"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise InputError(f"{name} must be in [0, 100], got {getattr(self, name)}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise InputError(f"holdout_fraction must be in (0, 1), got {self.holdout_fraction}")
        if self.stage_switch_epoch is not None:
            if self.regime != "combined":
                raise InputError("stage_switch_epoch only applies to the combined regime")
            if not 0 < self.stage_switch_epoch < self.epochs:
                raise InputError(f"stage_switch_epoch must lie in 1..{self.epochs - 1}, got {self.stage_switch_epoch}")
        return self


def regime_defaults(regime: str) -> Dict[str, Any]:
    """Per-regime defaults: optimizer split and loss weights"""
    if regime == "textattr":
        return {"optimizer": "adam", "learning_rate": 5e-4, "alpha": 1.0, "lambda_pl": 0.0, "lambda_tacl": 0.0}
    elif regime == "taxonssl":
        return {"optimizer": "sgd", "momentum": 0.9, "learning_rate": 1e-3,
                "alpha": 0.0, "lambda_pl": 1.0, "lambda_tacl": 1.0}
    elif regime == "combined":
        return {"optimizer": "adam", "learning_rate": 5e-4, "alpha": 1.0, "lambda_pl": 1.0, "lambda_tacl": 1.0}
    elif regime == "hier-only":
        return {"optimizer": "adam", "learning_rate": 1e-3, "alpha": 0.0, "lambda_pl": 0.0, "lambda_tacl": 0.0}
    raise InputError(f"regime must be one of {REGIMES}, got '{regime}'")


def _coerce(values: Dict[str, Any], source: str) -> Dict[str, Any]:
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InputError(f"unknown config key '{unknown[0]}'", path=source)
    coerced = dict(values)
    for key in ("hidden_dims", "head_layers"):
        if coerced.get(key) is not None:
            coerced[key] = tuple(int(v) for v in coerced[key])
    return coerced


def load_config(path: Optional[str] = None, regime: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """
    Resolve a TrainConfig: field defaults, then the regime's defaults,
    then the JSON file, then explicit overrides (None values are ignored).
    """
    file_values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "r") as f:
                file_values = json.load(f)
        except FileNotFoundError:
            raise InputError("config file not found", path=path)
        except json.JSONDecodeError as e:
            raise InputError(f"malformed JSON: {e.msg}", path=path, line=e.lineno)
        if not isinstance(file_values, dict):
            raise InputError("config must be a JSON object", path=path)
        file_values = _coerce(file_values, path)

    overrides = _coerce({k: v for k, v in (overrides or {}).items() if v is not None}, "overrides")
    chosen = overrides.get("regime") or regime or file_values.get("regime") or "hier-only"

    config = {"regime": chosen}
    config.update(regime_defaults(chosen))
    config.update({k: v for k, v in file_values.items() if k != "regime"})
    config.update({k: v for k, v in overrides.items() if k != "regime"})
    try:
        return TrainConfig(**config).validate()
    except TypeError as e:
        raise InputError(f"bad config value: {e}", path=path)
