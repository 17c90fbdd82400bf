"""Run configuration shared by the command-line entry points."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from typing import Optional

METHODS = ("qm", "ncg", "ncg-d", "ncg-ic0", "ncg-ic")


class ConfigError(ValueError):
    pass


_POW = re.compile(r"^\s*([0-9.]+)\s*(?:\^|\*\*)\s*([-+]?[0-9.]+)\s*$")


def parse_beta(text) -> float:
    """Parse a regularization weight such as ``0.0625``, ``2^-4`` or ``2**-4``."""
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        m = _POW.match(str(text))
        try:
            value = float(m.group(1)) ** float(m.group(2)) if m else float(text)
        except (ValueError, OverflowError) as exc:
            raise ConfigError(f"cannot parse beta {text!r}") from exc
    if not math.isfinite(value) or value < 0:
        raise ConfigError(f"beta must be finite and nonnegative, got {text!r}")
    return value


def parse_snr(text) -> Optional[float]:
    if text is None:
        return None
    if str(text).strip().lower() in ("inf", "none", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse SNR {text!r}") from exc


@dataclass
class RunConfig:
    mode: str = "fieldmap"
    beta: float = 2.0**-4
    beta_text: str = "2^-4"
    order: int = 1
    method: str = "ncg-ic"
    ict_scale: float = 1e-3
    n_outer: int = 20
    n_inner: int = 10
    sweep_size: int = 100
    pwls_cg: int = 10
    seed: int = 0
    threshold_frac: float = 0.1
    dilation: int = 2
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("fieldmap", "waterfat"):
            raise ConfigError(f"mode must be 'fieldmap' or 'waterfat', got {self.mode!r}")
        if self.order not in (1, 2):
            raise ConfigError(f"regularizer order must be 1 or 2, got {self.order}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if not self.ict_scale > 0:
            raise ConfigError("ict scale must be positive")
        if self.n_outer < 1 or self.n_inner < 1:
            raise ConfigError("iteration counts must be at least 1")
        if self.sweep_size < 2:
            raise ConfigError("sweep size must be at least 2")
        if self.pwls_cg < 0:
            raise ConfigError("PWLS CG count must be nonnegative")
        if not 0 < self.threshold_frac < 1:
            raise ConfigError("mask threshold fraction must lie in (0, 1)")
        if self.dilation < 0:
            raise ConfigError("dilation must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)
