"""Training configuration and its ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .activation import KPOINT, MEAN_TOPK
from .contrastive import VARIANTS
from .errors import ConfigError
from .model import LossSwitches


@dataclass
class TrainConfig:
    k: int = 10
    gamma0: float = 3.1
    lr: float = 0.001
    mask_ratio: float = 0.5
    batch: int = 8
    steps: int = 2000
    seed: int = 0
    scl_variant: str = "clip-infonce"
    channels: tuple[int, int, int] = (64, 64, 64)
    d_v: int = 128
    d_a: int = 128
    window: int = 150
    rms_alpha: float = 0.9
    rms_eps: float = 1e-8
    use_sa: bool = True
    use_rasl: bool = True
    use_auxiliary: bool = True
    use_visual: bool = True
    use_audio: bool = True
    rasl_variant: str = KPOINT
    scl_pool_batch: bool = False
    early_stop: bool = False
    early_stop_window: int = 200
    early_stop_tol: float = 0.001

    def __post_init__(self) -> None:
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.mask_ratio < 1:
            raise ConfigError("mask_ratio must lie in [0, 1)")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.batch < 1:
            raise ConfigError("batch must be at least 1")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.gamma0 <= 0:
            raise ConfigError("gamma0 must be positive")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError("channels needs three positive widths")
        if self.window < 8:
            raise ConfigError("window must cover at least 8 timesteps")
        if self.scl_variant not in VARIANTS:
            raise ConfigError(f"scl_variant must be one of {VARIANTS}")
        if self.rasl_variant not in (KPOINT, MEAN_TOPK):
            raise ConfigError(f"rasl_variant must be {KPOINT!r} or {MEAN_TOPK!r}")
        if not (self.use_visual or self.use_audio):
            raise ConfigError("at least one modality must be trained")

    def switches(self) -> LossSwitches:
        return LossSwitches(
            k=self.k,
            use_sa=self.use_sa,
            use_rasl=self.use_rasl,
            use_auxiliary=self.use_auxiliary,
            use_visual=self.use_visual,
            use_audio=self.use_audio,
            rasl_variant=self.rasl_variant,
            scl_variant=self.scl_variant,
            scl_pool_batch=self.scl_pool_batch,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool):
                text = "true" if val else "false"
            elif isinstance(val, tuple):
                text = ",".join(str(v) for v in val)
            else:
                text = repr(val) if isinstance(val, float) else str(val)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        values = dataclasses.asdict(base) if base is not None else {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(key, val, known[key].default)
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), base)


def _parse(key: str, text: str, default):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None
