"""Pipeline configuration.

A :class:`PipelineConfig` can be loaded from JSON or from plain
``key = value`` lines (``#`` starts a comment). Unknown keys are rejected so
typos fail loudly.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidConfigurationError

CONFIG_ENV_VAR = "HDSEMG_SHIFT_CONFIG"

# settings that change how work is scheduled but never what is computed
_EXECUTION_ONLY = ("n_jobs",)


@dataclass(frozen=True)
class PipelineConfig:
    bandpass_low_hz: float = 20.0
    bandpass_high_hz: float = 450.0
    bandpass_order: int = 8
    notch_base_hz: float = 60.0
    notch_width_hz: float = 2.0
    notch_max_hz: float = 450.0
    open_window_s: float = 0.5
    open_rms_floor_v: float = 0.5e-6
    envelope_cutoff_hz: float = 2.0
    envelope_order: int = 8
    channel_reduction: str = "grid-mean"
    threshold_frac: float = 0.2
    min_duration_s: float = 0.5
    welch_window_s: float = 0.2
    welch_overlap_frac: float = 0.5
    max_sep_cm: float = 0.5
    rms_tol_cm: float = 0.3
    shape_tol: float = 0.15
    include_self: bool = False
    confidence: float = 0.95
    n_resamples: int = 2000
    alpha: float = 0.05
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            try:
                v = _parse_bool(v) if f.type is bool and isinstance(v, str) else f.type(v)
            except (TypeError, ValueError) as exc:
                raise InvalidConfigurationError(f"config key {f.name!r}: cannot use {v!r} ({exc})") from exc
            object.__setattr__(self, f.name, v)
        if self.channel_reduction not in ("grid-mean", "per-channel"):
            raise InvalidConfigurationError("channel_reduction must be grid-mean or per-channel")
        if not 0 < self.confidence < 1:
            raise InvalidConfigurationError("confidence must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise InvalidConfigurationError("alpha must lie in (0, 1)")
        if self.n_jobs < 1:
            raise InvalidConfigurationError("n_jobs must be >= 1")
        if self.seed < 0:
            raise InvalidConfigurationError("seed must be a non-negative integer")

    @classmethod
    def from_mapping(cls, mapping):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise InvalidConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**mapping)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InvalidConfigurationError(f"{path}: cannot read config ({exc})") from exc
        if text.lstrip().startswith("{"):
            try:
                mapping = json.loads(text)
            except json.JSONDecodeError as exc:
                raise InvalidConfigurationError(f"{path}: malformed JSON config ({exc})") from exc
        else:
            mapping = {}
            for n, raw in enumerate(text.splitlines(), 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InvalidConfigurationError(f"{path}:{n}: expected key = value")
                key, value = (s.strip() for s in line.split("=", 1))
                mapping[key] = value
        return cls.from_mapping(mapping)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self, include_execution=False):
        d = dataclasses.asdict(self)
        if not include_execution:
            for k in _EXECUTION_ONLY:
                d.pop(k)
        return d

    def config_hash(self):
        """SHA-256 of the result-affecting settings."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")
