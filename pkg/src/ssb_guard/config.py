"""
Configuration models, process settings and the key=value config file loader
"""

import re
from enum import StrEnum
from functools import lru_cache
from pathlib import Path
from typing import Any

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from ssb_guard.constants import (
    CFO_REFINE_FACTOR,
    DEFAULT_AUGMENT_SEGMENTS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CALIBRATION_FRACTION,
    DEFAULT_CARRIER_HZ,
    DEFAULT_CFO_GRID_POINTS,
    DEFAULT_CONV_CHANNELS,
    DEFAULT_CONV_KERNELS,
    DEFAULT_DELAY_SPREAD_NS,
    DEFAULT_DELTA_FA,
    DEFAULT_DISTANCE_GRID_M,
    DEFAULT_GNB_POWER_DB,
    DEFAULT_HIDDEN_UNITS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_MOMENTUM,
    DEFAULT_N_FFT,
    DEFAULT_N_RB,
    DEFAULT_N_TAPS,
    DEFAULT_OBS_PER_CLASS,
    DEFAULT_SAMPLES_PER_SYMBOL,
    DEFAULT_SCS_HZ,
    DEFAULT_SJNR_CUTOFF_DB,
    DEFAULT_SJNR_GRID_DB,
    DEFAULT_TEMPERATURE_K,
    DEFAULT_VALIDATION_FRACTION,
    DEFAULT_VALIDATION_FREQUENCY,
    NORMAL_CP_RATIO,
    SSB_SUBCARRIERS,
    SUBCARRIERS_PER_RB,
    SUPPORTED_MODULATIONS,
    SYNC_METRIC_THRESHOLD,
)
from ssb_guard.exceptions import ConfigException


class ChannelProfile(StrEnum):
    """Tap templates standing in for the CDL families"""

    LOS_DOMINANT = "los-dominant"
    NLOS_RICH = "nlos-rich"


class JammerKind(StrEnum):
    AWGN = "AWGN"
    BPSK = "BPSK"
    QAM8 = "8QAM"


class JammerCoverage(StrEnum):
    SMART_SSB = "smart-ssb"
    BARRAGE = "barrage"


def _as_list(value: Any) -> Any:
    """Accept a bare scalar where a list is expected"""
    if isinstance(value, (str, int, float)):
        return [value]
    return value


# ============================================================================
# Signal chain
# ============================================================================


class ChannelConfig(BaseModel):
    """Tapped-delay-line channel template"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    profile: ChannelProfile = ChannelProfile.LOS_DOMINANT
    delay_spread_ns: float = Field(DEFAULT_DELAY_SPREAD_NS, ge=0.0)
    n_taps: int = Field(DEFAULT_N_TAPS, ge=1)
    seed: int = 0
    carrier_hz: float = Field(DEFAULT_CARRIER_HZ, gt=0.0)
    distance_m: float = Field(10.0, gt=0.0)


class JammerConfig(BaseModel):
    """Jammer waveform template"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: JammerKind = JammerKind.AWGN
    coverage: JammerCoverage = JammerCoverage.SMART_SSB
    sjnr_db: float = 0.0
    seed: int = 0
    samples_per_symbol: int = Field(DEFAULT_SAMPLES_PER_SYMBOL, ge=1)


class ScenarioConfig(BaseModel):
    """Dataset generation parameters"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sjnr_grid_db: list[float] = Field(default_factory=lambda: list(DEFAULT_SJNR_GRID_DB))
    distance_grid_m: list[float] = Field(default_factory=lambda: list(DEFAULT_DISTANCE_GRID_M))
    n_fft: int = DEFAULT_N_FFT
    scs_hz: float = Field(DEFAULT_SCS_HZ, gt=0.0)
    n_rb: int = Field(DEFAULT_N_RB, ge=1)
    modulations: list[str] = Field(default_factory=lambda: list(SUPPORTED_MODULATIONS))
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    jammer: JammerConfig = Field(default_factory=JammerConfig)
    n_obs_per_class: int = Field(DEFAULT_OBS_PER_CLASS, gt=0)
    master_seed: int = 0
    gnb_power_db: float = DEFAULT_GNB_POWER_DB
    temperature_k: float = Field(DEFAULT_TEMPERATURE_K, gt=0.0)

    @field_validator("sjnr_grid_db", "distance_grid_m", "modulations", mode="before")
    @classmethod
    def _scalar_to_list(cls, value: Any) -> Any:
        return _as_list(value)

    @field_validator("sjnr_grid_db", "distance_grid_m")
    @classmethod
    def _non_empty(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("grid must not be empty")
        return value

    @field_validator("distance_grid_m")
    @classmethod
    def _positive_distances(cls, value: list[float]) -> list[float]:
        if any(d <= 0 for d in value):
            raise ValueError("distances must be positive")
        return value

    @field_validator("modulations")
    @classmethod
    def _known_modulations(cls, value: list[str]) -> list[str]:
        value = [m.upper() for m in value]
        unknown = [m for m in value if m not in SUPPORTED_MODULATIONS]
        if unknown or not value:
            raise ValueError(f"modulations must be a non-empty subset of {SUPPORTED_MODULATIONS}")
        return value

    @model_validator(mode="after")
    def _fft_fits_band(self) -> "ScenarioConfig":
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.band_subcarriers < SSB_SUBCARRIERS:
            raise ValueError(f"n_rb={self.n_rb} is narrower than the SSB")
        if self.band_subcarriers > self.n_fft:
            raise ValueError(f"n_fft={self.n_fft} cannot hold {self.band_subcarriers} subcarriers")
        return self

    @property
    def band_subcarriers(self) -> int:
        return self.n_rb * SUBCARRIERS_PER_RB

    @property
    def sample_rate_hz(self) -> float:
        return self.scs_hz * self.n_fft

    @property
    def cp_length(self) -> int:
        return round(self.n_fft * NORMAL_CP_RATIO)


# ============================================================================
# Learning
# ============================================================================


class TrainConfig(BaseModel):
    """SGDM training hyperparameters"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    batch_size: int = Field(DEFAULT_BATCH_SIZE, gt=0)
    learning_rate: float = Field(DEFAULT_LEARNING_RATE, gt=0.0)
    momentum: float = Field(DEFAULT_MOMENTUM, ge=0.0, lt=1.0)
    max_epochs: int = Field(DEFAULT_MAX_EPOCHS, gt=0)
    validation_fraction: float = Field(DEFAULT_VALIDATION_FRACTION, gt=0.0, lt=1.0)
    validation_frequency: int = Field(DEFAULT_VALIDATION_FREQUENCY, gt=0)
    augment_segments: int = Field(DEFAULT_AUGMENT_SEGMENTS, gt=0)
    seed: int = 0


class ModelLayout(BaseModel):
    """Channel counts and kernel sizes of the three conv blocks and the hidden FC width"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    conv_channels: tuple[int, int, int] = DEFAULT_CONV_CHANNELS
    conv_kernels: tuple[tuple[int, int], tuple[int, int], tuple[int, int]] = DEFAULT_CONV_KERNELS
    hidden_units: int = Field(DEFAULT_HIDDEN_UNITS, gt=0)

    @field_validator("conv_kernels", mode="before")
    @classmethod
    def _parse_kernels(cls, value: Any) -> Any:
        # "2x5,2x5,1x2" from config files
        if isinstance(value, str):
            value = value.split(",")
        if isinstance(value, (list, tuple)):
            return tuple(
                tuple(int(v) for v in item.lower().split("x")) if isinstance(item, str) else item
                for item in value
            )
        return value

    @field_validator("conv_channels")
    @classmethod
    def _positive_channels(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        if any(c <= 0 for c in value):
            raise ValueError("channel counts must be positive")
        return value

    def feature_shape(self, rows: int, cols: int, n_blocks: int = 3) -> tuple[int, int, int]:
        """(channels, rows, cols) after the first n_blocks valid-padding conv blocks"""
        channels = 1
        for (kh, kw), out in zip(self.conv_kernels[:n_blocks], self.conv_channels[:n_blocks]):
            rows, cols, channels = rows - kh + 1, cols - kw + 1, out
        if rows <= 0 or cols <= 0:
            raise ValueError(f"input {rows}x{cols} too small for the conv kernels")
        return channels, rows, cols


# ============================================================================
# Detector / Sync / Evaluation
# ============================================================================


class DetectorSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    delta_fa: float = Field(DEFAULT_DELTA_FA, gt=0.0, lt=1.0)
    sjnr_cutoff_db: float = DEFAULT_SJNR_CUTOFF_DB
    calibration_fraction: float = Field(DEFAULT_CALIBRATION_FRACTION, gt=0.0, lt=1.0)


class SyncSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    cfo_grid_points: int = Field(DEFAULT_CFO_GRID_POINTS, ge=1)
    refine_factor: int = Field(CFO_REFINE_FACTOR, ge=1)
    metric_threshold: float = Field(SYNC_METRIC_THRESHOLD, gt=0.0, le=1.0)


class EvalSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    fa_grid: list[float] = Field(
        default_factory=lambda: [0.01 + i * (0.49 / 19) for i in range(20)]
    )
    sjnr_bin_edges_db: list[float] = Field(default_factory=lambda: [-10.0, 0.0, 10.0, 20.0, 30.0])

    @field_validator("fa_grid", "sjnr_bin_edges_db", mode="before")
    @classmethod
    def _scalar_to_list(cls, value: Any) -> Any:
        return _as_list(value)

    @field_validator("sjnr_bin_edges_db")
    @classmethod
    def _increasing(cls, value: list[float]) -> list[float]:
        if len(value) < 2 or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("bin edges must be at least two strictly increasing values")
        return value


# ============================================================================
# Process settings
# ============================================================================


class LoggingSettings(BaseSettings):
    """Logging configuration"""

    model_config = SettingsConfigDict(env_prefix="LOG_", env_file=".env", extra="ignore")

    level: str = "INFO"
    format: str = "json"  # 'json' or 'text'
    service_name: str | None = "ssb_guard"


class PipelineSettings(BaseSettings):
    """Every tunable of the pipeline, grouped by section"""

    model_config = SettingsConfigDict(
        env_prefix="SSB_", env_nested_delimiter="__", env_file=".env", extra="ignore"
    )

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    layout: ModelLayout = Field(default_factory=ModelLayout)
    detector: DetectorSettings = Field(default_factory=DetectorSettings)
    sync: SyncSettings = Field(default_factory=SyncSettings)
    evaluation: EvalSettings = Field(default_factory=EvalSettings)


@lru_cache
def get_logging_settings() -> LoggingSettings:
    """Get cached logging settings"""
    return LoggingSettings()


@lru_cache
def get_pipeline_settings() -> PipelineSettings:
    """Get cached pipeline settings built from environment and defaults"""
    return PipelineSettings()


# ============================================================================
# key=value config files
# ============================================================================

# Sections that live inside another section of PipelineSettings
SECTION_PATHS: dict[str, tuple[str, ...]] = {
    "channel": ("scenario", "channel"),
    "jammer": ("scenario", "jammer"),
}

_NUMBER = r"[-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?"
_RANGE = re.compile(rf"^({_NUMBER}):({_NUMBER}):({_NUMBER})$")


def parse_value(raw: str) -> Any:
    """
    Turn a raw config value into a scalar string, a list, or an inclusive range

    Examples:
        "30" -> "30"  (pydantic coerces the type)
        "QPSK,16QAM" -> ["QPSK", "16QAM"]
        "-10:30:1" -> [-10.0, -9.0, ..., 30.0]
    """
    raw = raw.strip()
    match = _RANGE.match(raw)
    if match:
        start, stop, step = (float(g) for g in match.groups())
        if step <= 0 or stop < start:
            raise ValueError(f"bad range {raw}")
        count = int(round((stop - start) / step))
        return [start + i * step for i in range(count + 1)]
    if "," in raw:
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def _key_path(key: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in key.split("."))
    if len(parts) < 2 or not all(parts):
        raise ConfigException(key, "keys must be dotted as section.name")
    if parts[0] not in SECTION_PATHS and parts[0] not in PipelineSettings.model_fields:
        raise ConfigException(key, f"unknown section {parts[0]!r}")
    return SECTION_PATHS.get(parts[0], (parts[0],)) + parts[1:]


def _assign(tree: dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = _key_path(key)
    node = tree
    for part in parents:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigException(key, "conflicts with a scalar value")
        node = child
    node[leaf] = value


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """
    Parse key=value lines with dotted sections into a nested dict

    Raises:
        ConfigException: On lines without '=' or with malformed keys/values
    """
    tree: dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigException(f"{source}:{number}", f"expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        try:
            value = parse_value(raw)
        except ValueError as exc:
            raise ConfigException(key.strip(), str(exc)) from exc
        _assign(tree, key.strip(), value)
    return tree


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> PipelineSettings:
    """
    Build pipeline settings from an optional config file plus dotted overrides

    Args:
        path: key=value config file (None for environment and defaults only)
        overrides: Dotted keys taking precedence over the file, e.g.
            {"scenario.n_obs_per_class": 100}

    Returns:
        Validated PipelineSettings

    Raises:
        ConfigException: Missing file, unknown key or invalid value
    """
    tree: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise ConfigException(str(path), "config file not found") from exc
        tree = parse_config_text(text, source=str(path))

    flat: dict[str, Any] = {}
    for key, value in (overrides or {}).items():
        _assign(flat, key, value)
    tree = _merge(tree, flat)

    try:
        return PipelineSettings(**tree)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        raise ConfigException(key, first["msg"]) from exc
