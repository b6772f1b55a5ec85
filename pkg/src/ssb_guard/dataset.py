"""
Scenario-driven dataset generation, the SSBJAM01 dataset file, manifests and
IQ capture ingestion
"""

import csv
import hashlib
import json
import math
import re
import struct
from collections.abc import Iterable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from types import TracebackType
from typing import Any, BinaryIO

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from ssb_guard.channel import (
    SSB_BAND,
    add_thermal_noise,
    apply_channel,
    inject_jammer,
    thermal_noise_power,
)
from ssb_guard.config import ScenarioConfig, SyncSettings
from ssb_guard.constants import (
    DATASET_MAGIC,
    DATASET_VERSION,
    DEFAULT_N_FFT,
    FEATURE_ROWS,
    MANIFEST_SUFFIX,
    N_ID2_VALUES,
    SSB_SUBCARRIERS,
    SSB_SYMBOLS,
    UNLABELED,
)
from ssb_guard.exceptions import (
    FormatException,
    NoSsbFoundException,
    ParseException,
    ValidationException,
)
from ssb_guard.features import Hypothesis, Observation, circular_shift_augment, observe
from ssb_guard.logger import get_logger
from ssb_guard.sync import balanced_metric, derotate, estimate_timing, extract_ssb, search_cfo
from ssb_guard.validators import validate_positive_integer, validate_probability
from ssb_guard.waveform import (
    TimeSignal,
    build_ssb_grid,
    centered_ssb_offset,
    embed_in_band,
    measure_power,
    ofdm_demodulate,
    ofdm_modulate,
    scale_to_power,
)

logger = get_logger(__name__)

# magic, version, n_fft, n_obs, rows, cols
_HEADER = struct.Struct("<8sIIIII")
_N_OBS_OFFSET = 8 + 4 + 4
# label, sjnr_db, distance_m
_RECORD = struct.Struct("<Bff")

_SEEDS_PER_DRAW = 7

# an IQ field that starts like a number is data, even when it fails to parse
_NUMBER_START = re.compile(r"\s*[-+]?(\d|\.\d)")


class ScenarioDraw(BaseModel):
    """One sampled scenario point and the seeds of every random stage"""

    model_config = ConfigDict(frozen=True)

    index: int
    label: Hypothesis
    n_id2: int
    modulation: str
    sjnr_db: float | None
    distance_m: float
    grid_seed: int
    data_seed: int
    channel_seed: int
    noise_seed: int
    jammer_seed: int

    @model_validator(mode="after")
    def _jammed_has_sjnr(self) -> "ScenarioDraw":
        if self.label == Hypothesis.H1 and self.sjnr_db is None:
            raise ValueError("jammed draws need an sjnr_db")
        return self

    @property
    def jammed(self) -> bool:
        return self.label == Hypothesis.H1


@dataclass
class GeneratedDataset:
    observations: list[Observation]
    draws: list[ScenarioDraw]


@dataclass
class DatasetFile:
    """Decoded contents of an SSBJAM01 file"""

    n_fft: int
    rows: int
    cols: int
    observations: list[Observation] = field(default_factory=list)

    @property
    def n_obs(self) -> int:
        return len(self.observations)


# ============================================================================
# Generation
# ============================================================================


def draw_scenarios(cfg: ScenarioConfig) -> list[ScenarioDraw]:
    """
    Interleaved H0/H1 scenario points

    Index 2c is the H0 draw and 2c + 1 the H1 draw of cell c mod n_cells, the
    cells being every (modulation, n_id2) pair, so per-cell counts differ by
    at most one. SJNR and distance are drawn uniformly from the grids with
    seeds derived from (master_seed, index).
    """
    cells = [(m, n_id2) for m in cfg.modulations for n_id2 in N_ID2_VALUES]
    draws = []
    for index in range(2 * cfg.n_obs_per_class):
        c, label = divmod(index, 2)
        modulation, n_id2 = cells[c % len(cells)]

        seeds = np.random.SeedSequence(cfg.master_seed, spawn_key=(index,)).generate_state(
            _SEEDS_PER_DRAW
        )
        picker = np.random.default_rng(int(seeds[0]))
        sjnr = float(picker.choice(cfg.sjnr_grid_db))
        distance = float(picker.choice(cfg.distance_grid_m))

        draws.append(
            ScenarioDraw(
                index=index,
                label=Hypothesis(label),
                n_id2=n_id2,
                modulation=modulation,
                sjnr_db=sjnr if label == Hypothesis.H1 else None,
                distance_m=distance,
                grid_seed=int(seeds[1]),
                data_seed=int(seeds[2]),
                channel_seed=int(seeds[3]),
                noise_seed=int(seeds[4]),
                jammer_seed=int(seeds[5]),
            )
        )
    return draws


def synthesize_capture(cfg: ScenarioConfig, draw: ScenarioDraw) -> tuple[TimeSignal, TimeSignal]:
    """
    The received SSB burst of one draw

    Returns:
        (received, clean) where clean is the channel output before noise and jamming
    """
    band = cfg.band_subcarriers
    ssb = build_ssb_grid(draw.n_id2, seed=draw.grid_seed)
    grid = embed_in_band(ssb, band, centered_ssb_offset(band), draw.modulation, draw.data_seed)
    tx = ofdm_modulate(grid, cfg.n_fft, cfg.cp_length, cfg.scs_hz)
    tx = scale_to_power(tx, 10.0 ** (cfg.gnb_power_db / 10.0))

    channel = cfg.channel.model_copy(
        update={"seed": draw.channel_seed, "distance_m": draw.distance_m}
    )
    clean = apply_channel(tx, channel)
    received = add_thermal_noise(clean, cfg.temperature_k, cfg.sample_rate_hz, draw.noise_seed)

    if draw.jammed:
        jammer = cfg.jammer.model_copy(update={"sjnr_db": draw.sjnr_db, "seed": draw.jammer_seed})
        received = inject_jammer(
            received,
            jammer,
            ssb_span=(0, len(received)),
            ssb_band=SSB_BAND,
            reference_power=measure_power(clean.samples),
            noise_power=thermal_noise_power(cfg.temperature_k, cfg.sample_rate_hz),
        )
    return received, clean


def generate_observation(cfg: ScenarioConfig, draw: ScenarioDraw) -> Observation:
    """
    Synthesize one labeled observation

    The burst starts at sample 0, so the SSB is cut at its true timing; blind
    synchronization is only used for ingested captures.
    """
    received, _ = synthesize_capture(cfg, draw)
    grid = ofdm_demodulate(received, SSB_SUBCARRIERS, SSB_SYMBOLS, start=0)
    cp = cfg.cp_length
    y_pss = received.samples[cp : cp + cfg.n_fft]

    meta: dict[str, Any] = {
        "index": draw.index,
        "n_id2": draw.n_id2,
        "modulation": draw.modulation,
        "distance_m": draw.distance_m,
    }
    if draw.jammed:
        meta["jammer"] = str(cfg.jammer.kind)
    logger.debug("Generated observation", extra=meta)
    return observe(y_pss, grid, draw.label, sjnr_db=draw.sjnr_db, meta=meta)


def generate_dataset(cfg: ScenarioConfig, workers: int = 1) -> GeneratedDataset:
    """
    n_obs_per_class observations per class, in draw order

    Args:
        cfg: Scenario parameters
        workers: Process count; 1 runs in-process
    """
    validate_positive_integer(workers, "workers")
    draws = draw_scenarios(cfg)
    logger.info(
        "Generating dataset",
        extra={"n_obs": len(draws), "workers": workers, "n_fft": cfg.n_fft},
    )

    build = partial(generate_observation, cfg)
    if workers == 1:
        observations = [build(draw) for draw in draws]
    else:
        chunksize = max(1, len(draws) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            observations = list(pool.map(build, draws, chunksize=chunksize))

    logger.info("Dataset generated", extra={"n_obs": len(observations)})
    return GeneratedDataset(observations=observations, draws=draws)


# ============================================================================
# Class handling
# ============================================================================


def split_observations(
    observations: list[Observation],
    fraction: float,
    seed: int,
) -> tuple[list[Observation], list[Observation]]:
    """
    Stratified split; about fraction of each class goes to the second part

    Both parts keep the input order.

    Raises:
        ValidationException: Unlabeled observations or fraction outside (0, 1)
    """
    validate_probability(fraction, "fraction")
    if any(obs.label is None for obs in observations):
        raise ValidationException("observations", "All observations must be labeled")

    rng = np.random.default_rng(seed)
    second: set[int] = set()
    for label in Hypothesis:
        members = [i for i, obs in enumerate(observations) if obs.label == label]
        n_take = int(round(fraction * len(members)))
        second.update(rng.permutation(members)[:n_take].tolist())

    first_part = [obs for i, obs in enumerate(observations) if i not in second]
    second_part = [obs for i, obs in enumerate(observations) if i in second]
    return first_part, second_part


def balance_classes(
    observations: list[Observation],
    n_segments: int,
    seed: int,
) -> list[Observation]:
    """
    Pad the minority class with circular-shift augmented copies

    Returns:
        The input followed by the augmented observations
    """
    by_label = {label: [obs for obs in observations if obs.label == label] for label in Hypothesis}
    counts = {label: len(group) for label, group in by_label.items()}
    minority = min(counts, key=lambda label: counts[label])
    missing = max(counts.values()) - counts[minority]
    if missing == 0:
        return list(observations)
    if counts[minority] == 0:
        raise ValidationException("observations", f"No {minority.name} observations to augment")

    source = by_label[minority]
    extra = [
        circular_shift_augment(source[i % len(source)], n_segments, seed + i)
        for i in range(missing)
    ]
    logger.info(
        "Balanced classes",
        extra={"augmented_label": minority.name, "n_augmented": missing},
    )
    return list(observations) + extra


# ============================================================================
# Dataset file
# ============================================================================


class DatasetWriter:
    """
    Append-only SSBJAM01 writer

    The header is written with n_obs = 0 and patched on a clean close.
    """

    def __init__(self, path: str | Path, n_fft: int, rows: int = FEATURE_ROWS):
        self.path = Path(path)
        self.n_fft = n_fft
        self.rows = rows
        self.cols = n_fft // 2
        self.count = 0
        self._file: BinaryIO | None = None

    def __enter__(self) -> "DatasetWriter":
        self._file = open(self.path, "wb")
        self._file.write(
            _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, self.n_fft, 0, self.rows, self.cols)
        )
        return self

    def append(self, obs: Observation) -> None:
        if self._file is None:
            raise ValidationException("writer", "DatasetWriter used outside its with-block")
        if obs.tensor.shape != (self.rows, self.cols):
            raise ValidationException(
                "tensor", f"Expected shape {(self.rows, self.cols)}, got {obs.tensor.shape}"
            )
        label = UNLABELED if obs.label is None else int(obs.label)
        sjnr = math.nan if obs.sjnr_db is None else obs.sjnr_db
        distance = float(obs.meta.get("distance_m", math.nan))
        self._file.write(_RECORD.pack(label, sjnr, distance))
        self._file.write(np.ascontiguousarray(obs.tensor, dtype="<f4").tobytes())
        self.count += 1

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._file is None:
            return
        # an aborted write keeps n_obs = 0 so readers reject the partial file
        if exc_type is None:
            self._file.seek(_N_OBS_OFFSET)
            self._file.write(struct.pack("<I", self.count))
        self._file.close()
        self._file = None


def save_dataset(
    observations: Iterable[Observation],
    path: str | Path,
    n_fft: int | None = None,
) -> int:
    """
    Write observations to an SSBJAM01 file

    Args:
        n_fft: FFT size for the header; inferred from the first tensor when None

    Returns:
        Number of records written
    """
    observations = list(observations)
    if n_fft is None:
        n_fft = 2 * observations[0].tensor.shape[1] if observations else DEFAULT_N_FFT
    with DatasetWriter(path, n_fft) as writer:
        for obs in observations:
            writer.append(obs)
    logger.info("Saved dataset", extra={"path": str(path), "n_obs": writer.count})
    return writer.count


def load_dataset(path: str | Path) -> DatasetFile:
    """
    Read an SSBJAM01 file

    Raises:
        FormatException: Bad magic, version or shape, or a truncated record
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatException(path, "shorter than the header", offset=len(data))

    magic, version, n_fft, n_obs, rows, cols = _HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise FormatException(path, f"bad magic {magic!r}", offset=0)
    if version != DATASET_VERSION:
        raise FormatException(path, f"unsupported version {version}", offset=8)
    if rows != FEATURE_ROWS or cols != n_fft // 2:
        raise FormatException(
            path, f"tensor shape {rows}x{cols} does not fit n_fft={n_fft}", offset=20
        )

    tensor_bytes = rows * cols * 4
    offset = _HEADER.size
    observations = []
    for record in range(n_obs):
        if offset + _RECORD.size + tensor_bytes > len(data):
            raise FormatException(path, "truncated record", offset=offset, record=record)
        label, sjnr, distance = _RECORD.unpack_from(data, offset)
        offset += _RECORD.size
        tensor = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
        offset += tensor_bytes

        if label not in (Hypothesis.H0, Hypothesis.H1, UNLABELED):
            record_start = offset - tensor_bytes - _RECORD.size
            raise FormatException(path, f"bad label {label}", offset=record_start, record=record)
        observations.append(
            Observation(
                tensor=tensor.astype(np.float64).reshape(rows, cols),
                label=None if label == UNLABELED else Hypothesis(label),
                sjnr_db=None if math.isnan(sjnr) else float(sjnr),
                meta={} if math.isnan(distance) else {"distance_m": float(distance)},
            )
        )

    if offset != len(data):
        raise FormatException(path, f"{len(data) - offset} trailing bytes", offset=offset)
    return DatasetFile(n_fft=n_fft, rows=rows, cols=cols, observations=observations)


def file_sha256(path: str | Path, chunk_size: int = 8192) -> str:
    """SHA-256 hex digest of a file, read in chunks"""
    sha256 = hashlib.sha256()
    with open(path, "rb") as f:
        while chunk := f.read(chunk_size):
            sha256.update(chunk)
    return sha256.hexdigest()


# ============================================================================
# Manifest
# ============================================================================


def manifest_path(dataset_path: str | Path) -> Path:
    return Path(dataset_path).with_suffix(MANIFEST_SUFFIX)


def write_manifest(
    path: str | Path,
    cfg: ScenarioConfig,
    draws: list[ScenarioDraw],
    dataset_sha256: str,
) -> None:
    """JSON Lines: a header with the scenario and dataset digest, then one draw per line"""
    header = {
        "kind": "ssb_guard.manifest",
        "version": DATASET_VERSION,
        "n_obs": len(draws),
        "dataset_sha256": dataset_sha256,
        "scenario": cfg.model_dump(mode="json"),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for draw in draws:
            f.write(draw.model_dump_json() + "\n")


def read_manifest(path: str | Path) -> tuple[dict[str, Any], list[ScenarioDraw]]:
    """
    Raises:
        ParseException: On an empty file or a malformed line
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseException(path, 1, "empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseException(path, 1, f"bad header: {exc.msg}") from exc

    draws = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            draws.append(ScenarioDraw.model_validate_json(line))
        except ValueError as exc:
            raise ParseException(path, number, "bad draw record") from exc
    return header, draws


# ============================================================================
# IQ captures
# ============================================================================


def write_iq_csv(path: str | Path, samples: np.ndarray, header: bool = True) -> None:
    """One `I,Q` line per sample, floats written losslessly"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        if header:
            writer.writerow(["i", "q"])
        for value in np.asarray(samples, dtype=np.complex128):
            writer.writerow([repr(float(value.real)), repr(float(value.imag))])


def read_iq_csv(path: str | Path) -> np.ndarray:
    """
    Parse an `I,Q` capture; a first line of text fields is taken as a header

    Raises:
        ParseException: Wrong field count or a non-numeric field, with its line number
    """
    path = Path(path)
    values: list[complex] = []
    with open(path, newline="", encoding="utf-8") as f:
        for number, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ParseException(path, number, f"expected 2 fields, got {len(row)}")
            try:
                values.append(complex(float(row[0]), float(row[1])))
            except ValueError as exc:
                if number == 1 and not any(_NUMBER_START.match(cell) for cell in row):
                    continue
                raise ParseException(path, number, f"non-numeric field in {row}") from exc
    return np.array(values, dtype=np.complex128)


def ingest_capture(
    signal: TimeSignal,
    cp_length: int,
    sync: SyncSettings,
    meta: dict[str, Any] | None = None,
) -> Observation:
    """
    Blind synchronization plus the feature pipeline on one capture

    The CFO search yields the PSS position; timing is then refined within one
    CP of it and must reach sync.metric_threshold.

    Raises:
        NoSsbFoundException: Weak timing metric or an SSB running past the capture
    """
    n_fft = signal.n_fft
    scs_hz = signal.sample_rate_hz / n_fft
    estimate = search_cfo(signal, scs_hz, sync.cfo_grid_points, sync.refine_factor)
    aligned = derotate(signal, estimate.frequency_hz)

    guess = estimate.peak_index - cp_length
    window = (guess - cp_length, guess + cp_length + 1)
    t_off = estimate_timing(aligned, n_fft, cp_length, search=window, balanced=True)
    metric = float(balanced_metric(aligned, cp_length, n_fft)[t_off])
    if metric < sync.metric_threshold:
        raise NoSsbFoundException(metric, sync.metric_threshold)
    if t_off + SSB_SYMBOLS * (n_fft + cp_length) > len(signal):
        raise NoSsbFoundException(
            metric, sync.metric_threshold, reason=f"SSB at {t_off} runs past the capture end"
        )

    grid = extract_ssb(signal, t_off, estimate.frequency_hz, n_fft, cp_length)
    start = t_off + cp_length
    y_pss = aligned.samples[start : start + n_fft]

    details = {
        **(meta or {}),
        "cfo_hz": estimate.frequency_hz,
        "n_id2": estimate.n_id2,
        "t_off": t_off,
        "sync_metric": metric,
    }
    logger.info("Synchronized capture", extra=details)
    return observe(y_pss, grid, None, meta=details)


def ingest_iq_csv(path: str | Path, scenario: ScenarioConfig, sync: SyncSettings) -> Observation:
    """
    Unlabeled observation from an IQ CSV capture

    Args:
        path: Capture file
        scenario: Numerology of the capture (n_fft, scs_hz)
        sync: CFO grid, refinement and metric threshold

    Raises:
        ParseException: Malformed line
        NoSsbFoundException: No SSB located
    """
    samples = read_iq_csv(path)
    cp = scenario.cp_length
    needed = SSB_SYMBOLS * (scenario.n_fft + cp)
    if len(samples) < needed:
        raise NoSsbFoundException(
            0.0, sync.metric_threshold, reason=f"{len(samples)} samples, an SSB needs {needed}"
        )
    signal = TimeSignal(
        samples=samples,
        sample_rate_hz=scenario.sample_rate_hz,
        n_fft=scenario.n_fft,
        cp_lengths=(cp,) * SSB_SYMBOLS,
    )
    return ingest_capture(signal, cp, sync, meta={"source": str(path)})
