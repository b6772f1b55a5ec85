"""
Shared constants for ssb_guard
"""

# ============================================================================
# PSS / SSB Geometry
# ============================================================================

# Length of the PSS m-sequence in the frequency domain
PSS_LENGTH = 127

# Circular shift between consecutive sector sequences
PSS_SECTOR_SHIFT = 43

# Sector identities N_ID^(2)
N_ID2_VALUES = (0, 1, 2)

# m-sequence initial state s(0..6); [s(6) .. s(0)] = [1 1 1 0 1 1 0]
M_SEQUENCE_INIT = (0, 1, 1, 0, 1, 1, 1)

# SSB resource grid
SSB_SUBCARRIERS = 240
SSB_SYMBOLS = 4

# PSS occupies k = 56..182 of SSB symbol 0
PSS_FIRST_SUBCARRIER = 56
PSS_LAST_SUBCARRIER = 182

# SSS sits on symbol 2 at the same subcarriers as the PSS
SSS_SYMBOL = 2

# PBCH on symbol 2 flanks the SSS
PBCH_SYMBOL2_RANGES = ((0, 48), (192, 240))

# Null resource elements of symbol 0: {0..55} U {183..239}
NULL_RE_COUNT = 113

# ============================================================================
# OFDM Defaults
# ============================================================================

DEFAULT_N_FFT = 2048
DEFAULT_SCS_HZ = 30_000.0
DEFAULT_N_RB = 106
SUBCARRIERS_PER_RB = 12

# Normal cyclic prefix: 144 samples per 2048-point symbol
NORMAL_CP_RATIO = 144 / 2048

SUPPORTED_MODULATIONS = ["QPSK", "16QAM", "64QAM", "256QAM"]

MODULATION_ORDERS = {
    "BPSK": 2,
    "QPSK": 4,
    "8QAM": 8,
    "16QAM": 16,
    "64QAM": 64,
    "256QAM": 256,
}

# ============================================================================
# Channel / Noise
# ============================================================================

DEFAULT_TEMPERATURE_K = 290.0
DEFAULT_DELAY_SPREAD_NS = 30.0
DEFAULT_N_TAPS = 16
DEFAULT_CARRIER_HZ = 3.5e9

# Transmit power in dB relative to unit sample power
DEFAULT_GNB_POWER_DB = 30.0

# LOS/NLOS power ratio of the LOS-dominant tap template (dB)
LOS_K_FACTOR_DB = 13.3

# Taps spread over this many RMS delay spreads
TAP_SPAN_DELAY_SPREADS = 3.0

# Jammer symbol duration in samples for modulated jammers
DEFAULT_SAMPLES_PER_SYMBOL = 8

# ============================================================================
# Scenario Grids (dataset parameters)
# ============================================================================

DEFAULT_SJNR_GRID_DB = [float(v) for v in range(-10, 31)]
DEFAULT_DISTANCE_GRID_M = [float(v) for v in range(10, 501, 20)]
DEFAULT_OBS_PER_CLASS = 12_300

# ============================================================================
# Features
# ============================================================================

FEATURE_ROWS = 5

# E is clamped to 2**EPSILON_FLOOR before the log
EPSILON_FLOOR = -60.0

# ============================================================================
# DNN
# ============================================================================

DEFAULT_BATCH_SIZE = 25
DEFAULT_LEARNING_RATE = 0.001
DEFAULT_MOMENTUM = 0.9
DEFAULT_MAX_EPOCHS = 20
DEFAULT_VALIDATION_FRACTION = 0.30
DEFAULT_VALIDATION_FREQUENCY = 80
DEFAULT_AUGMENT_SEGMENTS = 8

DEFAULT_CONV_CHANNELS = (256, 128, 128)
DEFAULT_CONV_KERNELS = ((2, 5), (2, 5), (1, 2))
DEFAULT_HIDDEN_UNITS = 128

BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1

# Probabilities are clamped here before taking logs or ratios
PROBABILITY_FLOOR = 1e-12

# ============================================================================
# Detector
# ============================================================================

DEFAULT_DELTA_FA = 0.05
DEFAULT_SJNR_CUTOFF_DB = 10.0
DEFAULT_CALIBRATION_FRACTION = 0.5

# ============================================================================
# Sync
# ============================================================================

DEFAULT_CFO_GRID_POINTS = 201
CFO_REFINE_FACTOR = 10
SYNC_METRIC_THRESHOLD = 0.2
# metric values this close to the maximum count as ties
TIMING_TIE_RTOL = 1e-6

# ============================================================================
# File Formats
# ============================================================================

DATASET_MAGIC = b"SSBJAM01"
DATASET_VERSION = 1
MODEL_MAGIC = b"SSBNN001"
MODEL_VERSION = 1

# Label byte for observations without ground truth
UNLABELED = 255

MANIFEST_SUFFIX = ".manifest.jsonl"

# ============================================================================
# Error Codes
# ============================================================================

ERROR_CODES = {
    "VALIDATION_ERROR": "Invalid argument",
    "CONFIG_ERROR": "Configuration error",
    "FORMAT_ERROR": "Malformed binary file",
    "PARSE_ERROR": "Malformed text file",
    "NO_SSB_FOUND": "No SSB found in capture",
    "FILE_MISSING": "Input file not found",
}
