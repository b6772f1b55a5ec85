"""
ssb_guard - Jamming detection for 5G NR synchronization signal blocks

Synthesizes SSB captures under multipath and jamming, turns them into PSS
correlation / null-RE energy tensors, and classifies them with a
double-threshold cascade of two CNNs.
"""

__version__ = "0.1.0"

# Modules are imported where needed, e.g.:
#   from ssb_guard.dataset import generate_dataset
#   from ssb_guard.detector import detect_batch
#   from ssb_guard.logger import get_logger
