"""embed-extractor: per-layer transformer hidden states -> layerfuse store files."""

from .extract import ExtractionError, ExtractionSpec, extract, read_tsv
from .pool import POOLING_MODES, pool, pool_batch

__version__ = "0.1.0"
