"""Simulator for an SSD whose flash blocks double as ternary CAMs."""

from .backend import Backend, LatencyReport, MovementCounters, PhysicalAddress, SsdConfig, load_config, total_blocks
from .flash_array import BlockMode, FlashBlock, MatchVector, SearchKey, Ternary, native_element_size
from .ftl import SearchManager, compact_results, decode_match_vector
from .nvme import NvmeController, tcam_search, tcam_update

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BlockMode",
    "FlashBlock",
    "LatencyReport",
    "MatchVector",
    "MovementCounters",
    "NvmeController",
    "PhysicalAddress",
    "SearchKey",
    "SearchManager",
    "SsdConfig",
    "Ternary",
    "compact_results",
    "decode_match_vector",
    "load_config",
    "native_element_size",
    "tcam_search",
    "tcam_update",
    "total_blocks",
]
