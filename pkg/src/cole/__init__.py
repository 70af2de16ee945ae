"""Learned, column-based authenticated storage for versioned blockchain state."""

from .core import EngineConfig, MAX_HEIGHT, pack_key
from .engine import Engine
from .query import ProvenanceProof, get, get_at, prov_query, verify_prov

__all__ = ["Engine", "EngineConfig", "MAX_HEIGHT", "ProvenanceProof", "get", "get_at",
           "pack_key", "prov_query", "verify_prov"]
__version__ = "0.1.0"
