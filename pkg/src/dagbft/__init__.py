"""Deterministic simulator for DAG-based BFT engines (certified and
uncertified) hardened with an ACS-based bounded-memory fallback."""

__version__ = "0.1.0"
