"""Gaze-contingent attention direction: geometry, gaze processing, marker
engine, wire protocol, and a deterministic simulation harness."""

__version__ = "0.1.0"
