"""Simulated multi-device room recordings, acoustic labels and a
multi-channel MOS + room-acoustics predictor."""

__version__ = "0.1.0"
