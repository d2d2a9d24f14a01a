"""Latency-constrained weighted sum-rate beamforming for multicell MU-MIMO OFDM."""
__version__ = "0.1.0"
