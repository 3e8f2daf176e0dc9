"""Generalizable IoT device identification from per-packet header features,
with flow- and window-statistics baselines and a cross-environment feature
selection pipeline."""

__version__ = "0.1.0"
