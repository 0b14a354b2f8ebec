"""Hybrid LiFi/WiFi MPTCP resource allocation: channel simulation, a
proportional-fairness solver, and user-centric learned allocators."""

__version__ = "0.1.0"
