"""Multi-set ESPIRiT and unrolled-network reconstruction of cardiac cine MRI."""

__version__ = "0.1.0"
