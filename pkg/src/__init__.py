"""Package initialization for the DLRM training kit."""

__version__ = "0.1.0"
__description__ = "Hybrid-parallel DLRM training benchmark with blocked kernels and collectives"
