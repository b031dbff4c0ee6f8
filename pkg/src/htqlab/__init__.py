"""htqlab: a laboratory for ring-road traffic queues.

Vehicles occupy positions on a circle, move at a power m of their front gap,
and depart after a sampled travel distance; arrivals form a spatio-temporal
Poisson process. The package simulates the system exactly, computes
busy-period laws and throughput bounds at constant drain rates, and runs the
batch release policy that trades staging delay for stability.
"""

__version__ = "0.1.0"

from .dist import GriddedPdf, SpatialDistribution, n_fold_convolve, scale_workload
from .model import HtqParams, QueueState, RateReport
from .sim import SimOutcome, Trace

__all__ = [
    "GriddedPdf",
    "SpatialDistribution",
    "n_fold_convolve",
    "scale_workload",
    "HtqParams",
    "QueueState",
    "RateReport",
    "SimOutcome",
    "Trace",
    "__version__",
]
