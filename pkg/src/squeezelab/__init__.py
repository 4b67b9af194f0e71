"""Simulation and analysis of single-pass multimode squeezed light.

The pipeline builds the spatio-spectral gain kernel of a pumped nonlinear
crystal, factorizes it into independently squeezed eigenmodes, simulates
homodyne detection with shaped local oscillators and reconstructs the
quadrature covariance blocks of a chosen mode basis.
"""
from .config import ExperimentConfig, load_config
from .covariance import (
    CovarianceBlocks,
    analytic_blocks,
    covariance_from_measurements,
    diagonalize_blocks,
    multimode_verdict,
    simulate_covariance,
)
from .crystal import (
    CrystalSpec,
    Sellmeier,
    phase_mismatch,
    refractive_index_extraordinary,
    refractive_index_ordinary,
    solve_phase_matching_angle,
)
from .errors import (
    ConfigurationError,
    DomainError,
    InputError,
    InvariantError,
    NumericalError,
    SqueezeLabError,
    TraceIOError,
)
from .homodyne import extract_extrema, mode_variances, synthesize_trace
from .kernel import GainKernel, PumpProfile, SpatioSpectralGrid, build_kernel, pump_amplitude
from .modes import AnalysisMode, SqueezingDecomposition, half_cut_spatial, hermite_gauss_spectral, overlaps, takagi
from .pipeline import Pipeline, RunBundle, ingest, run_pipeline

__version__ = "0.1.0"
