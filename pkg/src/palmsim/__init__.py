"""Palm calculus on a torus: random measures, Palm transforms, preserving shifts and tests."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    AtomicInput,
    ConfigError,
    DegenerateSample,
    DegenerateWeight,
    EmptyEnsemble,
    EmptyMeasure,
    IncompleteBlocks,
    InsufficientMass,
    NonpositiveDensity,
    OriginNotInSupport,
    PalmSimError,
    ZeroMassBox,
)
from .measure import MarkField, MeasureWindow, WeightedSample, mass, product_extend, shift  # noqa: F401
from .lattice import decompose, voronoi_assign  # noqa: F401
from .palm import density_inverse, density_palm, palm_expectation, palm_forward, palm_inverse  # noqa: F401
from .phi import phi_decode, phi_encode  # noqa: F401
from .shifts import Background, line_shift, pi_r, psi_shift  # noqa: F401
from .generators import GeneratorSpec, generate_ensemble  # noqa: F401
from .stattests import (  # noqa: F401
    TestReport,
    mass_stationarity_report,
    roundtrip_report,
    shift_invariance_report,
    weighted_two_sample,
)
