"""Anisotropic nonlinear absorbing bath: couplings, susceptibilities, dynamics and atomic decay."""
from .errors import (
    DivergentIntegrand,
    InvalidArgument,
    ParseError,
    ResolutionError,
    UnsupportedOrder,
    ValidationError,
)
from .model import (
    Envelope,
    FrequencyGrid,
    OrthogonalTransform,
    apply_orthogonal,
    build_grid,
    coupling1,
    coupling2,
    coupling3,
    eval_coupling1,
    load_coupling_csv,
    random_orthogonal,
    random_structure,
    symmetry_violation,
    validate_coupling2_symmetry,
    zero_coupling,
)
from .susceptibility import (
    check_symmetries,
    chi1,
    chi1_kernel,
    chi2,
    chi2_kernel,
    chi3_kernel,
    chi_n,
    noise_correlation,
)
from .langevin import (
    SystemConfig,
    compare_micro_macro,
    integrate_macroscopic,
    integrate_microscopic,
    make_bath,
    sample_noise,
)
from .atom import (
    AtomParams,
    decay_rate,
    fit_decay_rate,
    gamma_linear,
    gamma_nonlinear,
    gamma_report,
    integrate_master_equation,
)

__version__ = "0.1.0"
