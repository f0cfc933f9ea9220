"""Observer banks with sliding-mode injection and RLS weight fusion.

Design observers for uncertain LTI plants, run a bank of them against a
simulated plant, and reconstruct the unknown input from the equivalent
injection signal.
"""

from . import matkit
from .bank import (
    BankConfig,
    BankState,
    bank_derivative,
    combined_estimate,
    e_matrix,
    hull_witness,
    init_bank,
    injection,
)
from .design import (
    CanonicalForm,
    FeasibilityReport,
    ObserverGains,
    UncertainSystem,
    check_existence,
    convergence_diagnostics,
    design_gains,
    invariant_zeros,
    stabilize,
    to_canonical,
)
from .errors import (
    BadQ,
    BadTransform,
    DegenerateBank,
    EigFailure,
    HullViolation,
    InsufficientGain,
    NotHurwitz,
    NumericalBlowup,
    PlacementFailure,
    SingularD2,
    SingularMatrix,
    SmobankError,
)
from .faultrec import (
    FaultEstimate,
    detect_sliding,
    equivalent_signal,
    reconstruct_fault,
)
from .simlab import (
    ComparisonReport,
    Scenario,
    SimTrace,
    estimator_metrics,
    integrate,
    mck_fault,
    mck_system,
    run_comparison,
)

__version__ = "0.1.0"
