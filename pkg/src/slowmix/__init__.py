"""Simulation and exact verification for slowly mixing tower models.

The package is organized bottom-up: ``towers`` builds the return-time laws
and the point dynamics, ``observables`` the function classes on them,
``renewal`` the exact operator calculus, ``sequences`` the deterministic
inequality checks, ``stats`` the limit-law side, and ``experiments`` /
``cli`` the reproducible study drivers.
"""

from .towers import (
    LsvParams,
    ReturnTimeOverflow,
    TailLaw,
    TowerModel,
    TowerPoint,
    birkhoff_sum,
    build_tower,
    build_tower_from_probs,
    lsv_map,
    lsv_return_time,
    lsv_return_times,
)
from .observables import (
    ColumnObservable,
    InducedObservable,
    LevelObservable,
    Observable,
    SeparatelyLipschitzFunctional,
    base_indicator_observable,
    birkhoff_sum_by_excursions,
    constant_observable,
    fuzz_lip_profile,
    induce,
    level_profile_observable,
    make_functional,
    stable_class_observable,
    tail_indicator_observable,
)
from .renewal import (
    ConcentrationData,
    DecayReport,
    EntryIdentityError,
    EntryReport,
    MartingaleData,
    PerturbedEig,
    SpectralCurve,
    StableFit,
    TruncatedTower,
    concentration_decomposition,
    entry_operators,
    first_return_operators,
    fit_stable_constant,
    lemma_Fk_ratio,
    martingale_decomposition,
    op_norm,
    perturbed_eigenvalue,
    pi_matrix,
    renewal_decay_report,
    renewal_sequence,
    scalar_renewal,
    spectral_curve,
)
from .sequences import (
    DecaySequence,
    IneqReport,
    KaramataReport,
    MaximalFunction,
    check_ineq_q_gt_2,
    check_ineq_q_lt_2,
    convolve,
    critical_window_probe,
    karamata_check,
    maximal_function,
    stable_power_check,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
