from .config import EVAL_CRISIS, EVAL_SHIFTS, EdConfig, load_schedule, write_schedule
from .mortality import A_BASE, K_MAX, inverse_mortality, mortality_prob
from .simulator import (
    FEATURE_NAMES,
    Patients,
    WeekResult,
    draw_patients,
    features_from_patients,
    read_traces,
    sample_ed_feature_marginal,
    simulate_week,
    simulate_weeks,
    write_traces,
)

__all__ = [
    "A_BASE",
    "EVAL_CRISIS",
    "EVAL_SHIFTS",
    "EdConfig",
    "FEATURE_NAMES",
    "K_MAX",
    "Patients",
    "WeekResult",
    "draw_patients",
    "features_from_patients",
    "inverse_mortality",
    "load_schedule",
    "mortality_prob",
    "read_traces",
    "sample_ed_feature_marginal",
    "simulate_week",
    "simulate_weeks",
    "write_schedule",
    "write_traces",
]
