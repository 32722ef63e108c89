from .equity import (
    base_surface,
    block_sums,
    local_vol_base,
    make_vol_surface,
    simulate_gbm,
    simulate_heston,
    simulate_slv,
    slv_eta,
)
from .hjm import (
    hjm_discrete_drift,
    hjm_forward_base,
    hjm_linear_map,
    hjm_paths_stepwise,
    hjm_vol_base,
    make_hjm_grids,
    simulate_hjm,
)
from .marginals import sample_feature_marginal
from .params import (
    ConfigError,
    CoupledSample,
    HjmGrids,
    ModelKind,
    ParameterPoint,
    VolSurfaceGrid,
)

__all__ = [
    "ConfigError",
    "CoupledSample",
    "HjmGrids",
    "ModelKind",
    "ParameterPoint",
    "VolSurfaceGrid",
    "base_surface",
    "block_sums",
    "hjm_discrete_drift",
    "hjm_forward_base",
    "hjm_linear_map",
    "hjm_paths_stepwise",
    "hjm_vol_base",
    "local_vol_base",
    "make_hjm_grids",
    "make_vol_surface",
    "sample_feature_marginal",
    "simulate_gbm",
    "simulate_heston",
    "simulate_hjm",
    "simulate_slv",
    "slv_eta",
]
