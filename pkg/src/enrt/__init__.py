"""Heterogeneous spillover effects in egocentric-network randomized trials:
GEE estimation, Wald and MCB tests, power and sample size, and simulation."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DataValidationError, EnrtError, EstimabilityError, NoRootError,
                     NonFactorizableError, PowerUndefinedError)
from .estimation import FittedModel, fit_gee, lemma1_cov
from .mcb import McbResult, critical_value, mcb_min_k, mcb_power, mcb_test, overall_p_value, pairwise_p_values
from .model import MAXIMIZE, MINIMIZE, DesignSpec, EgoDataset, EgoNetwork, best_structure, load_csv, write_csv
from .numerics import QuadratureSpec, integrate_phi_product, noncentral_chisq_cdf, std_normal_cdf
from .simulation import SimReport, SimScenario, generate_dataset, run_study, sample_size_curves, table1_scenario
from .wald import WaldResult, wald_min_k, wald_power, wald_test

__all__ = [
    "ConvergenceError", "DataValidationError", "EnrtError", "EstimabilityError", "NoRootError",
    "NonFactorizableError", "PowerUndefinedError", "FittedModel", "fit_gee", "lemma1_cov", "McbResult",
    "critical_value", "mcb_min_k", "mcb_power", "mcb_test", "overall_p_value", "pairwise_p_values",
    "MAXIMIZE", "MINIMIZE", "DesignSpec", "EgoDataset", "EgoNetwork", "best_structure", "load_csv",
    "write_csv", "QuadratureSpec", "integrate_phi_product", "noncentral_chisq_cdf", "std_normal_cdf",
    "SimReport", "SimScenario", "generate_dataset", "run_study", "sample_size_curves", "table1_scenario",
    "WaldResult", "wald_min_k", "wald_power", "wald_test",
]
