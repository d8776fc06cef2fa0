"""Moving-block bootstrap differential abundance testing for longitudinal counts."""

__version__ = "0.1.0"

from .baselines import BaselineResult, mbs_test, pis_test
from .benchmark import BenchmarkResult, run_benchmark
from .blocksize import (BlockSizeChoice, MseProfile, choose_block_size, mse_profile, scale_up,
                        select_block_size, two_sided_prob)
from .data import (CountMatrix, LongitudinalDataset, SampleTable, assemble, from_arrays,
                   load_counts, load_metadata, prevalence_filter)
from .diagnostics import lag_table, pac_profile, pivot_check, suggest_initial_block
from .errors import (DegenerateDesignError, MalformedInputError, MbbError, NumericalError,
                     ValidationError)
from .estimator import MarginalFit, ShrunkenFit, fit_marginal, shrink, studentize
from .inference import ResultsTable, assemble_results, bh_adjust
from .mbb import (BlockPlan, BootstrapDistribution, bootstrap_distribution, conf_intervals,
                  mbb_realization, p_values, resample_subject_indices)
from .pipeline import FitConfig, MbbRun, run_mbb
from .preprocess import SizeFactors, TransformedMatrix, size_factors, transform
from .simulate import RocCurve, SimConfig, gen_series, gen_setting, roc_curve

__all__ = [
    "BaselineResult", "BenchmarkResult", "BlockPlan", "BlockSizeChoice", "BootstrapDistribution", "CountMatrix",
    "DegenerateDesignError", "FitConfig", "LongitudinalDataset", "MalformedInputError",
    "MarginalFit", "MbbError", "MbbRun", "MseProfile", "NumericalError", "ResultsTable",
    "RocCurve", "SampleTable", "ShrunkenFit", "SimConfig", "SizeFactors", "TransformedMatrix",
    "ValidationError", "assemble", "assemble_results", "bh_adjust", "bootstrap_distribution",
    "choose_block_size", "conf_intervals", "fit_marginal", "from_arrays", "gen_series",
    "gen_setting", "lag_table", "load_counts", "load_metadata", "mbb_realization", "mbs_test",
    "mse_profile", "p_values", "pac_profile", "pis_test", "pivot_check", "prevalence_filter",
    "resample_subject_indices", "roc_curve", "run_benchmark", "run_mbb", "scale_up", "select_block_size", "shrink",
    "size_factors", "studentize", "suggest_initial_block", "transform", "two_sided_prob",
]
