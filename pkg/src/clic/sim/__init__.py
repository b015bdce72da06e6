from .config import PRESETS, CandidateConfig, CovariateConfig, ScenarioConfig, TruthConfig, preset
from .runner import ReplicateResult, run_replicate, run_scenario, write_replicates_csv
from .tables import DecisionTable, agreement_stats, penalty_quartiles

__all__ = [
    "PRESETS",
    "CandidateConfig",
    "CovariateConfig",
    "ScenarioConfig",
    "TruthConfig",
    "preset",
    "ReplicateResult",
    "run_replicate",
    "run_scenario",
    "write_replicates_csv",
    "DecisionTable",
    "agreement_stats",
    "penalty_quartiles",
]
