from .config import ExperimentConfig
from .runner import (
    LemmaReport,
    RecallReport,
    RunMetrics,
    RunResult,
    SweepResult,
    greedy_eval,
    load_csv,
    make_env,
    run_eval,
    run_experiment,
    run_lemma_report,
    run_recall_report,
    run_sweep,
    write_csv,
)

__all__ = [
    "ExperimentConfig",
    "LemmaReport",
    "RecallReport",
    "RunMetrics",
    "RunResult",
    "SweepResult",
    "greedy_eval",
    "load_csv",
    "make_env",
    "run_eval",
    "run_experiment",
    "run_lemma_report",
    "run_recall_report",
    "run_sweep",
    "write_csv",
]
