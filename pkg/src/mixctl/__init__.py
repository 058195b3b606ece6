"""Constraint-aware dynamic data-mixture control.

During an iterative training run over N datasets, the controller periodically
probes each dataset's local effect on M evaluation domains (a finite-difference
slope matrix), solves a penalized constrained problem over the probability
simplex, and steers the sampling mixture so target losses fall while
constrained domains never degrade past their reference values. Ships with a
deterministic synthetic multi-domain trainer for desk-scale verification and a
line-delimited JSON protocol for attaching external trainers.
"""

from .controller import (
    ControllerConfig,
    RunLog,
    baseline_sweep,
    baseline_sweep_plan,
    fixed_mixture,
    run,
    run_fixed_baseline,
)
from .costs import CostConfig, interval_baseline_cost, simulate_event_costs, total_relative_cost, update_overhead
from .metrics import MetricReport, best_of_k, constrained_ppl_reduction, feasibility, max_violation
from .predictors import (
    CurvePredictor,
    FittedCurve,
    LinearPredictor,
    fit_curves,
    predict_curves,
    predict_linear,
)
from .scenario import (
    DatasetSpec,
    EvalDomainSpec,
    Scenario,
    ScenarioError,
    denormalize_metric,
    load_scenario,
    normalize_metric,
    save_scenario,
)
from .schedule import Schedule, build_schedule, probe_budget
from .simulator import Adam, QuadraticObjective, SimConfig, SimTrainer, generate_scenario, sim_loss
from .slopes import SlopeMatrix, estimate_slopes, gradient_alignment_slopes
from .solver import (
    MixtureWeights,
    SolveOutcome,
    SolverGrid,
    default_grid,
    project_to_simplex,
    select_weights,
    solve_penalized,
)
from .trainer import (
    CheckpointHandle,
    EvalRequest,
    EvalResult,
    GradientReport,
    Trainer,
    TrainerError,
    TrainPlan,
)

__version__ = "0.1.0"
