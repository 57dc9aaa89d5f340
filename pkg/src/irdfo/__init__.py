"""Inexact-restoration derivative-free optimization with variable-accuracy
objectives, plus the column-collapse fitting application and its CLI."""

from .dambreak import (DamEval, DamProblem, FramesParseError, alignment_score,
                       best_alignment, default_problem, energy,
                       energy_gradient, fitness, fitness_table,
                       frame_to_ascii, initial_packing, load_reference_frames,
                       objective_f, rasterize, read_frames_file, run_collapse,
                       write_frame_pgm, write_frames_file)
from .ircore import (AssumptionViolation, IntervalDomain, IRParams, IRRecord,
                     IRResult, IRState, MetricDomain, PrecisionToken,
                     VariableAccuracyProblem, acceptance_test, ir_iteration,
                     merit, run_ir, update_penalty, write_trace_csv)
from .moa import (CriticalityCertificate, MOAParams, MoaIterRecord, MoaResult,
                  SurrogateDecreaseFailure, SurrogateModel,
                  criticality_check_1d, default_surrogate, moa_iteration,
                  regularized_value, run_moa_to_criticality,
                  solve_subproblem_1d)
from .spg import (BoxConstraint, SpgParams, SpgTrajectory, project,
                  projected_gradient_norm, spg_run)

__version__ = "0.1.0"
