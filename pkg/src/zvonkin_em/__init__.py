"""Invariant-measure sampling for SDEs with singular drift via the Zvonkin transform.

The drift is split as b = b1 + b2 with b1 singular (bounded and integrable,
or Hoelder). A corrector u solving an elliptic PDE gives the map
Phi(x) = x + u(x); Euler-Maruyama runs on the transformed, regular SDE and the
samples are pulled back through Phi^{-1}.
"""
from .corrector import (CorrectorField, Grid, TransformedCoefficients, default_grid,
                        load_field, phi, phi_inverse, save_field, select_lambda,
                        solve_corrector)
from .errors import RuntimeFailure, ValidationError, ZvonkinError
from .harness import (ExperimentConfig, RateFit, emit_report, fit_rate, load_config,
                      run_experiment)
from .metrics import (W1Result, empirical_moment, lyapunov_drift_probe, sliced_w1,
                      w1_exact_1d, w1_to_reference_1d)
from .model import Problem, gibbs_reference_1d, make_problem
from .sampler import ChainConfig, SampleSet, pull_back, run_chain, run_ensemble

__version__ = "0.1.0"
