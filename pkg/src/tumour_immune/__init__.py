"""Tumour / cytotoxic T-cell / chemokine simulator with stochastic and continuum engines."""
from .grid import (ConfigError, Grid, ModelParams, NumericalError, StepSizeError, kill_field,
                   phi_max, psi, total_mass)
from .chemo import chemo_step, stability_limit
from .continuum import ContinuumState, run_continuum, step_c, step_n
from .hybrid import (AgentState, run_hybrid, tcell_chemotactic_move, tcell_inflow_death,
                     tcell_random_move, tumour_step)
from .immunoscore import (RegionSpec, Thresholds, build_regions, calibrate_thresholds,
                          centre_of_mass, classify, immunoscore)
from .record import RunRecord
from .harness import (ScenarioConfig, apply_therapy, baseline_config, build_initial_state,
                      load_config, default_config, run_replicates, run_sweep, square_config,
                      write_config, write_outputs)

__version__ = "0.1.0"
