"""Maximal couplings, the window coupling engine and the l0 ladder."""
from .engine import (MODES, CouplingSettings, MixingReport, WindowStreams, calibrate_novikov,
                     mixing_experiment, report_json, stationary_pair, triplet_step)
from .ladder import INF, CouplingLedger, advance_ladder, ladder_oracle, replay
from .primitives import (DiscreteMeasure, density_ratio_tv_bound, gaussian_meet_probability,
                         maximal_coupling_discrete, maximal_coupling_gaussian_step,
                         overlap_lower_bound, reflection_coupling, total_variation)

__all__ = [
    "MODES", "CouplingSettings", "MixingReport", "WindowStreams", "calibrate_novikov",
    "mixing_experiment", "report_json", "stationary_pair", "triplet_step",
    "INF", "CouplingLedger", "advance_ladder", "ladder_oracle", "replay",
    "DiscreteMeasure", "density_ratio_tv_bound", "gaussian_meet_probability",
    "maximal_coupling_discrete", "maximal_coupling_gaussian_step", "overlap_lower_bound",
    "reflection_coupling", "total_variation",
]
