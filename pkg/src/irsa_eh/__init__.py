"""Energy-harvesting IRSA: simulation, SIC decoders, analysis and degree optimization."""

from .analysis import AoiInputs, aoi_violation_prob, average_aoi, plr_lower_bound, throughput
from .decode import DecodeResult, sic_conventional, sic_genie, sic_identify
from .energy_chain import battery_chain, steady_state, transition_matrix
from .model import UNLIMITED, ConfigError, DegreeDistribution, SystemConfig, load_config
from .sim import FrameTrace, Scheme, run_simulation

__version__ = "0.1.0"
