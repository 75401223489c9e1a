from .image import Image, FeatureStack
from .filter_bank import Activation, ConvLayer, FilterBank, LayerGradient, LayerTrace, Padding
from .frame_model import EnergyReport, NonStationaryFrame, StationaryFrame
from .generative_layer import GenerativeLayer
from .chain_state import AnnealSchedule, ChainState
from .learning import LearnConfig, LearningLog, LearnRecord, StatsSnapshot
from .oracle_spec import OracleSpec

__all__ = [
    "Image", "FeatureStack",
    "Activation", "ConvLayer", "FilterBank", "LayerGradient", "LayerTrace", "Padding",
    "EnergyReport", "NonStationaryFrame", "StationaryFrame",
    "GenerativeLayer",
    "AnnealSchedule", "ChainState",
    "LearnConfig", "LearningLog", "LearnRecord", "StatsSnapshot",
    "OracleSpec",
]
