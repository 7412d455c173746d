"""Irradiance estimation from PV converter measurements."""

from .errors import (ConfigError, DataError, NumericalError, PVEstimError)
from .model import (PanelDatasheet, PlantModel, PlantTopology, StcParameters,
                    extract_stc_parameters, max_power, solve_current)
from .estimators import (MeasurementSample, MeasurementSeries, analytical_estimate,
                         estimate_series)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "NumericalError", "PVEstimError",
    "PanelDatasheet", "PlantModel", "PlantTopology", "StcParameters",
    "extract_stc_parameters", "max_power", "solve_current",
    "MeasurementSample", "MeasurementSeries", "analytical_estimate",
    "estimate_series", "__version__",
]
