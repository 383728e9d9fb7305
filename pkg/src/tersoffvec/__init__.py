"""Tersoff multi-body potential on a lane-width-oblivious vector layer."""

from .errors import (CompletenessError, ConfigurationError, NumericalError, ParseError,
                     TersoffError, ValidationError)
from .model import (KB, MVV2E, AtomSystem, ParamTable, PrecisionMode, SimulationBox,
                    TersoffEntry, load_param_file, minimum_image, read_param_file,
                    silicon_params)

__version__ = "0.1.0"
