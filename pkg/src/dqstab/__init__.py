"""Impedance-based small-signal stability and controller-gain extraction for
an offshore wind farm connected through an HVDC rectifier."""

from .errors import DqStabError
from .freqdata import FrequencyGrid, FrequencyResponseSet, PerUnitBase, make_log_grid
from .models import ControllerGains, PIController
from .rational import RationalTransferFunction, fit_auto_order, fit_fixed_order

__all__ = ["DqStabError", "FrequencyGrid", "FrequencyResponseSet", "PerUnitBase", "make_log_grid",
           "ControllerGains", "PIController", "RationalTransferFunction", "fit_auto_order",
           "fit_fixed_order"]
__version__ = "0.1.0"
