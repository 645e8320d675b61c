"""Certified lower bounds on QKD secret key rates."""

from . import asymptotic, decoy, finitekey, linalg, protocol, sdpcore
from .asymptotic import KeyRateReport, fw_rate, gauss_radau_bound, gr_rate, hmin_bound, hmin_rate
from .errors import KeyforgeError
from .protocol import Scenario, bb84_scenario, make_scenario

__version__ = "0.1.0"

__all__ = [
    "asymptotic",
    "decoy",
    "finitekey",
    "linalg",
    "protocol",
    "sdpcore",
    "KeyRateReport",
    "fw_rate",
    "gr_rate",
    "gauss_radau_bound",
    "hmin_bound",
    "hmin_rate",
    "KeyforgeError",
    "Scenario",
    "bb84_scenario",
    "make_scenario",
]
