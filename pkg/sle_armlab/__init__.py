import sys

__version__ = "0.1.0"


if sys.version_info < (3, 8):
    raise SystemError('Python 3.8 or newer required.')

from sle_armlab.conformal_maps import (  # noqa
    halfstrip_f,
    halfstrip_g,
    hm_infinity,
    phi,
    phi_iter,
    semidisc_g,
)
from sle_armlab.crossing_events import EventSpec, Variant  # noqa
from sle_armlab.exceptions import ArmLabError  # noqa
from sle_armlab.exponent_lab import (  # noqa
    EstimateConfig,
    estimate_probability,
    predicted_exponent,
)
from sle_armlab.loewner_core import FlowState, StepPolicy, advance_flow  # noqa
from sle_armlab.sle_driver import DriverConfig, sample_sle, sample_sle_rho  # noqa
