"""Layer-wise input decorrelation for gradient descent and its approximations."""
from .decorrelation import (CorrelationReport, DecorrelationState, compute_gain,
                            correlation_report, decorrelate, recurrent_decorrelate,
                            sherman_morrison_inverse_update, update_decorrelation)
from .network import Conv, Dense, MaxPool, Network, forward

__version__ = "0.1.0"
