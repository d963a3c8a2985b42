"""Simulator for networks of quantum machines with message-driven scheduling."""
from .errors import (
    ModelError, MessageLengthError, QrsimError, QueueOverflowError, ValidationError,
)
from .qcore import Alphabet, DensityState, Distribution, KrausChannel, LabeledSpace, statistical_distance
from .machine import MachineDef, Port, canonise, combine, combine_all, make_buffer, validate_machine
from .network import Collection, Configuration, Structure, compose, completion, make_config
from .runner import RunConfig, Trace, TraceRecord, explore, project_combined_view, run, view
from .security import SecurityClaim, Verdict, Witness, check_claim, compare_views

__all__ = [
    "Alphabet", "Collection", "Configuration", "DensityState", "Distribution", "KrausChannel",
    "LabeledSpace", "MachineDef", "MessageLengthError", "ModelError", "Port", "QrsimError",
    "QueueOverflowError", "RunConfig", "SecurityClaim", "Structure", "Trace", "TraceRecord",
    "ValidationError", "Verdict", "Witness", "canonise", "check_claim", "combine", "combine_all",
    "compare_views", "completion", "compose", "explore", "make_buffer", "make_config",
    "project_combined_view", "run", "statistical_distance", "validate_machine", "view",
]
