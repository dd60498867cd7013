"""subjektiv: desk-scale multienterprise choreography platform.

Model subject-oriented processes in a textual DSL, execute them as
communicating agent state machines on one or more nodes, drive decision
points through a task service, and check the composition for deadlocks.
"""

from .model import ProcessModel, ValidationReport, validate
from .pdl import PdlSyntaxError, parse, serialize

__all__ = [
    "ProcessModel",
    "ValidationReport",
    "validate",
    "parse",
    "serialize",
    "PdlSyntaxError",
]

__version__ = "0.1.0"
