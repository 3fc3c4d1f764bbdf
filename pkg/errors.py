#!/usr/bin/env python3
"""
Exception hierarchy shared by every module of the lab.

Only causal_lab.py turns these into exit codes; library code just raises.
"""


class LabError(Exception):
    """Base class for all lab errors"""


class InvalidInputError(LabError, ValueError):
    """Argument outside the operation's domain"""


class CycleError(InvalidInputError):
    """A graph that must be acyclic contains a directed cycle"""

    def __init__(self, cycle, names=None):
        self.cycle = list(cycle)
        if names:
            path = " -> ".join(str(names[i]) for i in self.cycle + self.cycle[:1])
        else:
            path = " -> ".join(str(i) for i in self.cycle + self.cycle[:1])
        super().__init__(f"Graph contains a directed cycle: {path}")


class ConfigError(LabError, ValueError):
    """Invalid or inconsistent configuration"""


class UndefinedMetricError(LabError, ValueError):
    """Metric has no meaning for the given graph (e.g. no effect nodes)"""


class NumericError(LabError, ArithmeticError):
    """Non-finite value produced by a named operation"""

    def __init__(self, operation, message=None):
        self.operation = operation
        super().__init__(message or f"Non-finite value produced by '{operation}'")


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss; carries the last finite state"""

    def __init__(self, step, operation, last_state=None, log=None):
        self.step = step
        self.last_state = last_state
        self.log = list(log or [])
        super().__init__(operation, f"Training diverged at step {step}: non-finite '{operation}'")
