"""Exception types raised by the planner."""
from typing import Optional, Sequence


class PlannerError(Exception):
    """Base class for every planner failure."""
    pass


class GridBoundsError(PlannerError):
    """A query or ray endpoint fell outside the valid region of a grid."""

    def __init__(self, coordinate: Sequence[float], message: str = "position outside grid bounds"):
        self.coordinate = tuple(float(c) for c in coordinate)
        super().__init__(f"{message}: {self.coordinate}")


class InvalidEndpointError(PlannerError):
    """Start or goal lies inside an (inflated) obstacle."""

    def __init__(self, endpoint: str, position: Sequence[float]):
        self.endpoint = endpoint
        self.position = tuple(float(c) for c in position)
        super().__init__(f"{endpoint} {self.position} is not traversable")


class UnreachableError(PlannerError):
    """No traversable path connects start and goal."""

    def __init__(self, start_cell: Sequence[int], goal_cell: Sequence[int]):
        self.start_cell = tuple(int(c) for c in start_cell)
        self.goal_cell = tuple(int(c) for c in goal_cell)
        super().__init__(f"goal cell {self.goal_cell} unreachable from {self.start_cell}")


class ContractError(PlannerError):
    """Arguments violate an operation's preconditions (shapes, levels, lengths)."""
    pass


class NonFiniteObjectiveError(PlannerError):
    """The objective is not finite at the initial point of a minimization."""

    def __init__(self, cost: float):
        self.cost = cost
        super().__init__(f"objective is not finite at the initial point (cost={cost})")


class NonFiniteCostError(PlannerError):
    """A cost term evaluated to a non-finite value."""

    def __init__(self, term: str, step: Optional[int]):
        self.term = term
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"cost term {term} is not finite{where}")


class MapGenerationError(PlannerError):
    """A map generator could not produce a map connecting start and goal."""

    def __init__(self, generator: str, retries: int):
        self.generator = generator
        self.retries = retries
        super().__init__(f"{generator} map still disconnected after {retries} retries")


class ConfigError(PlannerError):
    """A config, scenario or sweep document failed to parse or validate."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        self.message = message
        super().__init__(f"{path}:{line}: {message}")
