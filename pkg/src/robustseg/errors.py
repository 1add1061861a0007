"""Exception hierarchy shared by every subpackage."""


class RobustSegError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""


class DimensionError(RobustSegError, ValueError):
    pass


class DomainError(RobustSegError, ValueError):
    pass


class ContractError(RobustSegError, RuntimeError):
    pass


class GenerationError(RobustSegError):
    pass


class TrainingQualityError(RobustSegError):
    def __init__(self, achieved: float, floor: float):
        super().__init__(f"teacher reached mIoU {achieved:.4f}, below the floor {floor:.4f}")
        self.achieved = achieved
        self.floor = floor


class DivergenceError(RobustSegError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step


class ManifestError(RobustSegError):
    pass


class RecordIOError(RobustSegError, OSError):
    """I/O failure; always carries the offending path."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
