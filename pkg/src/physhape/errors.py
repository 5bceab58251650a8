"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2,
DivergenceError -> 3, IoError -> 4.
"""


class PhyshapeError(Exception):
    pass


class ValidationError(PhyshapeError):
    """Bad configuration, bad mesh, precondition violations."""


class DivergenceError(PhyshapeError):
    """Training or solver blow-up. May carry the best state seen so far."""

    def __init__(self, msg, best=None, history=None, epoch=None):
        super().__init__(msg)
        self.best = best
        self.history = history
        self.epoch = epoch


class IoError(PhyshapeError):
    """Missing/corrupt files, malformed datasets."""
