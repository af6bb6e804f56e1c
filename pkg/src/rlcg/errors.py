class RlcgError(Exception):
    """Base class for errors raised by this package."""


class SingularMatrix(RlcgError):
    pass


class ZeroPivot(RlcgError):
    def __init__(self, row: int, value: float = 0.0):
        super().__init__(f"pivot {value!r} in row {row} is below the breakdown threshold")
        self.row = row
        self.value = value


class ZeroDiagonal(RlcgError):
    def __init__(self, row: int):
        super().__init__(f"zero diagonal entry in row {row}")
        self.row = row


class FormatVersionMismatch(RlcgError):
    pass


class CorruptFile(RlcgError):
    pass


class EmptyInput(RlcgError, ValueError):
    pass


class ConfigError(RlcgError, ValueError):
    pass
