import typing


class IiOpenSetError(Exception):
    pass


class ConfigurationError(IiOpenSetError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NetworkContractError(IiOpenSetError):
    pass


class TrainingDivergedError(IiOpenSetError):
    def __init__(self, iteration: int, curves: typing.Any = None):
        super().__init__(f"Training diverged at iteration {iteration}")
        self.iteration = iteration
        self.curves = curves


class EmptyClassError(IiOpenSetError):
    pass


class ModelFormatError(IiOpenSetError):
    def __init__(self, field: str, message: str):
        super().__init__(f"Malformed model file, field {field!r}: {message}")
        self.field = field


class IdxFormatError(IiOpenSetError):
    pass


class RowParseError(IiOpenSetError):
    def __init__(self, row: int, column: typing.Optional[int], message: str):
        where = f"row {row}" if column is None else f"row {row} col {column}"
        super().__init__(f"{where}: {message}")
        self.row = row
        self.column = column


class EmptyDatasetError(IiOpenSetError):
    pass


class SplitError(IiOpenSetError):
    pass


class DegenerateSampleError(IiOpenSetError):
    pass


class MetricError(IiOpenSetError):
    pass
