import math
import typing

from .exceptions import RowParseError


def to_float(value: str, row: int, column: int) -> float:
    value = value.strip().strip('"')
    try:
        result = float(value)
    except ValueError:
        raise RowParseError(row, column, f"{value!r} is not a number")
    if not math.isfinite(result):
        raise RowParseError(row, column, f"{value!r} is not finite")
    return result


def to_label(value: str, row: int, column: int) -> int:
    value = value.strip().strip('"')
    try:
        return int(value)
    except ValueError:
        pass
    # Accept "3.0" but not "3.5".
    number = to_float(value, row, column)
    if not number.is_integer():
        raise RowParseError(row, column, f"{value!r} is not an integer label")
    return int(number)


def parse_row(
    values: typing.Sequence[str],
    row: int,
    label_column: typing.Optional[int] = None,
    width: typing.Optional[int] = None,
) -> typing.Tuple[typing.List[float], typing.Optional[int]]:
    """
    Convert the cells of one CSV row into features and an optional label.

    :param row: 1-based line number used in error messages.
    :param label_column: 0-based index of the label cell, negative counts from
        the end; ``None`` when the row carries no label.
    :param width: expected number of cells; ragged rows raise.
    """
    if width is not None and len(values) != width:
        raise RowParseError(
            row, min(len(values), width) + 1, f"expected {width} cells, got {len(values)}"
        )
    label = None
    label_index = None
    if label_column is not None:
        if not -len(values) <= label_column < len(values):
            raise RowParseError(row, len(values) + 1, "label column out of range")
        label_index = label_column % len(values)
        label = to_label(values[label_index], row, label_index + 1)
    features = [
        to_float(value, row, i + 1)
        for i, value in enumerate(values)
        if i != label_index
    ]
    return features, label
