"""
Argument validation utilities
"""

from collections.abc import Sized

from ssb_guard.constants import N_ID2_VALUES
from ssb_guard.exceptions import ValidationException


def validate_positive_integer(value: int, field_name: str) -> None:
    """
    Validate that value is a positive integer

    Args:
        value: Value to validate
        field_name: Name of the field (for error messages)

    Raises:
        ValidationException: If value is not a positive integer
    """
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise ValidationException(
            field_name,
            f"Must be a positive integer, got: {value}",
        )


def validate_non_negative_integer(value: int, field_name: str) -> None:
    """Validate that value is an integer >= 0"""
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValidationException(
            field_name,
            f"Must be a non-negative integer, got: {value}",
        )


def validate_positive_real(value: float, field_name: str) -> None:
    """
    Validate that value is a finite real number > 0

    Raises:
        ValidationException: If value is not strictly positive
    """
    if not (value > 0) or value == float("inf"):
        raise ValidationException(
            field_name,
            f"Must be a positive real number, got: {value}",
        )


def validate_n_id2(n_id2: int, raise_exception: bool = True) -> bool:
    """
    Validate a PSS sector identity

    Args:
        n_id2: Sector identity to validate
        raise_exception: If True, raise ValidationException when out of range

    Returns:
        True if valid

    Raises:
        ValidationException: If n_id2 is not in {0, 1, 2} and raise_exception=True
    """
    is_valid = n_id2 in N_ID2_VALUES and not isinstance(n_id2, bool)

    if not is_valid and raise_exception:
        raise ValidationException("n_id2", f"Must be one of {N_ID2_VALUES}, got: {n_id2}")

    return is_valid


def validate_power_of_two(value: int, field_name: str, raise_exception: bool = True) -> bool:
    """
    Validate that value is a positive power of two (FFT sizes)

    Raises:
        ValidationException: If value is not a power of two and raise_exception=True
    """
    is_valid = (
        isinstance(value, int)
        and not isinstance(value, bool)
        and value > 0
        and (value & (value - 1)) == 0
    )

    if not is_valid and raise_exception:
        raise ValidationException(field_name, f"Must be a power of two, got: {value}")

    return is_valid


def validate_probability(value: float, field_name: str) -> None:
    """
    Validate an open-interval probability 0 < value < 1

    Raises:
        ValidationException: If value is outside (0, 1)
    """
    if not (0.0 < value < 1.0):
        raise ValidationException(field_name, f"Must lie in (0, 1), got: {value}")


def validate_even_length(values: Sized, field_name: str, min_length: int = 2) -> None:
    """
    Validate that a sequence has even length of at least min_length

    Raises:
        ValidationException: If the length is odd or too short
    """
    length = len(values)

    if length < min_length:
        raise ValidationException(
            field_name,
            f"Must have at least {min_length} elements, got {length}",
        )

    if length % 2:
        raise ValidationException(field_name, f"Must have even length, got {length}")


def validate_length(values: Sized, expected: int, field_name: str) -> None:
    """
    Validate that a sequence has exactly the expected length

    Raises:
        ValidationException: If lengths differ
    """
    if len(values) != expected:
        raise ValidationException(
            field_name,
            f"Expected length {expected}, got {len(values)}",
        )


def validate_same_length(first: Sized, second: Sized, field_name: str) -> None:
    """Validate that two sequences are the same length"""
    if len(first) != len(second):
        raise ValidationException(
            field_name,
            f"Length mismatch: {len(first)} != {len(second)}",
        )
