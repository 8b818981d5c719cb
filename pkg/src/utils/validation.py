"""Validation helpers for configuration values.

Each check returns ``(is_valid, message)`` so callers can either collect every problem
(``collect_issues``) or fail on the first one (``require``).
"""

from typing import Any, Iterable, List, Mapping, Sequence, Tuple

from src.utils.errors import ConfigError

Check = Tuple[bool, str]


def validate_section_keys(section: str, values: Mapping[str, Any], allowed: Iterable[str]) -> Check:
    """
    Check that a config section only uses known keys.

    Args:
        section: Section name, used in the message
        values: Keys and values read from the file or flags
        allowed: Field names of the section's dataclass

    Returns:
        Tuple of (is_valid, error_message)
    """
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        return False, f"unknown key(s) in [{section}]: {', '.join(unknown)}"
    return True, f"[{section}] keys valid"


def validate_positive(name: str, value: Any, allow_zero: bool = False) -> Check:
    """
    Check that a number is positive (or non-negative with ``allow_zero``).

    Returns:
        Tuple of (is_valid, error_message)
    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False, f"{name} must be numeric, got {value!r}"
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        return False, f"{name} must be {bound}, got {value}"
    return True, f"{name} valid"


def validate_choice(name: str, value: Any, choices: Sequence[Any]) -> Check:
    if value not in choices:
        return False, f"{name} must be one of {list(choices)}, got {value!r}"
    return True, f"{name} valid"


def validate_probability(name: str, value: Any, inclusive_one: bool = False) -> Check:
    ok, message = validate_positive(name, value, allow_zero=True)
    if not ok:
        return ok, message
    if value > 1 or (value == 1 and not inclusive_one):
        return False, f"{name} must be below {'or equal to ' if inclusive_one else ''}1, got {value}"
    return True, f"{name} valid"


def collect_issues(checks: Iterable[Check]) -> List[str]:
    return [message for ok, message in checks if not ok]


def require(*checks: Check) -> None:
    """Raise ``ConfigError`` listing every failed check."""
    issues = collect_issues(checks)
    if issues:
        raise ConfigError("; ".join(issues))


__all__ = [
    "collect_issues",
    "require",
    "validate_choice",
    "validate_positive",
    "validate_probability",
    "validate_section_keys",
]
