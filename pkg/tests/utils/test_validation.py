import pytest

from src.utils.errors import ConfigError
from src.utils.validation import (
    collect_issues,
    require,
    validate_choice,
    validate_positive,
    validate_probability,
    validate_section_keys,
)


def test_section_keys():
    ok, _ = validate_section_keys("model", {"variant": "vgg"}, ["variant", "embedding_dim"])
    assert ok
    ok, message = validate_section_keys("model", {"colour": 1, "size": 2}, ["variant"])
    assert not ok
    assert message == "unknown key(s) in [model]: colour, size"


@pytest.mark.parametrize("value, allow_zero, expected", [
    (3, False, True),
    (0.5, False, True),
    (0, False, False),
    (0, True, True),
    (-1, True, False),
    (True, False, False),
    ("3", False, False),
])
def test_validate_positive(value, allow_zero, expected):
    assert validate_positive("x", value, allow_zero)[0] is expected


def test_validate_probability():
    assert validate_probability("p", 0.0)[0]
    assert not validate_probability("p", 1.0)[0]
    assert validate_probability("p", 1.0, inclusive_one=True)[0]
    assert not validate_probability("p", 1.5, inclusive_one=True)[0]


def test_validate_choice():
    assert validate_choice("variant", "dense", ["vgg", "dense"])[0]
    assert "must be one of" in validate_choice("variant", "resnet", ["vgg", "dense"])[1]


def test_require_lists_every_failure():
    checks = [validate_positive("a", -1), validate_positive("b", 2), validate_choice("c", "z", ["x"])]
    assert len(collect_issues(checks)) == 2
    with pytest.raises(ConfigError) as exc:
        require(*checks)
    assert "a must be > 0" in str(exc.value)
    assert "c must be one of" in str(exc.value)
