import pytest

from anosovlab import errors


def test_exit_codes_are_distinct_and_nonzero():
    classes = [c for c in vars(errors).values() if isinstance(c, type) and issubclass(c, errors.LabError)]
    codes = [c.exit_code for c in classes]
    assert len(set(codes)) == len(codes) and all(c > 0 for c in codes)


def test_payloads():
    e = errors.ConeViolation("bad", point=[0.1, 0.2, 0.3], detail="u")
    assert e.point == [0.1, 0.2, 0.3] and e.detail == "u"
    assert errors.SeriesStall("slow", ratio=0.999).ratio == 0.999
    with pytest.raises(errors.LabError):
        raise errors.VertexBudgetExceeded("too many")
