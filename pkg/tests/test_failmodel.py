"""Failure scripts, fail points, and the directive syntax."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ftcollect.failmodel import (
    PREOPERATIONAL,
    FailurePoint,
    FailureScript,
    fails_before_sending,
    format_fail_directive,
    parse_fail_directive,
)


def test_preoperational_point():
    assert PREOPERATIONAL.preoperational
    assert FailurePoint().preoperational
    assert not FailurePoint(after_sends=2).preoperational


def test_negative_after_sends_rejected():
    with pytest.raises(ValueError):
        FailurePoint(after_sends=-1)


def test_preoperational_process_never_sends():
    script = FailureScript({1: PREOPERATIONAL})
    assert fails_before_sending(script, 1, 0)
    assert not fails_before_sending(script, 2, 0)


def test_after_sends_boundary():
    script = FailureScript({4: FailurePoint(after_sends=2)})
    assert not fails_before_sending(script, 4, 0)
    assert not fails_before_sending(script, 4, 1)
    # the third send attempt is the one that is suppressed
    assert fails_before_sending(script, 4, 2)
    assert fails_before_sending(script, 4, 3)


def test_script_lookup():
    script = FailureScript({3: FailurePoint(after_sends=1)})
    assert script.point(3) == FailurePoint(after_sends=1)
    assert script.point(5) is None
    assert not script.preoperational(3)
    assert len(script) == 1


@pytest.mark.parametrize("tokens, pid, fp", [
    (["3", "pre"], 3, PREOPERATIONAL),
    (["12", "after-sends", "0"], 12, FailurePoint(after_sends=0)),
    (["7", "after-sends", "41"], 7, FailurePoint(after_sends=41)),
])
def test_parse_fail_directive(tokens, pid, fp):
    assert parse_fail_directive(tokens) == (pid, fp)


@pytest.mark.parametrize("tokens", [
    [], ["x", "pre"], ["3"], ["3", "sometime"], ["3", "after-sends"],
    ["3", "after-sends", "-1"], ["3", "pre", "extra"],
])
def test_parse_fail_directive_rejects_garbage(tokens):
    with pytest.raises(ValueError):
        parse_fail_directive(tokens)


@given(st.integers(min_value=0, max_value=999),
       st.one_of(st.none(), st.integers(min_value=0, max_value=99)))
def test_directive_round_trip(pid, after):
    fp = PREOPERATIONAL if after is None else FailurePoint(after_sends=after)
    line = format_fail_directive(pid, fp)
    assert parse_fail_directive(line.split()[1:]) == (pid, fp)


def test_script_directives_are_sorted_lines():
    script = FailureScript({5: PREOPERATIONAL, 2: FailurePoint(after_sends=1)})
    assert script.directives() == ["fail 2 after-sends 1", "fail 5 pre"]
