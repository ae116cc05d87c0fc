import os
import subprocess
import sys

import pytest
from hypothesis import given, settings, strategies as st

from tacc.sched import _kernels_py as py
from tacc.sched import kernels

try:
    from tacc.sched import _kernels as compiled
except ImportError:  # extension not built in this environment
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def test_first_fit_basics():
    free = [4, 2, 10, 4, 0, 10, 4, 4, 10]
    assert py.first_fit(free, (1, 1, 1), 2) == [0, 2]
    assert py.first_fit(free, (1, 3, 1), 1) == [2]
    assert py.first_fit(free, (1, 3, 1), 2) is None
    assert py.first_fit(free, (1, 1, 1), 1, extra=[0, 0, 0, 9, 9, 9, 9, 9, 9]) == [2]


def test_earliest_fit_basics():
    free = [8, 1, 100]
    releases = [100, 0, 1, 3, 1]
    t, idx, at = py.earliest_fit(free, releases, (1, 4, 1), 1, 0)
    assert (t, idx) == (100, [0]) and at == [9, 4, 101]
    assert py.earliest_fit(free, releases, (1, 5, 1), 1, 0) is None
    assert py.earliest_fit(free, [], (1, 1, 1), 1, 7)[0] == 7


vec = st.integers(1, 6).flatmap(lambda n: st.lists(st.integers(0, 8), min_size=3 * n,
                                                    max_size=3 * n))


@needs_compiled
@settings(max_examples=300)
@given(vec, st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(0, 8)),
       st.integers(1, 4), st.booleans(), st.data())
def test_first_fit_parity(free, need, count, use_extra, data):
    extra = None
    if use_extra:
        extra = data.draw(st.lists(st.integers(0, 8), min_size=len(free), max_size=len(free)))
    assert compiled.first_fit(free, need, count, extra) == py.first_fit(free, need, count, extra)


@needs_compiled
@settings(max_examples=300)
@given(vec, st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(0, 8)),
       st.integers(1, 4), st.data())
def test_earliest_fit_parity(free, need, count, data):
    n = len(free) // 3
    recs = data.draw(st.lists(st.tuples(st.integers(0, 50), st.integers(0, n - 1),
                                        st.integers(0, 4), st.integers(0, 4),
                                        st.integers(0, 4)), max_size=8))
    flat = [x for r in sorted(recs) for x in r]
    now = data.draw(st.integers(0, 20))
    a = compiled.earliest_fit(free, flat, need, count, now)
    b = py.earliest_fit(free, flat, need, count, now)
    if b is None:
        assert a is None
    else:
        assert (a[0], list(a[1]), list(a[2])) == (b[0], list(b[1]), list(b[2]))


def test_fallback_selected_by_environment():
    code = "from tacc.sched import kernels; print(kernels.IMPLEMENTATION)"
    env = dict(os.environ, TACC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    assert kernels.IMPLEMENTATION in ("compiled", "python")
