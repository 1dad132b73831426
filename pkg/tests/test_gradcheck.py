import numpy as np
import pytest

from latefuse.gradcheck import (
    fd_gradient,
    format_table,
    max_relative_error,
    run_suite,
)


def test_fd_gradient_on_quadratic(np_rng):
    x = np_rng.normal(size=(3, 2))
    got = fd_gradient(lambda: float((x ** 2).sum()), x)
    np.testing.assert_allclose(got, 2 * x, rtol=1e-6, atol=1e-8)


def test_max_relative_error():
    a = np.array([1.0, 2.0])
    assert max_relative_error(a, a) == 0.0
    assert max_relative_error(np.array([1.0]), np.array([1.1])) == \
        pytest.approx(0.1 / 1.1)


def test_suite_passes_on_two_seeds():
    for seed in (0, 7):
        results = run_suite(seed=seed)
        assert len(results) == 5
        names = [r.name for r in results]
        assert names == ["encoder", "head_fc", "head_fm", "head_mvm",
                         "end_to_end"]
        for r in results:
            assert r.passed, f"{r.name}: {r.max_rel_err:.3e} > {r.tolerance}"


def test_corruption_is_detected():
    results = run_suite(seed=0, corrupt=True)
    by_name = {r.name: r for r in results}
    assert not by_name["end_to_end"].passed
    assert by_name["encoder"].passed


def test_table_has_one_line_per_check():
    results = run_suite(seed=0)
    table = format_table(results)
    lines = table.splitlines()
    assert len(lines) == 6
    assert "encoder" in lines[1] and "ok" in lines[1]
