import numpy as np
from hypothesis import given, settings, strategies as st

from chainforge.decompose import decompose, direction, reconstruct, row_sign
from chainforge.fields import DefectField, GridSpec


def defect(grid, first, second):
    return DefectField(grid, np.asarray(first, dtype=float), np.asarray(second, dtype=float))


def constant_defect(grid, r1, r2):
    shape = grid.shape
    return defect(grid, [np.full(shape, v) for v in r1], [np.full(shape, v) for v in r2])


def test_zero_defect():
    g = GridSpec(3, 4)
    dec = decompose(constant_defect(g, [0, 0, 0], [0, 0, 0]))
    assert dec.count == 6
    assert np.all(dec.coefficients == 0)
    assert np.all(reconstruct(dec).first == 0) and np.all(reconstruct(dec).second == 0)


def test_first_row_only():
    g = GridSpec(3, 4)
    dec = decompose(constant_defect(g, [2, 0, 0], [0, 0, 0]))
    assert np.all(dec.coefficients[0] == 1) and np.all(dec.coefficients[1] == 1)
    assert np.all(dec.coefficients[2:] == 0)
    assert direction(0) == direction(1) == 0


def test_opposite_rows():
    g = GridSpec(3, 4)
    dec = decompose(constant_defect(g, [1, 0, 0], [-1, 0, 0]))
    assert np.all(dec.coefficients[0] == 0) and np.all(dec.coefficients[1] == 1)


def test_sign_structure():
    assert [row_sign(j) for j in range(6)] == [1, -1, 1, -1, 1, -1]
    g = GridSpec(2, 4)
    coeffs = np.zeros((4,) + g.shape)
    coeffs[1] = 1.0
    from chainforge.decompose import RowDecomposition
    back = reconstruct(RowDecomposition(g, coeffs))
    assert np.all(back.first[0] == 1) and np.all(back.second[0] == -1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(2, 4))
def test_round_trip_and_bounds(seed, dim):
    rng = np.random.default_rng(seed)
    g = GridSpec(dim, 4)
    R = defect(g, rng.standard_normal((dim,) + g.shape), rng.standard_normal((dim,) + g.shape))
    dec = decompose(R)
    back = reconstruct(dec)
    assert np.abs(back.first - R.first).max() <= 1e-14
    assert np.abs(back.second - R.second).max() <= 1e-14
    frob = np.sqrt(np.sum(R.first**2, axis=0) + np.sum(R.second**2, axis=0))
    assert np.all(np.abs(dec.coefficients) <= frob * (1 + 1e-15))
    l1 = frob.mean()
    assert np.all(np.abs(dec.coefficients).mean(axis=tuple(range(1, dim + 1))) <= l1 * (1 + 1e-15))
