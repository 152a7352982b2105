import pytest

from odeentoy.seeds import MAX_SEED, derive_seed, make_rng, new_root_seed


def test_streams_are_named():
    assert derive_seed(1, 'test', 'board', 0) == derive_seed(1, 'test', 'board', 0)
    assert derive_seed(1, 'test', 'board', 0) != derive_seed(1, 'test', 'board', 1)
    assert derive_seed(1, 'test', 'board', 0) != derive_seed(2, 'test', 'board', 0)
    assert 0 <= derive_seed(MAX_SEED, 'x') <= MAX_SEED


def test_make_rng():
    assert make_rng(5, 'a').integers(1 << 30, size=4).tolist() == make_rng(5, 'a').integers(1 << 30, size=4).tolist()


def test_seed_range():
    with pytest.raises(ValueError):
        derive_seed(-1, 'x')
    with pytest.raises(ValueError):
        derive_seed(MAX_SEED + 1, 'x')
    assert 0 <= new_root_seed() <= MAX_SEED
