import numpy as np
import pytest

from odeentoy.expressions import ObjectPattern, Quantifier
from odeentoy.interpreter import (
    count_matches,
    eval_rule,
    pattern_codes,
    piece_matches,
    relation_witness,
    tag_universe,
)
from odeentoy.rules import parse_rule
from odeentoy.world import EMPTY, Piece, parse_structure, render_structure, structure_from_id

from tests import oracle


@pytest.mark.parametrize('kind, n, count, expected', [
    ('at_least', 1, 0, False),
    ('at_least', 2, 2, True),
    ('exactly', 1, 1, True),
    ('exactly', 2, 3, False),
    ('at_most', 1, 0, True),
    ('at_most', 2, 3, False),
    ('zero', None, 0, True),
    ('zero', None, 1, False),
])
def test_quantifiers(kind, n, count, expected):
    assert Quantifier(kind, n).test(count) is expected


def test_piece_matches(config):
    red_up = Piece.from_code(2, config)
    blue_block = Piece.from_code(4, config)
    assert piece_matches(red_up, ObjectPattern(shape='pyramid'), config)
    assert piece_matches(red_up, ObjectPattern('red', 'pyramid', 'up'), config)
    assert not piece_matches(red_up, ObjectPattern(shape='pyramid', orientation='down'), config)
    assert not piece_matches(red_up, ObjectPattern(shape='block'), config)
    assert piece_matches(blue_block, ObjectPattern(color='blue'), config)
    assert not piece_matches(EMPTY, ObjectPattern(color='red'), config)
    assert pattern_codes(ObjectPattern(shape='pyramid'), config) == frozenset({2, 3, 5, 6})


@pytest.mark.parametrize('structure, rule, expected', [
    ('red_block blue_block _ _ _ _', 'exactly 1 red touching blue', 1),
    ('red_block blue_block _ _ _ _', 'at_least 1 red surrounded_by blue', 0),
    ('blue_block red_block blue_block _ _ _', 'exactly 1 red surrounded_by blue', 1),
    ('red_block _ _ _ _ blue_block', 'exactly 1 blue at_the_right_of red', 1),
    ('red_block _ _ _ _ blue_block', 'zero red at_the_right_of blue', 1),
    ('red_block _ _ _ _ blue_block', 'zero red touching blue', 1),
    ('red_block red_block _ _ _ _', 'exactly 2 red touching red', 1),
    ('red_block red_block red_block _ _ _', 'exactly 1 red surrounded_by red', 1),
    ('red_pyramid_up red_pyramid_down _ _ _ _', 'exactly 2 pyramid', 1),
    ('red_pyramid_up red_pyramid_down _ _ _ _', 'at_most 1 pyramid pointing_up', 1),
    ('_ _ _ _ _ _', 'zero red and zero blue', 1),
    ('_ _ _ _ _ _', 'at_least 1 red or at_least 1 blue', 0),
    ('blue_block _ _ _ _ _', 'at_least 1 red or at_least 1 blue', 1),
])
def test_eval_rule_examples(config, structure, rule, expected):
    assert eval_rule(parse_rule(rule, config), parse_structure(structure, config)) == expected


def test_count_matches(config):
    structure = parse_structure('red_block red_pyramid_up _ blue_pyramid_down _ red_block', config)
    assert count_matches(ObjectPattern(color='red'), structure) == 3
    assert count_matches(ObjectPattern(shape='pyramid'), structure) == 2
    assert count_matches(ObjectPattern('red', 'block'), structure) == 2


def test_eval_rule_agrees_with_oracle(rules, config):
    rng = np.random.default_rng(11)
    sample_rules = [*rules[:98], *(rules[i] for i in rng.choice(len(rules), size=300, replace=False))]
    structures = [structure_from_id(int(i), config) for i in rng.integers(config.universe_size, size=120)]
    for rule in sample_rules:
        text = str(rule)
        for structure in structures:
            assert eval_rule(rule, structure) == oracle.evaluate(text, render_structure(structure)), (
                text, render_structure(structure)
            )


def test_tag_universe_agrees_with_eval_rule(rules, config):
    rng = np.random.default_rng(12)
    ids = rng.integers(config.universe_size, size=300)
    structures = [structure_from_id(int(i), config) for i in ids]
    for rule_id in rng.choice(len(rules), size=60, replace=False):
        rule = rules[int(rule_id)]
        tags = tag_universe(rule, config)
        assert tags.shape == (config.universe_size,)
        np.testing.assert_array_equal(tags[ids], [eval_rule(rule, s) for s in structures])


def test_tag_universe_counts(config):
    assert tag_universe(parse_rule('zero red', config), config).sum() == 4 ** 6
    assert tag_universe(parse_rule('at_least 1 red', config), config).sum() == 7 ** 6 - 4 ** 6


def test_relation_witness():
    target = np.array([[True, False, False, True]])
    np.testing.assert_array_equal(relation_witness('touching', target), [[False, True, True, False]])
    np.testing.assert_array_equal(relation_witness('at_the_right_of', target), [[False, True, True, True]])
    np.testing.assert_array_equal(relation_witness('surrounded_by', target), [[False, False, False, False]])
    np.testing.assert_array_equal(
        relation_witness('surrounded_by', np.array([[True, False, True, False]])),
        [[False, True, False, False]],
    )
    with pytest.raises(ValueError):
        relation_witness('below', target)


def test_zero_pyramid_pointing_up_count(config):
    # five allowed pieces per cell
    assert tag_universe(parse_rule('zero pyramid pointing_up', config), config).sum() == 5 ** 6


def test_conjunction_equivalent_to_exactly(config):
    both = parse_rule('at_least 1 pyramid pointing_up and at_most 1 pyramid pointing_up', config)
    exactly = parse_rule('exactly 1 pyramid pointing_up', config)
    np.testing.assert_array_equal(tag_universe(both, config), tag_universe(exactly, config))


OBJECTS = ['red', 'blue pyramid', 'pyramid pointing_up', 'block', 'red block', 'pyramid']


@pytest.fixture(scope='module')
def sample_structures(config):
    rng = np.random.default_rng(31)
    return [structure_from_id(int(i), config) for i in rng.integers(config.universe_size, size=400)]


@pytest.mark.parametrize('obj', OBJECTS)
def test_quantifier_laws(obj, sample_structures, config):
    def holds(text, s):
        return eval_rule(parse_rule(f'{text} {obj}', config), s) == 1

    for s in sample_structures:
        # complements
        assert holds('at_least 1', s) != holds('zero', s)
        assert holds('at_least 2', s) != holds('at_most 1', s)
        # monotone in n
        assert not holds('at_least 2', s) or holds('at_least 1', s)
        assert not holds('at_most 1', s) or holds('at_most 2', s)
        assert not holds('zero', s) or holds('at_most 1', s)
        for n in (1, 2):
            assert holds(f'exactly {n}', s) == (holds(f'at_least {n}', s) and holds(f'at_most {n}', s))


@pytest.mark.parametrize('left, right', [
    ('at_least 1 red', 'zero blue'),
    ('exactly 2 pyramid', 'at_most 1 block'),
    ('zero red block', 'at_least 2 blue pyramid pointing_down'),
])
def test_conjunction_truth_table(left, right, sample_structures, config):
    a, b = parse_rule(left, config), parse_rule(right, config)
    conj_and = parse_rule(f'{left} and {right}', config)
    conj_or = parse_rule(f'{left} or {right}', config)
    seen = set()
    for s in sample_structures:
        x, y = eval_rule(a, s), eval_rule(b, s)
        seen.add((x, y))
        assert eval_rule(conj_and, s) == (x & y)
        assert eval_rule(conj_or, s) == (x | y)
    # the sample reaches more than one row of the table
    assert len(seen) > 1
