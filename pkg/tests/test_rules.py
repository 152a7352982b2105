import pytest

from odeentoy.errors import RuleParseError, WorldError
from odeentoy.expressions import Conjunction, ObjectPattern, Quantifier, RelationalRule, SimpleRule
from odeentoy.rules import (
    Grammar,
    coverage_report,
    enumerate_rules,
    grammar_for,
    parse_rule,
    read_rules_file,
    render_rule,
    rule_index,
    rule_productions,
    write_rules_file,
)
from odeentoy.world import WorldConfig


def test_enumeration_size(rules):
    assert len(rules) == 23_422
    assert sum(isinstance(r, SimpleRule) for r in rules) == 98
    assert sum(isinstance(r, RelationalRule) for r in rules) == 4_116
    assert sum(isinstance(r, Conjunction) for r in rules) == 19_208


@pytest.mark.parametrize('rule_id, text', [
    (0, 'at_least 1 red'),
    (1, 'at_least 1 blue'),
    (2, 'at_least 1 pyramid pointing_up'),
    (4, 'at_least 1 pyramid'),
    (13, 'at_least 1 blue block'),
    (14, 'at_least 2 red'),
    (97, 'zero blue block'),
    (98, 'at_least 1 red touching red'),
    (99, 'at_least 1 red touching blue'),
    (112, 'at_least 1 red surrounded_by red'),
    (4_214, 'at_least 1 red and at_least 1 red'),
    (4_215, 'at_least 1 red and at_least 1 blue'),
    (4_312, 'at_least 1 red or at_least 1 red'),
    (23_421, 'zero blue block or zero blue block'),
])
def test_enumeration_order(rules, rule_id, text):
    assert render_rule(rules[rule_id]) == text


def test_enumeration_is_stable(config):
    assert enumerate_rules(config) == enumerate_rules(config)


def test_every_rule_parses_back(rules, config):
    for rule in rules:
        assert parse_rule(str(rule), config) == rule


def test_rule_index(rules):
    index = rule_index(rules)
    assert len(index) == len(rules)
    assert index['zero blue block'] == 97


def test_parse_normalises_whitespace(config):
    assert str(parse_rule('  zero   red\t', config)) == 'zero red'


@pytest.mark.parametrize('text, position, token', [
    ('', 0, None),
    ('red', 0, 'red'),
    ('at_least 3 red', 1, '3'),
    ('at_least red', 1, 'red'),
    ('zero', 1, None),
    ('zero red touching', 3, None),
    ('zero red pointing_up', 2, 'pointing_up'),
    ('zero block pointing_up', 2, 'pointing_up'),
    ('zero red and zero blue touching red', 5, 'touching'),
    ('zero red touching blue and zero red', 4, 'and'),
    ('zero red maybe zero blue', 2, 'maybe'),
    ('Zero red', 0, 'Zero'),
])
def test_parse_errors(config, text, position, token):
    with pytest.raises(RuleParseError) as exc:
        parse_rule(text, config)
    assert exc.value.position == position
    assert exc.value.token == token


def test_conjunction_operators():
    red = SimpleRule(Quantifier('zero'), ObjectPattern(color='red'))
    up = SimpleRule(Quantifier('at_most', 1), ObjectPattern('blue', 'pyramid', 'up'))
    assert str(red | up) == 'zero red or at_most 1 blue pyramid pointing_up'
    assert str(red & up) == 'zero red and at_most 1 blue pyramid pointing_up'


def test_invalid_ast_nodes():
    with pytest.raises(ValueError):
        Quantifier('zero', 1)
    with pytest.raises(ValueError):
        Quantifier('exactly', 3)
    with pytest.raises(ValueError):
        ObjectPattern()
    with pytest.raises(ValueError):
        ObjectPattern(color='red', orientation='up')
    rel = RelationalRule(Quantifier('zero'), ObjectPattern('red'), 'touching', ObjectPattern('blue'))
    with pytest.raises(TypeError):
        Conjunction(rel, 'and', rel)


def test_grammar_tokens(config):
    grammar = grammar_for(config)
    assert grammar.families == ('pyramid', 'block')
    assert len(grammar.objects) == 14
    assert len(grammar.quantifiers) == 7
    assert set(grammar.tokens) == {
        'at_least', 'exactly', 'at_most', 'zero', '1', '2', 'red', 'blue', 'pyramid', 'block',
        'pointing_up', 'pointing_down', 'touching', 'surrounded_by', 'at_the_right_of', 'and', 'or',
    }


def test_grammar_rejects_ambiguous_families():
    with pytest.raises(WorldError):
        Grammar(WorldConfig(shape_variants=('pyramid', 'pyramid_up')))


def test_custom_world_enumeration():
    config = WorldConfig(colors=('red', 'blue', 'green'), shape_variants=('block',))
    # 3 colors + 1 shape + 3 pairs = 7 objects, 7 quantifiers
    assert len(enumerate_rules(config)) == 49 + 49 * 3 * 7 + 49 * 2 * 49


def test_rule_productions():
    rule = parse_rule('exactly 2 red pyramid pointing_up at_the_right_of block')
    assert rule_productions(rule) == [
        'RULE -> PROP',
        'QTY -> exactly NUM',
        'NUM -> 2',
        'OBJ -> COL SHAPE',
        'COL -> red',
        'SHAPE -> pyramid ORIEN',
        'ORIEN -> pointing_up',
        'REL -> at_the_right_of',
        'OBJ -> SHAPE',
        'SHAPE -> block',
    ]


def test_coverage_report(rules, config):
    assert coverage_report(rules, config).full_coverage

    report = coverage_report(rules[:1], config)
    assert not report.full_coverage
    assert 'touching' in report.uncovered_tokens
    assert 'RULE -> PROP' in report.uncovered_productions
    assert report.token_counts['red'] == 1
    assert report.dump_dict()['full_coverage'] is False


def test_rules_file_roundtrip(tmp_path, rules, config):
    path = tmp_path / 'rules.txt'
    write_rules_file(path, rules[:300])
    assert read_rules_file(path, config) == rules[:300]
    assert path.read_text(encoding='utf-8').splitlines()[97] == 'zero blue block'


def test_rules_file_reports_line(tmp_path, config):
    path = tmp_path / 'rules.txt'
    path.write_text('zero red\nzero purple\n', encoding='utf-8')
    with pytest.raises(RuleParseError, match='Line 2'):
        read_rules_file(path, config)


def test_failed_write_keeps_previous_rules_file(tmp_path, rules, monkeypatch):
    path = tmp_path / 'rules.txt'
    path.write_text('previous complete file\n', encoding='utf-8')
    calls = []

    def failing_render(rule):
        calls.append(rule)
        if len(calls) > 100:
            raise OSError('disk full')
        return render_rule(rule)

    monkeypatch.setattr('odeentoy.rules.render_rule', failing_render)
    with pytest.raises(OSError):
        write_rules_file(path, rules)
    assert path.read_text(encoding='utf-8') == 'previous complete file\n'
    assert [p.name for p in tmp_path.iterdir()] == ['rules.txt']


GOLDEN_RULES = [
    'at_least 2 pyramid pointing_down',
    'at_most 1 blue pyramid pointing_up',
    'exactly 1 pyramid pointing_up touching red pyramid pointing_down',
    'at_least 2 red touching blue pyramid pointing_down',
    'exactly 1 blue pyramid touching blue block',
    'zero blue touching red pyramid',
    'at_most 1 red block touching red',
    'at_most 1 blue pyramid pointing_down touching red',
    'zero blue or at_most 1 blue pyramid pointing_up',
]


@pytest.mark.parametrize('text', GOLDEN_RULES)
def test_board_rules_are_enumerated(text, rules, config):
    rule = parse_rule(text, config)
    assert render_rule(rule) == text
    assert text in rule_index(rules)
