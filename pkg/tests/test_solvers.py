import json
import sys
import textwrap

import numpy as np
import pytest

from odeentoy.errors import SolverError
from odeentoy.interpreter import eval_rule
from odeentoy.matrix import is_representative
from odeentoy.records import AnswerRecord
from odeentoy.rules import rule_index
from odeentoy.seeds import derive_seed
from odeentoy.solvers import (
    ConjectureBatch,
    ConjectureSource,
    CostCounters,
    ExhaustiveEnumerator,
    ExternalProcess,
    GrammarSampler,
    SolveParams,
    budget_curve,
    crn_select,
    exhaustive_solve,
    solve_dataset,
    tag_structures,
)
from odeentoy.world import structure_from_id


class FixedSource(ConjectureSource):

    def __init__(self, conjectures: list[str]):
        self.conjectures = conjectures
        self.requests = []

    def draw(self, board, budget, seed) -> ConjectureBatch:
        self.requests.append((budget, seed))
        return ConjectureBatch(self.conjectures[:budget])


def _board(rule_id, m, n=None):
    # the whole universe unless a size is given
    ids = range(m.n_structures) if n is None else [(i * 73) % m.n_structures for i in range(n)]
    return [(i, m.bit(rule_id, i)) for i in ids]


@pytest.mark.parametrize('kwargs', [
    {'mode': 'guess'},
    {'budget': 0},
    {'threads': 0},
    {'mode': 'external'},
    {'timeout': 0},
])
def test_invalid_solve_params(kwargs):
    with pytest.raises(SolverError):
        SolveParams(**kwargs)


def test_cost_counters():
    cost = CostCounters(cg_calls=3, board_evals=96, tagging_evals=200)
    assert cost.j_evals == 296
    assert cost.rule_cost() == {'cg_calls': 3, 'j_evals': 96}
    assert cost.dump_dict()['tagging_evals'] == 200


def test_exhaustive_solve_on_datasets(small_dataset, small_matrix, small_partition, small_rules):
    index = rule_index(small_rules)
    for test, answer in zip(small_dataset.tests, small_dataset.answers):
        outcome = exhaustive_solve(test.board, test.eval_ids, small_matrix, small_partition, small_rules)
        truth = index[answer.rule]
        # boards are representative: exactly one class survives
        assert outcome.consistent_class_count == 1
        assert small_partition.same_class(outcome.rule_id, truth)
        assert outcome.rule_id == small_partition.representatives[small_partition.class_of[truth]]
        assert tuple(outcome.tags) == answer.tags
        assert outcome.cost.board_evals == small_matrix.n_rules * len(test.board)
        assert outcome.cost.tagging_evals == len(test.eval_ids)
        assert outcome.cost.cg_calls == 0


def test_exhaustive_solve_picks_lowest_id(small_matrix, small_partition, small_rules):
    outcome = exhaustive_solve([(0, 1)], [5, 6], small_matrix, small_partition, small_rules)
    survivors = [r for r in range(small_matrix.n_rules) if small_matrix.bit(r, 0) == 1]
    assert outcome.rule_id == min(survivors)
    assert outcome.consistent_class_count > 1
    assert outcome.rule == str(small_rules[outcome.rule_id])


def test_exhaustive_solve_unknown(small_matrix, small_partition):
    # a structure tagged both ways
    outcome = exhaustive_solve([(9, 0), (9, 1)], [1, 2, 3], small_matrix, small_partition)
    assert outcome.unknown
    assert outcome.consistent_class_count == 0
    assert outcome.cost.tagging_evals == 0
    pred = outcome.prediction(4, 3)
    assert pred.tags == (0, 0, 0)
    assert pred.rule is None


def test_crn_select_best_hit_rate(small_matrix, small_partition, small_rules, small_config):
    rule_id = 30
    board = _board(rule_id, small_matrix)
    truth = str(small_rules[rule_id])
    source = FixedSource(['not a rule', 'zero red', truth, 'zero red', truth])
    outcome = crn_select(
        board, [1, 2, 3], source, 5, small_matrix, small_partition, small_rules, small_config, seed=7
    )
    assert outcome.rule_id == rule_id
    assert outcome.parse_failures == 1
    assert outcome.cost.cg_calls == 5
    assert outcome.cost.board_evals == 4 * len(board)
    assert outcome.cost.tagging_evals == 3
    assert source.requests == [(5, 7)]


def test_crn_select_earliest_among_equals(small_matrix, small_partition, small_rules, small_config):
    rule_id = 30
    board = _board(rule_id, small_matrix)
    index = rule_index(small_rules)
    equivalent = small_partition.members(small_partition.class_of[rule_id])
    texts = [str(small_rules[r]) for r in reversed(equivalent)]
    outcome = crn_select(
        board, [], FixedSource(texts), 10, small_matrix, small_partition, small_rules, small_config
    )
    assert outcome.rule_id == index[texts[0]]


def test_crn_select_strict(small_matrix, small_partition, small_rules, small_config):
    rule_id = 30
    board = _board(rule_id, small_matrix)
    wrong = [str(small_rules[r]) for r in range(small_matrix.n_rules) if not small_partition.same_class(r, rule_id)][:5]
    source = FixedSource(wrong)
    loose = crn_select(board, [1], source, 5, small_matrix, small_partition, small_rules, small_config)
    assert not loose.unknown
    strict = crn_select(
        board, [1], source, 5, small_matrix, small_partition, small_rules, small_config, mode='strict'
    )
    assert strict.unknown
    assert strict.consistent_class_count == 0
    assert strict.cost.tagging_evals == 0


def test_crn_select_rejects_bad_input(small_matrix, small_partition, small_rules, small_config):
    source = FixedSource(['zero red'])
    with pytest.raises(SolverError):
        crn_select([], [], source, 0, small_matrix, small_partition, small_rules, small_config)
    with pytest.raises(SolverError):
        crn_select([], [], source, 1, small_matrix, small_partition, small_rules, small_config, mode='best')


def test_crn_select_all_unparseable(small_matrix, small_partition, small_rules, small_config):
    outcome = crn_select(
        _board(3, small_matrix), [1], FixedSource(['', 'zero purple']), 2,
        small_matrix, small_partition, small_rules, small_config,
    )
    assert outcome.unknown
    assert outcome.parse_failures == 2


def test_grammar_sampler_prefix_property(small_rules):
    sampler = GrammarSampler(small_rules)
    long = sampler.draw([], 100, seed=99).conjectures
    short = sampler.draw([], 10, seed=99).conjectures
    assert short == long[:10]
    assert long != sampler.draw([], 100, seed=98).conjectures
    assert set(long) <= {str(r) for r in small_rules}


def test_exhaustive_enumerator(small_rules):
    batch = ExhaustiveEnumerator(small_rules).draw([], 3, seed=0)
    assert batch.conjectures == [str(r) for r in small_rules[:3]]


def test_solve_dataset_modes(small_dataset, small_matrix, small_partition, small_rules, small_config):
    tests = small_dataset.tests[:4]
    exhaustive = solve_dataset(tests, SolveParams(threads=2), small_matrix, small_partition, small_rules, small_config)
    assert [o.unknown for o in exhaustive] == [False] * 4

    params = SolveParams(mode='sample', budget=50, seed=5)
    first = solve_dataset(tests, params, small_matrix, small_partition, small_rules, small_config)
    second = solve_dataset(
        tests, SolveParams(mode='sample', budget=50, seed=5, threads=3),
        small_matrix, small_partition, small_rules, small_config,
    )
    assert [o.rule_id for o in first] == [o.rule_id for o in second]
    assert all(o.cost.cg_calls == 50 for o in first)


def test_budget_curve(small_dataset, small_partition, small_rules, small_config):
    tests, answers = small_dataset.tests, small_dataset.answers
    curve = budget_curve(
        tests, answers, GrammarSampler(small_rules), [1, 10, 100, 2000],
        small_partition, small_rules, small_config, seed=3,
    )
    fractions = [point['fraction'] for point in curve]
    assert [point['budget'] for point in curve] == [1, 10, 100, 2000]
    assert fractions == sorted(fractions)
    assert all(0.0 <= f <= 1.0 for f in fractions)

    # the enumerator reaches every class within len(rules) draws
    full = budget_curve(
        tests, answers, ExhaustiveEnumerator(small_rules), [len(small_rules)],
        small_partition, small_rules, small_config, seed=3,
    )
    assert full == [{'budget': len(small_rules), 'fraction': 1.0}]

    with pytest.raises(SolverError):
        budget_curve(tests, answers, GrammarSampler(small_rules), [0], small_partition, small_rules, small_config, 3)


def test_budget_curve_uses_game_streams(small_dataset, small_partition, small_rules, small_config):
    source = FixedSource([])
    budget_curve(
        small_dataset.tests[:2], small_dataset.answers[:2], source, [5, 3],
        small_partition, small_rules, small_config, seed=11,
    )
    assert source.requests == [(5, derive_seed(11, 'solve', 'sample', 0)), (5, derive_seed(11, 'solve', 'sample', 1))]


def _script(tmp_path, body: str) -> list[str]:
    path = tmp_path / 'generator.py'
    path.write_text(textwrap.dedent(body), encoding='utf-8')
    return [sys.executable, str(path)]


def test_external_process(tmp_path, small_matrix, small_partition, small_rules, small_config):
    command = _script(tmp_path, '''
        import json, sys
        request = json.loads(sys.stdin.readline())
        assert request['budget'] == 3 and request['seed'] == 42
        assert request['board'][0][0].count(' ') == 3
        print('zero red')
        print('garbage')
        print('at_least 1 red')
        print('zero blue')
    ''')
    source = ExternalProcess(command, small_config, timeout=30)
    board = _board(3, small_matrix, n=4)
    batch = source.draw(board, 3, 42)
    assert batch.conjectures == ['zero red', 'garbage', 'at_least 1 red']
    assert not batch.timed_out
    assert json.loads(source.request(board, 3, 42))['board'][0][1] in (0, 1)

    outcome = crn_select(board, [1], source, 3, small_matrix, small_partition, small_rules, small_config, seed=42)
    assert outcome.parse_failures == 1
    assert outcome.cost.cg_calls == 3


def test_external_process_stops_at_blank_line(tmp_path, small_config):
    command = _script(tmp_path, '''
        import sys
        sys.stdin.readline()
        print('zero red')
        print('')
        print('zero blue')
    ''')
    batch = ExternalProcess(command, small_config, timeout=30).draw([], 5, 0)
    assert batch.conjectures == ['zero red']


def test_external_process_timeout(tmp_path, small_config):
    command = _script(tmp_path, '''
        import time
        time.sleep(30)
    ''')
    batch = ExternalProcess(command, small_config, timeout=0.5).draw([], 5, 0)
    assert batch.timed_out
    assert batch.conjectures == []


def test_external_process_missing_command(small_config):
    with pytest.raises(SolverError):
        ExternalProcess(['/nonexistent/generator'], small_config).draw([], 1, 0)


def test_representative_boards_make_exhaustive_exact(small_dataset, small_matrix, small_partition, small_rules):
    index = rule_index(small_rules)
    test, answer = small_dataset.tests[0], small_dataset.answers[0]
    assert is_representative(test.board, index[answer.rule], small_matrix, small_partition).representative
    outcome = exhaustive_solve(test.board[:2], test.eval_ids, small_matrix, small_partition, small_rules)
    assert outcome.consistent_class_count > 1


def test_tag_structures(small_matrix, small_rules, small_config):
    ids = [2400, 0, 17, 17, 999]
    for rule_id in (0, 45, 97, len(small_rules) - 1):
        tags = tag_structures(rule_id, ids, small_matrix)
        assert tags.dtype == np.uint8
        assert tags.tolist() == [eval_rule(small_rules[rule_id], structure_from_id(i, small_config)) for i in ids]


def test_budget_curve_rejects_unknown_answer_rule(small_dataset, small_partition, small_rules, small_config):
    answer = small_dataset.answers[0]
    answers = [AnswerRecord(game=answer.game, rule='zero red', tags=answer.tags)]
    rules = [r for r in small_rules if str(r) != 'zero red']
    with pytest.raises(SolverError, match='not among the loaded rules'):
        budget_curve(small_dataset.tests[:1], answers, FixedSource([]), [1], small_partition, rules, small_config, 0)


@pytest.mark.parametrize('seed', range(40))
def test_strict_selection_is_sound(seed, small_dataset, small_matrix, small_partition, small_rules, small_config):
    index = rule_index(small_rules)
    test = small_dataset.tests[seed % len(small_dataset.tests)]
    board = test.board[:8]
    ids, tags = [i for i, _ in board], [t for _, t in board]
    sampler = GrammarSampler(small_rules)
    outcome = crn_select(
        board, test.eval_ids, sampler, 30, small_matrix, small_partition, small_rules, small_config,
        mode='strict', seed=seed,
    )
    drawn = sampler.draw(board, 30, seed).conjectures
    fitting = [t for t in drawn if small_matrix.row_bits(index[t], ids).tolist() == tags]
    assert outcome.unknown == (not fitting)
    if not outcome.unknown:
        assert small_matrix.row_bits(outcome.rule_id, ids).tolist() == tags


@pytest.mark.parametrize('budget', [1, 7, 40])
def test_selection_cost_is_closed_form(budget, small_dataset, small_matrix, small_partition, small_rules, small_config):
    test = small_dataset.tests[0]
    outcome = crn_select(
        test.board, test.eval_ids, GrammarSampler(small_rules), budget,
        small_matrix, small_partition, small_rules, small_config, seed=3,
    )
    assert outcome.cost.cg_calls == budget
    assert outcome.cost.j_evals == budget * len(test.board) + len(test.eval_ids)


def test_budget_curve_is_monotone(small_dataset, small_partition, small_rules, small_config):
    budgets = [50, 1, 20, 5, 200, 2]
    curve = budget_curve(
        small_dataset.tests, small_dataset.answers, GrammarSampler(small_rules), budgets,
        small_partition, small_rules, small_config, seed=17,
    )
    assert [p['budget'] for p in curve] == sorted(budgets)
    fractions = [p['fraction'] for p in curve]
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))
