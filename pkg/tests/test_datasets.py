import dataclasses

import numpy as np
import pytest

from odeentoy.datasets import (
    DatasetParams,
    _contrastive_pairs,
    build_test_board,
    contains_bigram,
    distinguish,
    generate_dataset,
    is_heldout,
    load_dataset,
    sample_observations,
    select_training_rules,
    write_dataset,
)
from odeentoy.errors import DatasetError
from odeentoy.matrix import is_representative, nearest_tagging, surviving_classes
from odeentoy.rules import parse_rule, rule_index, rule_productions, rule_tokens
from odeentoy.seeds import make_rng
from odeentoy.world import cell_distance, structure_from_id


@pytest.mark.parametrize('kwargs', [
    {'n': 0},
    {'k': -1},
    {'k': 8, 'n_pairs': 5},
    {'seed': 2 ** 64},
    {'heldout_quota': -1},
])
def test_invalid_params(kwargs):
    with pytest.raises(DatasetError):
        DatasetParams(**kwargs)


def test_paper_default():
    params = DatasetParams.paper_default(seed=1)
    assert (params.n, params.m, params.s, params.k, params.eval_size) == (1438, 1000, 1132, 32, 1176)
    assert params.as_dict()['heldout_bigrams'] == ['exactly 2']


def test_params_must_fit_world(small_config):
    with pytest.raises(DatasetError):
        DatasetParams(eval_size=2400, k=32).check_world(small_config)
    with pytest.raises(DatasetError):
        DatasetParams(m=5000).check_world(small_config)


@pytest.mark.parametrize('text, expected', [
    ('exactly 2 red', True),
    ('at_least 1 red and exactly 2 blue', True),
    ('exactly 2 red touching blue', True),
    ('at_least 2 red and at_most 2 red', True),
    ('at_most 2 pyramid and at_least 2 pyramid', True),
    ('at_least 2 red and at_most 2 blue', False),
    ('at_least 2 red or at_most 2 red', False),
    ('exactly 1 red', False),
    ('at_most 2 red', False),
])
def test_is_heldout(config, text, expected):
    assert is_heldout(parse_rule(text, config), ('exactly 2',)) is expected


def test_contains_bigram(config):
    rule = parse_rule('at_least 1 red and exactly 2 blue', config)
    assert contains_bigram(rule, 'exactly 2')
    assert contains_bigram(rule, 'red and')
    assert not contains_bigram(rule, 'exactly 1')


def test_select_training_rules(small_params, small_rules, small_config):
    selected = select_training_rules(small_params, small_rules, small_config)
    assert len(selected) == small_params.n
    assert selected == sorted(set(selected))
    assert not any(is_heldout(small_rules[i], small_params.heldout_bigrams) for i in selected)
    assert selected == select_training_rules(small_params, small_rules, small_config)

    eligible = [r for r in small_rules if not is_heldout(r, small_params.heldout_bigrams)]
    needed = set().union(*({*rule_tokens(r), *rule_productions(r)} for r in eligible))
    covered = set().union(*({*rule_tokens(small_rules[i]), *rule_productions(small_rules[i])} for i in selected))
    assert needed <= covered


def test_select_training_rules_errors(small_params, small_rules, small_config):
    with pytest.raises(DatasetError, match='seed'):
        select_training_rules(dataclasses.replace(small_params, seed=None), small_rules, small_config)
    with pytest.raises(DatasetError, match='cannot cover'):
        select_training_rules(dataclasses.replace(small_params, n=1), small_rules, small_config)
    with pytest.raises(DatasetError, match='survive'):
        select_training_rules(dataclasses.replace(small_params, n=len(small_rules)), small_rules, small_config)


def test_distinguish_separates(small_matrix, small_partition):
    rule_id = 20
    truth_class = small_partition.class_of[rule_id]
    alive = [c for c in range(small_partition.n_classes) if c != truth_class]
    picked = distinguish(small_matrix, small_partition, rule_id, alive, make_rng(1, 'x'), exclude={100, 200})
    assert len(set(picked)) == len(picked)
    assert not {100, 200} & set(picked)
    survivors = surviving_classes(small_matrix, small_partition, picked, small_matrix.row_bits(rule_id, picked))
    assert survivors.tolist() == [truth_class]

    with pytest.raises(DatasetError):
        distinguish(small_matrix, small_partition, rule_id, alive, make_rng(1, 'x'), limit=1)


def test_sample_observations(small_matrix, small_partition):
    obs = sample_observations(30, 50, make_rng(5, 'obs'), small_matrix, small_partition)
    ids = [i for i, _ in obs]
    assert len(ids) == len(set(ids)) == 50
    assert all(tag == small_matrix.bit(30, i) for i, tag in obs)
    assert is_representative(obs, 30, small_matrix, small_partition).representative
    assert obs == sample_observations(30, 50, make_rng(5, 'obs'), small_matrix, small_partition)

    everything = sample_observations(30, small_matrix.n_structures, make_rng(5, 'obs'), small_matrix, small_partition)
    assert len(everything) == small_matrix.n_structures
    with pytest.raises(DatasetError):
        sample_observations(30, small_matrix.n_structures + 1, make_rng(5, 'obs'), small_matrix, small_partition)


def test_contrastive_pairs(small_matrix, small_rules, small_config):
    rule_id = rule_index(small_rules)['at_least 1 red']
    truth = small_matrix.row_bits(rule_id)
    pairs = _contrastive_pairs(truth, 4, make_rng(9, 'pairs'), small_config, attempts=500)
    assert len(pairs) == 4
    flat = [s for pair in pairs for s in pair]
    assert len(set(flat)) == len(flat)
    for x, y in pairs:
        assert truth[x] != truth[y]
        assert cell_distance(structure_from_id(x, small_config), structure_from_id(y, small_config)) == 1


def test_contrastive_pairs_fallback(small_matrix, small_rules, small_config):
    rule_id = rule_index(small_rules)['at_least 1 red']
    truth = small_matrix.row_bits(rule_id)
    pairs = _contrastive_pairs(truth, 2, make_rng(9, 'pairs'), small_config, attempts=0)
    assert len(pairs) == 2
    assert all(truth[x] != truth[y] for x, y in pairs)


def test_build_test_board(small_matrix, small_partition, small_config):
    board = build_test_board(40, make_rng(3, 'board'), small_matrix, small_partition, small_config, k=32, n_pairs=3)
    ids = [i for i, _ in board]
    assert len(board) == 32
    assert len(set(ids)) == 32
    assert all(tag == small_matrix.bit(40, i) for i, tag in board)
    assert is_representative(board, 40, small_matrix, small_partition).representative

    with pytest.raises(DatasetError):
        build_test_board(40, make_rng(3, 'board'), small_matrix, small_partition, small_config, k=2, n_pairs=1)


class TestGeneratedDataset:

    def test_sizes(self, small_dataset, small_params):
        assert len(small_dataset.training) == small_params.n
        assert len(small_dataset.tests) == small_params.s
        assert len(small_dataset.answers) == small_params.s
        assert [t.game for t in small_dataset.tests] == list(range(small_params.s))
        assert [a.game for a in small_dataset.answers] == list(range(small_params.s))

    def test_training_games(self, small_dataset, small_params, small_rules, small_matrix, small_partition):
        for game in small_dataset.training:
            assert str(small_rules[game.rule_id]) == game.rule
            assert not is_heldout(small_rules[game.rule_id], small_params.heldout_bigrams)
            ids = [i for i, _ in game.observations]
            assert len(set(ids)) == small_params.m
            assert is_representative(game.observations, game.rule_id, small_matrix, small_partition).representative

    def test_boards(self, small_dataset, small_params, small_rules, small_matrix, small_partition):
        index = rule_index(small_rules)
        for test, answer in zip(small_dataset.tests, small_dataset.answers):
            rule_id = index[answer.rule]
            board_ids = [i for i, _ in test.board]
            assert len(test.board) == small_params.k
            assert len(set(board_ids)) == small_params.k
            assert is_representative(test.board, rule_id, small_matrix, small_partition).representative

    def test_evaluation_structures(self, small_dataset, small_params, small_rules, small_matrix, small_partition):
        index = rule_index(small_rules)
        for test, answer in zip(small_dataset.tests, small_dataset.answers):
            rule_id = index[answer.rule]
            assert len(test.eval_ids) == small_params.eval_size
            assert len(set(test.eval_ids)) == small_params.eval_size
            assert not set(test.eval_ids) & {i for i, _ in test.board}
            np.testing.assert_array_equal(answer.tags, small_matrix.row_bits(rule_id, test.eval_ids))
            assert nearest_tagging(answer.tags, test.eval_ids, rule_id, small_matrix, small_partition).is_nearest

    def test_test_classes(self, small_dataset, small_params, small_rules, small_partition):
        index = rule_index(small_rules)
        training = {small_partition.class_of[g.rule_id] for g in small_dataset.training}
        tests = [small_partition.class_of[index[a.rule]] for a in small_dataset.answers]
        assert len(set(tests)) == len(tests)
        assert not training & set(tests)
        heldout = sum(contains_bigram(small_rules[index[a.rule]], 'exactly 2') for a in small_dataset.answers)
        assert heldout >= small_params.heldout_quota

    def test_manifest(self, small_dataset, small_matrix, small_config):
        manifest = small_dataset.manifest
        assert manifest['seed'] == small_dataset.seed
        assert manifest['matrix_checksum'] == small_matrix.checksum
        assert manifest['n_rules'] == small_matrix.n_rules
        assert manifest['world'] == small_config.as_dict()
        assert manifest['params']['n'] == 20

    def test_thread_count_does_not_matter(
        self, small_dataset, small_params, small_rules, small_matrix, small_partition, small_config
    ):
        again = generate_dataset(
            dataclasses.replace(small_params, threads=3), small_rules, small_matrix, small_partition, small_config
        )
        assert again.training == small_dataset.training
        assert again.tests == small_dataset.tests
        assert again.answers == small_dataset.answers

    def test_write_and_load(self, tmp_path, small_dataset, small_config):
        write_dataset(small_dataset, tmp_path, small_config)
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            'answers.jsonl', 'manifest.json', 'test.jsonl', 'train.jsonl'
        ]
        loaded = load_dataset(tmp_path, small_config)
        assert loaded.training == small_dataset.training
        assert loaded.tests == small_dataset.tests
        assert loaded.answers == small_dataset.answers
        assert loaded.params == small_dataset.params
        assert load_dataset(tmp_path, small_config, answers=False).answers == []


def test_not_enough_test_classes(small_params, small_rules, small_matrix, small_partition, small_config):
    params = dataclasses.replace(small_params, s=small_partition.n_classes)
    with pytest.raises(DatasetError, match='disjoint from training'):
        generate_dataset(params, small_rules, small_matrix, small_partition, small_config)


def test_missing_seed_is_drawn(small_params, small_rules, small_matrix, small_partition, small_config):
    params = dataclasses.replace(small_params, seed=None, s=2, m=100, eval_size=50)
    dataset = generate_dataset(params, small_rules, small_matrix, small_partition, small_config)
    assert dataset.seed is not None
    assert dataset.manifest['seed'] == dataset.seed
