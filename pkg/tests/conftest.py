import pytest

from odeentoy.datasets import DatasetParams, generate_dataset
from odeentoy.expressions import Conjunction, RelationalRule, SimpleRule
from odeentoy.matrix import build_matrix, equivalence_classes
from odeentoy.rules import enumerate_rules
from odeentoy.world import WorldConfig

SMALL_LENGTH = 4
SMALL_SEED = 20240611


def rule_subset(rules: list) -> list:
    """
    Deterministic reduced rule list: every simple rule, a stride of relational rules and a stride of
    conjunctions (whose operands are simple rules, hence also in the subset).
    """
    simple = [r for r in rules if isinstance(r, SimpleRule)]
    relational = [r for r in rules if isinstance(r, RelationalRule)][::139]
    conjunctions = [r for r in rules if isinstance(r, Conjunction)][::997]
    return [*simple, *relational, *conjunctions]


@pytest.fixture(scope='session')
def config():
    return WorldConfig()


@pytest.fixture(scope='session')
def rules(config):
    return enumerate_rules(config)


@pytest.fixture(scope='session')
def small_config():
    return WorldConfig(length=SMALL_LENGTH)


@pytest.fixture(scope='session')
def small_rules(small_config):
    return rule_subset(enumerate_rules(small_config))


@pytest.fixture(scope='session')
def small_matrix(small_rules, small_config):
    return build_matrix(small_rules, small_config)


@pytest.fixture(scope='session')
def small_partition(small_matrix):
    return equivalence_classes(small_matrix)


@pytest.fixture(scope='session')
def small_params():
    return DatasetParams(
        n=20,
        m=300,
        s=12,
        k=32,
        eval_size=200,
        seed=SMALL_SEED,
        heldout_quota=3,
        n_pairs=3,
        pair_attempts=500,
    )


@pytest.fixture(scope='session')
def small_dataset(small_params, small_rules, small_matrix, small_partition, small_config):
    return generate_dataset(small_params, small_rules, small_matrix, small_partition, small_config)


@pytest.fixture(scope='session')
def full_matrix(rules, config):
    return build_matrix(rules, config, threads=4)
