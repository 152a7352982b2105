"""
Generation of Odeen datasets: training games (a rule and its labelled observations) and test games
(a hidden rule, a board of tagged structures and the evaluation structures to tag).

Every random choice is drawn from a named stream of the root seed (see `odeentoy.seeds`), so a game's
content depends only on the seed, the parameters and the matrix; never on threading or on the order
games are generated in.
"""
import dataclasses
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from odeentoy import __version__, kernels
from odeentoy.errors import DatasetError
from odeentoy.expressions import Conjunction, RuleAst
from odeentoy.files import read_json, write_json
from odeentoy.matrix import EquivalencePartition, SemanticMatrix, is_representative, surviving_classes
from odeentoy.records import AnswerRecord, TestGame, TrainingGame, read_records, write_records
from odeentoy.rules import coverage_report, rule_productions, rule_tokens
from odeentoy.seeds import make_rng, new_root_seed
from odeentoy.world import WorldConfig, cell_neighbors

logger = logging.getLogger(__name__)

TRAIN_FILE = 'train.jsonl'
TEST_FILE = 'test.jsonl'
ANSWERS_FILE = 'answers.jsonl'
MANIFEST_FILE = 'manifest.json'

_POOL_SIZE = 1024


@dataclass(frozen=True)
class DatasetParams:
    """
    Sizes and seed of a generated dataset.

    Attributes:
        n: Number of training rules.
        m: Observations per training rule.
        s: Number of test games.
        k: Board size of a test game.
        eval_size: Evaluation structures per test game.
        seed: 64-bit root seed, drawn at generation time when None.
        heldout_bigrams: Token bigrams kept out of training, e.g. `exactly 2`.
        heldout_quota: Target number of test rules containing a held-out bigram.
        n_pairs: Contrastive pairs opening every board.
        pair_attempts: Random draws spent looking for contrastive pairs before scanning.
        threads: Worker threads for per-game generation.
    """
    n: int = 1438
    m: int = 1000
    s: int = 1132
    k: int = 32
    eval_size: int = 1176
    seed: int | None = None
    heldout_bigrams: tuple[str, ...] = ('exactly 2',)
    heldout_quota: int = 72
    n_pairs: int = 5
    pair_attempts: int = 2000
    threads: int = 1

    def __post_init__(self):
        for name in ('n', 'm', 's', 'k', 'eval_size', 'threads'):
            if getattr(self, name) <= 0:
                raise DatasetError(f'{name} must be positive, got {getattr(self, name)}')
        if self.heldout_quota < 0 or self.n_pairs < 0 or self.pair_attempts < 0:
            raise DatasetError('heldout_quota, n_pairs and pair_attempts must not be negative')
        if 2 * self.n_pairs > self.k:
            raise DatasetError(f'{self.n_pairs} contrastive pairs do not fit a board of {self.k}')
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise DatasetError(f'Seed {self.seed} out of the 64-bit range')
        object.__setattr__(self, 'heldout_bigrams', tuple(self.heldout_bigrams))

    @classmethod
    def paper_default(cls, seed: int = None, **overrides) -> 'DatasetParams':
        return cls(n=1438, m=1000, s=1132, k=32, eval_size=1176, seed=seed, **overrides)

    def check_world(self, config: WorldConfig):
        if self.eval_size + self.k > config.universe_size:
            raise DatasetError(
                f'Board ({self.k}) and evaluation ({self.eval_size}) do not fit a universe of {config.universe_size}'
            )
        if self.m > config.universe_size:
            raise DatasetError(f'm = {self.m} exceeds the universe size {config.universe_size}')

    def as_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data['heldout_bigrams'] = list(self.heldout_bigrams)
        return data


@dataclass
class Dataset:
    """
    A generated (or loaded) dataset; `answers[i]` is the private side of `tests[i]`.
    """
    params: DatasetParams
    training: list[TrainingGame]
    tests: list[TestGame]
    answers: list[AnswerRecord]
    manifest: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.params.seed


def contains_bigram(rule: RuleAst, bigram: str) -> bool:
    return f' {bigram} ' in f' {" ".join(rule_tokens(rule))} '


def _is_split_exactly(rule: RuleAst, n: int) -> bool:
    # at_least n X and at_most n X, in either order
    if not isinstance(rule, Conjunction) or rule.conj != 'and' or rule.left.obj != rule.right.obj:
        return False
    kinds = {(rule.left.quantifier.kind, rule.left.quantifier.n), (rule.right.quantifier.kind, rule.right.quantifier.n)}
    return kinds == {('at_least', n), ('at_most', n)}


def is_heldout(rule: RuleAst, heldout_bigrams: tuple[str, ...]) -> bool:
    """
    Whether a rule is kept out of training: it contains a held-out bigram, or it spells
    `exactly N X` as `at_least N X and at_most N X` for a held-out `exactly N`.
    """
    for bigram in heldout_bigrams:
        if contains_bigram(rule, bigram):
            return True
        words = bigram.split()
        if len(words) == 2 and words[0] == 'exactly' and words[1].isdigit() and _is_split_exactly(rule, int(words[1])):
            return True
    return False


def select_training_rules(
    params: DatasetParams,
    rules: list[RuleAst],
    config: WorldConfig,
) -> list[int]:
    """
    Choose the training rules.

    Held-out rules are dropped first. A greedy pass then picks, until every token and production used
    by the remaining rules is covered, the rule covering most uncovered items (ties broken by a seeded
    order); the rest of the n rules is drawn uniformly without replacement.

    Returns:
        list[int]: n rule ids, ascending.

    Raises:
        DatasetError: If n rules cannot cover every surviving token and production, naming what stays
        uncovered, or if fewer than n rules survive the exclusions.
    """
    if params.seed is None:
        raise DatasetError('A seed is required to select training rules')
    rng = make_rng(params.seed, 'train', 'select')
    eligible = [i for i, rule in enumerate(rules) if not is_heldout(rule, params.heldout_bigrams)]
    if len(eligible) < params.n:
        raise DatasetError(f'Only {len(eligible)} rules survive the exclusions, {params.n} requested')

    items = {i: {*rule_tokens(rules[i]), *rule_productions(rules[i])} for i in eligible}
    uncovered = set().union(*items.values())
    order = [eligible[j] for j in rng.permutation(len(eligible))]

    chosen = []
    while uncovered:
        best = max(order, key=lambda i: len(items[i] & uncovered))
        if len(chosen) == params.n:
            tokens = sorted(t for t in uncovered if '->' not in t)
            productions = sorted(p for p in uncovered if '->' in p)
            raise DatasetError(
                f'{params.n} training rules cannot cover the grammar; uncovered tokens {tokens}, '
                f'uncovered productions {productions}'
            )
        chosen.append(best)
        uncovered -= items[best]
    logger.debug('Coverage reached with %d rules', len(chosen))

    taken = set(chosen)
    rest = np.asarray([i for i in eligible if i not in taken], dtype=np.int64)
    fill = rng.choice(rest, size=params.n - len(chosen), replace=False) if params.n > len(chosen) else []
    selected = sorted([*chosen, *(int(i) for i in fill)])

    report = coverage_report([rules[i] for i in selected], config)
    logger.info(
        'Selected %d training rules (%d for coverage); uncovered grammar tokens: %s',
        len(selected), len(chosen), report.uncovered_tokens or 'none'
    )
    return selected


def distinguish(
    m: SemanticMatrix,
    partition: EquivalencePartition,
    rule_id: int,
    alive,
    rng: np.random.Generator,
    exclude=(),
    limit: int = None,
    pool_size: int = _POOL_SIZE,
) -> list[int]:
    """
    Greedily pick structures separating a rule from the still-alive other classes.

    Each step adds the structure on which most alive classes disagree with the rule, searched first in
    a seeded pool of candidates, then over the whole universe when the pool no longer helps.

    Args:
        m: The matrix.
        partition: Its partition.
        rule_id: The rule to isolate.
        alive: Class ids (other than the rule's) not yet contradicted.
        rng: Generator for the candidate pool.
        exclude: Structure ids that must not be picked.
        limit: Maximum number of structures to pick.
        pool_size: Size of the candidate pool.

    Returns:
        list[int]: Picked structure ids, in picking order.

    Raises:
        DatasetError: If `limit` is reached or no structure separates the remaining classes.
    """
    alive = np.asarray(alive, dtype=np.int64)
    n_structures = m.n_structures
    banned = np.zeros(n_structures, dtype=bool)
    banned[np.asarray(list(exclude), dtype=np.int64)] = True

    pool = np.flatnonzero(~banned)
    if len(pool) > pool_size:
        pool = np.sort(rng.choice(pool, size=pool_size, replace=False))
    truth_pool = m.row_bits(rule_id, pool)
    disagree = m.restrict(pool, partition.representatives[alive]) != truth_pool
    alive_mask = np.ones(len(alive), dtype=bool)

    picked = []
    while alive_mask.any():
        if limit is not None and len(picked) >= limit:
            raise DatasetError(
                f'Rule {rule_id} cannot be isolated within {limit} more structures; '
                f'surviving classes {alive[alive_mask][:20].tolist()}'
            )
        counts = disagree[alive_mask].sum(axis=0)
        j = int(np.argmax(counts)) if len(counts) else 0
        if len(counts) and counts[j] > 0:
            struct_id = int(pool[j])
            alive_mask &= ~disagree[:, j]
            disagree[:, j] = False
        else:
            selected = partition.representatives[alive[alive_mask]]
            counts = kernels.diff_column_counts(m.rows, selected, m.row(rule_id), n_structures)
            counts[banned] = -1
            struct_id = int(np.argmax(counts))
            if counts[struct_id] <= 0:
                raise DatasetError(
                    f'No structure separates rule {rule_id} from classes {alive[alive_mask][:20].tolist()}'
                )
            bits = m.restrict([struct_id], partition.representatives[alive])[:, 0]
            alive_mask &= bits == m.bit(rule_id, struct_id)
        banned[struct_id] = True
        picked.append(struct_id)
    return picked


def _other_survivors(m, partition, rule_id, ids) -> np.ndarray:
    truth_class = int(partition.class_of[rule_id])
    alive = surviving_classes(m, partition, ids, m.row_bits(rule_id, ids))
    return alive[alive != truth_class]


def _repair_tail(m, partition, rule_id, ids, rng, exclude=()) -> np.ndarray:
    """
    Replace trailing ids by distinguishing structures until only the rule's class survives on `ids`.
    """
    ids = np.asarray(ids, dtype=np.int64)
    extra = []
    while True:
        current = np.concatenate([ids[:len(ids) - len(extra)], np.asarray(extra, dtype=np.int64)])
        alive = _other_survivors(m, partition, rule_id, current)
        if not len(alive):
            break
        extra.extend(distinguish(m, partition, rule_id, alive, rng, exclude={*exclude, *current.tolist()}))
        if len(extra) > len(ids):
            raise DatasetError(
                f'Rule {rule_id} cannot be isolated by {len(ids)} structures; '
                f'surviving classes {alive[:20].tolist()}'
            )
    if extra:
        logger.debug('Rule %d: replaced %d sampled structures to isolate its class', rule_id, len(extra))
    return current


def sample_observations(
    rule_id: int,
    m_obs: int,
    rng: np.random.Generator,
    m: SemanticMatrix,
    partition: EquivalencePartition,
) -> list[tuple[int, int]]:
    """
    Sample `m_obs` distinct structures uniformly and tag them with the rule.

    When the sample does not isolate the rule's class, its final entries are replaced by greedily chosen
    distinguishing structures.

    Raises:
        DatasetError: If the class cannot be isolated by `m_obs` structures.
    """
    if m_obs > m.n_structures:
        raise DatasetError(f'{m_obs} observations requested from a universe of {m.n_structures}')
    ids = rng.choice(m.n_structures, size=m_obs, replace=False)
    if m_obs < m.n_structures:
        ids = _repair_tail(m, partition, rule_id, ids, rng)
    tags = m.row_bits(rule_id, ids)
    return [(int(i), int(t)) for i, t in zip(ids, tags)]


def _contrastive_pairs(
    truth: np.ndarray,
    n_pairs: int,
    rng: np.random.Generator,
    config: WorldConfig,
    attempts: int,
) -> list[tuple[int, int]]:
    """
    Pairs of structures one cell apart with opposite tags, sharing no structure.
    """
    used = set()
    pairs = []

    def offer(x: int, y: int) -> bool:
        if truth[x] != truth[y] and x not in used and y not in used:
            used.update((x, y))
            pairs.append((x, y))
        return len(pairs) == n_pairs

    for _ in range(attempts):
        if len(pairs) == n_pairs:
            return pairs
        x = int(rng.integers(config.universe_size))
        neighbors = cell_neighbors(x, config)
        offer(x, neighbors[int(rng.integers(len(neighbors)))])

    if len(pairs) < n_pairs:
        logger.warning(
            'Contrastive search found %d/%d pairs in %d attempts, scanning neighbours of the minority tag',
            len(pairs), n_pairs, attempts
        )
        minority = np.flatnonzero(truth) if truth.sum() * 2 <= len(truth) else np.flatnonzero(~truth)
        for x in rng.permutation(minority):
            x = int(x)
            if x in used:
                continue
            if any(offer(x, y) for y in cell_neighbors(x, config)):
                break
    return pairs


def build_test_board(
    rule_id: int,
    rng: np.random.Generator,
    m: SemanticMatrix,
    partition: EquivalencePartition,
    config: WorldConfig,
    k: int = 32,
    n_pairs: int = 5,
    pair_attempts: int = 2000,
) -> list[tuple[int, int]]:
    """
    Build a representative board of `k` tagged structures for a rule.

    The board opens with contrastive pairs (one cell apart, opposite tags), continues with structures
    greedily chosen to eliminate the most surviving classes until only the rule's class is left, and is
    padded with random structures. All board structures are distinct.

    Raises:
        DatasetError: If the rule's class cannot be isolated by `k` structures.
    """
    truth = m.row_bits(rule_id)
    pairs = _contrastive_pairs(truth, n_pairs, rng, config, pair_attempts)
    if len(pairs) < n_pairs:
        logger.warning('Rule %d admits only %d disjoint contrastive pairs', rule_id, len(pairs))
    ids = [s for pair in pairs for s in pair]

    alive = _other_survivors(m, partition, rule_id, ids)
    if len(alive):
        ids.extend(distinguish(m, partition, rule_id, alive, rng, exclude=ids, limit=k - len(ids)))

    if len(ids) < k:
        free = np.ones(m.n_structures, dtype=bool)
        free[ids] = False
        ids.extend(int(i) for i in rng.choice(np.flatnonzero(free), size=k - len(ids), replace=False))

    board = [(i, int(truth[i])) for i in ids]
    report = is_representative(board, rule_id, m, partition)
    if not report.representative:
        raise DatasetError(f'Board of rule {rule_id} leaves classes {report.unresolved[:20]} unresolved')
    return board


def sample_eval_ids(
    rule_id: int,
    board_ids,
    eval_size: int,
    rng: np.random.Generator,
    m: SemanticMatrix,
    partition: EquivalencePartition,
) -> list[int]:
    """
    Sample distinct evaluation structures disjoint from the board, separating the rule's class from
    every other class.
    """
    free = np.ones(m.n_structures, dtype=bool)
    free[np.asarray(board_ids, dtype=np.int64)] = False
    ids = rng.choice(np.flatnonzero(free), size=eval_size, replace=False)
    ids = _repair_tail(m, partition, rule_id, ids, rng, exclude=board_ids)
    return [int(i) for i in ids]


def _select_test_rules(
    params: DatasetParams,
    rules: list[RuleAst],
    partition: EquivalencePartition,
    training_ids: list[int],
) -> list[int]:
    rng = make_rng(params.seed, 'test', 'select')
    training_classes = {int(partition.class_of[i]) for i in training_ids}
    heldout, others = [], []
    for i in rng.permutation(len(rules)):
        i = int(i)
        if int(partition.class_of[i]) in training_classes:
            continue
        (heldout if is_heldout(rules[i], params.heldout_bigrams) else others).append(i)

    used = set()

    def take(pool: list[int], limit: int) -> list[int]:
        out = []
        for i in pool:
            if len(out) == limit:
                break
            class_id = int(partition.class_of[i])
            if class_id not in used:
                used.add(class_id)
                out.append(i)
        return out

    quota = min(params.heldout_quota, params.s)
    chosen = take(
        [i for i in heldout if any(contains_bigram(rules[i], b) for b in params.heldout_bigrams)], quota
    )
    if len(chosen) < quota:
        logger.warning('Only %d test rules with a held-out construct available, %d requested', len(chosen), quota)
    chosen += take(others, params.s - len(chosen))
    if len(chosen) < params.s:
        achievable = partition.n_classes - len(training_classes)
        raise DatasetError(
            f'{params.s} test games requested but only {achievable} classes are disjoint from training'
        )
    return [chosen[j] for j in rng.permutation(len(chosen))]


def generate_dataset(
    params: DatasetParams,
    rules: list[RuleAst],
    m: SemanticMatrix,
    partition: EquivalencePartition,
    config: WorldConfig,
) -> Dataset:
    """
    Generate the training games, the public test games and their private answers.

    Args:
        params: Sizes and seed; a missing seed is drawn and recorded.
        rules: The full enumeration, row i of `m` being rule i.
        m: The semantic matrix.
        partition: Its equivalence partition.
        config: The world.

    Returns:
        Dataset: The dataset, with its manifest.

    Raises:
        DatasetError: If coverage, isolation or the number of disjoint test classes cannot be met.
    """
    params.check_world(config)
    if m.n_rules != len(rules):
        raise DatasetError(f'Matrix has {m.n_rules} rows for {len(rules)} rules')
    if params.seed is None:
        params = dataclasses.replace(params, seed=new_root_seed())
    seed = params.seed
    logger.info('Generating dataset with seed %d', seed)

    training_ids = select_training_rules(params, rules, config)

    def training_game(rule_id: int) -> TrainingGame:
        obs = sample_observations(rule_id, params.m, make_rng(seed, 'train', 'obs', rule_id), m, partition)
        return TrainingGame(rule=str(rules[rule_id]), rule_id=rule_id, observations=obs)

    test_ids = _select_test_rules(params, rules, partition, training_ids)

    def test_game(game: int) -> tuple[TestGame, AnswerRecord]:
        rule_id = test_ids[game]
        board = build_test_board(
            rule_id,
            make_rng(seed, 'test', 'board', game),
            m,
            partition,
            config,
            k=params.k,
            n_pairs=params.n_pairs,
            pair_attempts=params.pair_attempts,
        )
        eval_ids = sample_eval_ids(
            rule_id, [i for i, _ in board], params.eval_size, make_rng(seed, 'test', 'eval', game), m, partition
        )
        tags = tuple(int(t) for t in m.row_bits(rule_id, eval_ids))
        return (
            TestGame(game=game, board=board, eval_ids=eval_ids),
            AnswerRecord(game=game, rule=str(rules[rule_id]), tags=tags),
        )

    with ThreadPoolExecutor(max_workers=params.threads) as pool:
        training = list(pool.map(training_game, training_ids))
        logger.info('Generated %d training games', len(training))
        tests, answers = [], []
        for done, (test, answer) in enumerate(pool.map(test_game, range(len(test_ids))), start=1):
            tests.append(test)
            answers.append(answer)
            if done % 100 == 0:
                logger.info('Generated %d/%d test games', done, len(test_ids))
    logger.info('Generated %d test games', len(tests))

    manifest = {
        'tool': 'odeentoy',
        'version': __version__,
        'seed': seed,
        'params': params.as_dict(),
        'world': config.as_dict(),
        'n_rules': m.n_rules,
        'matrix_checksum': m.checksum,
    }
    return Dataset(params=params, training=training, tests=tests, answers=answers, manifest=manifest)


def write_dataset(dataset: Dataset, out_dir: str | os.PathLike, config: WorldConfig):
    """
    Write `train.jsonl`, `test.jsonl`, `answers.jsonl` and `manifest.json` into `out_dir`.
    """
    os.makedirs(out_dir, exist_ok=True)
    write_records(os.path.join(out_dir, TRAIN_FILE), dataset.training, config=config)
    write_records(os.path.join(out_dir, TEST_FILE), dataset.tests, config=config)
    write_records(os.path.join(out_dir, ANSWERS_FILE), dataset.answers, config=config)
    write_json(os.path.join(out_dir, MANIFEST_FILE), dataset.manifest)
    logger.info('Dataset written to %s', out_dir)


def _params_from_manifest(manifest: dict) -> DatasetParams:
    data = dict(manifest.get('params', {}))
    if 'heldout_bigrams' in data:
        data['heldout_bigrams'] = tuple(data['heldout_bigrams'])
    known = {f.name for f in dataclasses.fields(DatasetParams)}
    return DatasetParams(**{k: v for k, v in data.items() if k in known})


def load_dataset(path: str | os.PathLike, config: WorldConfig, answers: bool = True) -> Dataset:
    """
    Load a dataset directory written by `write_dataset`.

    Args:
        path: The dataset directory.
        config: The world, used to decode structures.
        answers: Whether to read the private answer file.
    """
    manifest = read_json(os.path.join(path, MANIFEST_FILE))
    training = list(read_records(os.path.join(path, TRAIN_FILE), TrainingGame, config=config))
    tests = list(read_records(os.path.join(path, TEST_FILE), TestGame, config=config))
    answer_records = []
    answers_path = os.path.join(path, ANSWERS_FILE)
    if answers and os.path.exists(answers_path):
        answer_records = list(read_records(answers_path, AnswerRecord, config=config))
    return Dataset(
        params=_params_from_manifest(manifest),
        training=training,
        tests=tests,
        answers=answer_records,
        manifest=manifest,
    )
