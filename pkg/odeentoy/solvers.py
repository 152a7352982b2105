import abc
import itertools
import json
import logging
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from odeentoy.errors import RuleParseError, SolverError
from odeentoy.expressions import RuleAst
from odeentoy.matrix import EquivalencePartition, SemanticMatrix, surviving_classes
from odeentoy.records import AnswerRecord, PredictionRecord, TestGame
from odeentoy.rules import parse_rule, rule_index
from odeentoy.seeds import derive_seed, new_root_seed
from odeentoy.world import WorldConfig, render_structure, structure_from_id

logger = logging.getLogger(__name__)

SolveMode = Literal['exhaustive', 'sample', 'external']
SelectMode = Literal['best_hit_rate', 'strict']
SOLVE_MODES = ('exhaustive', 'sample', 'external')
SELECT_MODES = ('best_hit_rate', 'strict')


@dataclass
class CostCounters:
    """
    Oracle-call accounting of one solve.

    Attributes:
        cg_calls: Conjectures drawn from the conjecture source.
        board_evals: Interpreter evaluations spent checking board observations.
        tagging_evals: Interpreter evaluations spent tagging evaluation structures.
    """
    cg_calls: int = 0
    board_evals: int = 0
    tagging_evals: int = 0

    @property
    def j_evals(self) -> int:
        return self.board_evals + self.tagging_evals

    def rule_cost(self) -> dict:
        """
        Cost of the rule-only task, which skips tagging the evaluation structures.
        """
        return {'cg_calls': self.cg_calls, 'j_evals': self.board_evals}

    def dump_dict(self) -> dict:
        return {
            'cg_calls': self.cg_calls,
            'j_evals': self.j_evals,
            'board_evals': self.board_evals,
            'tagging_evals': self.tagging_evals,
        }


@dataclass
class SolveOutcome:
    """
    Result of solving one game. `rule_id` is None when the answer is Unknown.
    """
    rule_id: int | None
    rule: str | None
    class_id: int | None
    tags: np.ndarray | None
    consistent_class_count: int
    cost: CostCounters = field(default_factory=CostCounters)
    parse_failures: int = 0
    timed_out: bool = False

    @property
    def unknown(self) -> bool:
        return self.rule_id is None

    def prediction(self, game: int, eval_size: int) -> PredictionRecord:
        """
        Prediction record of the outcome; an Unknown answer tags every structure 0.
        """
        if self.unknown:
            return PredictionRecord(game=game, tags=(0,) * eval_size, rule=None)
        return PredictionRecord(game=game, tags=tuple(int(t) for t in self.tags), rule=self.rule)


@dataclass(frozen=True)
class SolveParams:
    """
    Configuration of a solve run.

    Attributes:
        mode: `exhaustive`, `sample` (seeded grammar sampler) or `external` (child process).
        budget: Conjectures drawn per game in `sample` and `external` modes.
        strict: Answer Unknown unless a conjecture explains the whole board.
        seed: Root seed of the sampler streams; drawn when None.
        threads: Games solved concurrently.
        command: Command line of the external conjecture process.
        timeout: Seconds allowed per external batch.
    """
    mode: SolveMode = 'exhaustive'
    budget: int = 300
    strict: bool = False
    seed: int | None = None
    threads: int = 1
    command: str | None = None
    timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in SOLVE_MODES:
            raise SolverError(f'Unknown solve mode {self.mode!r}, expected one of {SOLVE_MODES}')
        if self.budget < 1:
            raise SolverError(f'Budget must be at least 1, got {self.budget}')
        if self.threads < 1:
            raise SolverError(f'Threads must be at least 1, got {self.threads}')
        if self.mode == 'external' and not self.command:
            raise SolverError('External mode requires a command')
        if self.timeout <= 0:
            raise SolverError(f'Timeout must be positive, got {self.timeout}')


@dataclass
class ConjectureBatch:
    conjectures: list[str]
    timed_out: bool = False


class ConjectureSource(abc.ABC):
    """
    Produces candidate rule strings for a board. Strings need not be well formed.
    """

    @abc.abstractmethod
    def draw(self, board: list[tuple[int, int]], budget: int, seed: int) -> ConjectureBatch:
        """
        Draw up to `budget` conjectures for `board`, deterministically for a given `seed`.
        """
        raise NotImplementedError


class ExhaustiveEnumerator(ConjectureSource):
    """
    Every rule of the enumeration, in rule id order.
    """

    def __init__(self, rules: list[RuleAst]):
        self._texts = [str(rule) for rule in rules]

    def draw(self, board, budget, seed) -> ConjectureBatch:
        return ConjectureBatch(self._texts[:budget])


class GrammarSampler(ConjectureSource):
    """
    Uniform draws with replacement from the enumeration.

    Draws for a budget t are a prefix of the draws for any larger budget under the same seed.
    """

    def __init__(self, rules: list[RuleAst]):
        self._texts = [str(rule) for rule in rules]

    def draw(self, board, budget, seed) -> ConjectureBatch:
        rng = np.random.Generator(np.random.PCG64(seed))
        ids = rng.integers(len(self._texts), size=budget, dtype=np.int64)
        return ConjectureBatch([self._texts[i] for i in ids])


class ExternalProcess(ConjectureSource):
    """
    Conjectures produced by a child process speaking a line protocol over standard input and output.

    The harness writes one JSON request line `{"board": [[text, tag], ...], "budget": t, "seed": u64}`
    and reads at most t conjecture lines; a blank line or the end of the stream ends the batch.

    Example:
        ```python
        source = ExternalProcess('python my_generator.py', config, timeout=30)
        batch = source.draw(board, 300, seed)
        ```
    """

    def __init__(self, command: str | list[str], config: WorldConfig, timeout: float = 60.0):
        self._argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._config = config
        self._timeout = timeout

    def request(self, board, budget: int, seed: int) -> str:
        payload = {
            'board': [[render_structure(structure_from_id(i, self._config)), int(tag)] for i, tag in board],
            'budget': budget,
            'seed': seed,
        }
        return json.dumps(payload, ensure_ascii=False)

    def draw(self, board, budget, seed) -> ConjectureBatch:
        try:
            proc = subprocess.Popen(
                self._argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding='utf-8',
            )
        except OSError as e:
            raise SolverError(f'Cannot start conjecture process {self._argv}: {e}') from e

        try:
            out, _ = proc.communicate(self.request(board, budget, seed) + '\n', timeout=self._timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            logger.warning('Conjecture process timed out after %.1f s', self._timeout)
            return ConjectureBatch([], timed_out=True)

        if proc.returncode:
            logger.warning('Conjecture process exited with status %d', proc.returncode)
        conjectures = []
        for line in out.splitlines():
            if not line.strip() or len(conjectures) == budget:
                break
            conjectures.append(line.strip())
        return ConjectureBatch(conjectures)


def _board_arrays(board) -> tuple[np.ndarray, np.ndarray]:
    if not len(board):
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=bool)
    ids, tags = zip(*board)
    return np.asarray(ids, dtype=np.int64), np.asarray(tags, dtype=bool)


def tag_structures(rule_id: int, ids, m: SemanticMatrix) -> np.ndarray:
    """
    Tags of a rule over `ids`, in order, as a 0/1 uint8 vector.
    """
    return m.row_bits(rule_id, ids).astype(np.uint8)


def exhaustive_solve(
    board: list[tuple[int, int]],
    eval_ids,
    m: SemanticMatrix,
    partition: EquivalencePartition,
    rules: list[RuleAst] = None,
) -> SolveOutcome:
    """
    Filter every rule against the board and answer with the lowest-id surviving rule.

    Every rule is charged one evaluation per board structure, plus one per evaluation structure when an
    answer is given.

    Returns:
        SolveOutcome: Unknown with a zero class count when no rule fits the board.
    """
    ids, tags = _board_arrays(board)
    cost = CostCounters(board_evals=m.n_rules * len(ids))
    alive = surviving_classes(m, partition, ids, tags)
    if not len(alive):
        return SolveOutcome(rule_id=None, rule=None, class_id=None, tags=None, consistent_class_count=0, cost=cost)

    rule_id = int(partition.representatives[alive].min())
    eval_ids = np.asarray(eval_ids, dtype=np.int64)
    cost.tagging_evals = len(eval_ids)
    return SolveOutcome(
        rule_id=rule_id,
        rule=str(rules[rule_id]) if rules is not None else None,
        class_id=int(partition.class_of[rule_id]),
        tags=tag_structures(rule_id, eval_ids, m),
        consistent_class_count=len(alive),
        cost=cost,
    )


def crn_select(
    board: list[tuple[int, int]],
    eval_ids,
    source: ConjectureSource,
    budget: int,
    m: SemanticMatrix,
    partition: EquivalencePartition,
    rules: list[RuleAst],
    config: WorldConfig,
    mode: SelectMode = 'best_hit_rate',
    seed: int = 0,
    index: dict[str, int] = None,
) -> SolveOutcome:
    """
    Draw conjectures, score them on the board and keep the best.

    Each parseable conjecture is scored by the number of board observations it tags correctly. In
    `best_hit_rate` mode the highest score wins, the earliest drawn among equals; in `strict` mode a
    conjecture is kept only when it explains the whole board, otherwise the answer is Unknown.

    Args:
        board: `(structure id, tag)` observations.
        eval_ids: Structures to tag with the chosen rule.
        source: The conjecture source.
        budget: Maximum number of conjectures.
        m: The matrix.
        partition: Its partition.
        rules: The enumeration behind `m`.
        config: The world, for parsing conjectures.
        mode: `best_hit_rate` or `strict`.
        seed: Seed handed to the source.
        index: Rule text to id map, built from `rules` when omitted.

    Raises:
        SolverError: If the budget or mode is invalid.
    """
    if budget < 1:
        raise SolverError(f'Budget must be at least 1, got {budget}')
    if mode not in SELECT_MODES:
        raise SolverError(f'Unknown selection mode {mode!r}, expected one of {SELECT_MODES}')
    index = index if index is not None else rule_index(rules)
    ids, tags = _board_arrays(board)
    k = len(ids)

    batch = source.draw(board, budget, seed)
    cost = CostCounters()
    parse_failures = 0
    best_id, best_hits = None, -1
    consistent = set()
    for text in itertools.islice(batch.conjectures, budget):
        cost.cg_calls += 1
        try:
            rule_id = index.get(str(parse_rule(text, config)))
        except RuleParseError:
            rule_id = None
        if rule_id is None:
            parse_failures += 1
            continue
        hits = int(np.count_nonzero(m.row_bits(rule_id, ids) == tags))
        cost.board_evals += k
        if hits == k:
            consistent.add(int(partition.class_of[rule_id]))
        if hits > best_hits:
            best_id, best_hits = rule_id, hits

    if parse_failures:
        logger.debug('%d of %d conjectures could not be parsed', parse_failures, cost.cg_calls)
    if best_id is None or (mode == 'strict' and best_hits < k):
        return SolveOutcome(
            rule_id=None,
            rule=None,
            class_id=None,
            tags=None,
            consistent_class_count=len(consistent),
            cost=cost,
            parse_failures=parse_failures,
            timed_out=batch.timed_out,
        )

    eval_ids = np.asarray(eval_ids, dtype=np.int64)
    cost.tagging_evals = len(eval_ids)
    return SolveOutcome(
        rule_id=best_id,
        rule=str(rules[best_id]),
        class_id=int(partition.class_of[best_id]),
        tags=tag_structures(best_id, eval_ids, m),
        consistent_class_count=len(consistent),
        cost=cost,
        parse_failures=parse_failures,
        timed_out=batch.timed_out,
    )


def make_source(params: SolveParams, rules: list[RuleAst], config: WorldConfig) -> ConjectureSource | None:
    if params.mode == 'sample':
        return GrammarSampler(rules)
    if params.mode == 'external':
        return ExternalProcess(params.command, config, timeout=params.timeout)
    return None


def solve_dataset(
    tests: list[TestGame],
    params: SolveParams,
    m: SemanticMatrix,
    partition: EquivalencePartition,
    rules: list[RuleAst],
    config: WorldConfig,
) -> list[SolveOutcome]:
    """
    Solve every test game with the configured mode; outcomes come back in game order.
    """
    seed = params.seed if params.seed is not None else new_root_seed()
    source = make_source(params, rules, config)
    index = rule_index(rules)

    def solve(test: TestGame) -> SolveOutcome:
        if source is None:
            return exhaustive_solve(test.board, test.eval_ids, m, partition, rules)
        return crn_select(
            test.board,
            test.eval_ids,
            source,
            params.budget,
            m,
            partition,
            rules,
            config,
            mode='strict' if params.strict else 'best_hit_rate',
            seed=derive_seed(seed, 'solve', 'sample', test.game),
            index=index,
        )

    outcomes = []
    with ThreadPoolExecutor(max_workers=params.threads) as pool:
        for done, outcome in enumerate(pool.map(solve, tests), start=1):
            outcomes.append(outcome)
            if done % 100 == 0:
                logger.info('Solved %d/%d games', done, len(tests))
    unknown = sum(o.unknown for o in outcomes)
    logger.info('Solved %d games in %s mode, %d unknown', len(outcomes), params.mode, unknown)
    return outcomes


def budget_curve(
    tests: list[TestGame],
    answers: list[AnswerRecord],
    source: ConjectureSource,
    budgets: list[int],
    partition: EquivalencePartition,
    rules: list[RuleAst],
    config: WorldConfig,
    seed: int,
) -> list[dict]:
    """
    Fraction of games whose hidden rule's class is among the first t conjectures, for every t in
    `budgets`.

    One batch of `max(budgets)` conjectures is drawn per game; smaller budgets read its prefix.
    """
    if not budgets or min(budgets) < 1:
        raise SolverError('Budgets must be positive')
    index = rule_index(rules)
    horizon = max(budgets)
    first_hit = []
    for test, answer in zip(tests, answers, strict=True):
        if answer.rule not in index:
            raise SolverError(f'Game {answer.game}: rule {answer.rule!r} is not among the loaded rules')
        truth_class = int(partition.class_of[index[answer.rule]])
        batch = source.draw(test.board, horizon, derive_seed(seed, 'solve', 'sample', test.game))
        hit = None
        for position, text in enumerate(batch.conjectures[:horizon], start=1):
            try:
                rule_id = index.get(str(parse_rule(text, config)))
            except RuleParseError:
                continue
            if rule_id is not None and int(partition.class_of[rule_id]) == truth_class:
                hit = position
                break
        first_hit.append(hit)

    n_games = len(first_hit)
    return [
        {
            'budget': t,
            'fraction': (sum(1 for h in first_hit if h is not None and h <= t) / n_games) if n_games else 0.0,
        }
        for t in sorted(budgets)
    ]
