import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from odeentoy.errors import MetricsError, RuleParseError
from odeentoy.expressions import RuleAst
from odeentoy.matrix import EquivalencePartition, SemanticMatrix, nearest_tagging
from odeentoy.records import AnswerRecord, PredictionRecord, TestGame
from odeentoy.rules import parse_rule, rule_index
from odeentoy.world import WorldConfig

logger = logging.getLogger(__name__)


def _by_game(records, what: str) -> dict:
    out = {}
    for record in records:
        if record.game in out:
            raise MetricsError(f'Duplicate {what} for game {record.game}')
        out[record.game] = record
    return out


def _align(preds: list[PredictionRecord], answers: list[AnswerRecord]) -> list[tuple[PredictionRecord, AnswerRecord]]:
    by_game = _by_game(preds, 'prediction')
    answers_by_game = _by_game(answers, 'answer')
    missing = sorted(set(answers_by_game) - set(by_game))
    if missing:
        raise MetricsError(f'Missing predictions for {len(missing)} games: {missing[:20]}')
    extra = sorted(set(by_game) - set(answers_by_game))
    if extra:
        logger.warning('Ignoring predictions for %d unknown games: %s', len(extra), extra[:20])
    pairs = []
    for game in sorted(answers_by_game):
        pred, answer = by_game[game], answers_by_game[game]
        if len(pred.tags) != len(answer.tags):
            raise MetricsError(
                f'Game {game}: prediction has {len(pred.tags)} tags, {len(answer.tags)} expected'
            )
        pairs.append((pred, answer))
    return pairs


def _truth_id(index: dict[str, int], answer: AnswerRecord) -> int:
    try:
        return index[answer.rule]
    except KeyError:
        raise MetricsError(f'Game {answer.game}: rule {answer.rule!r} is not among the loaded rules') from None


def game_tag_accuracy(pred: PredictionRecord, answer: AnswerRecord) -> float:
    return float(np.mean(np.asarray(pred.tags) == np.asarray(answer.tags)))


def t_acc(preds: list[PredictionRecord], answers: list[AnswerRecord]) -> float:
    """
    Mean over games of the fraction of correctly predicted tags.

    Raises:
        MetricsError: If a game has no prediction or the tag lengths differ.
    """
    pairs = _align(preds, answers)
    if not pairs:
        return 0.0
    return float(np.mean([game_tag_accuracy(p, a) for p, a in pairs]))


def check_checksum(m: SemanticMatrix, expected: int | None):
    if expected is not None and m.checksum != expected:
        raise MetricsError(
            f'Matrix checksum {m.checksum:#018x} does not match the dataset checksum {expected:#018x}'
        )


def nrs(
    preds: list[PredictionRecord],
    answers: list[AnswerRecord],
    tests: list[TestGame],
    m: SemanticMatrix,
    partition: EquivalencePartition,
    rules: list[RuleAst],
    expected_checksum: int = None,
) -> float:
    """
    Nearest Rule Score: fraction of games whose predicted vector is strictly closer to the hidden rule's
    vector than to any other distinct rule vector over the evaluation structures.

    Raises:
        MetricsError: If the matrix is not the dataset's, or predictions are missing.
    """
    check_checksum(m, expected_checksum)
    index = rule_index(rules)
    tests_by_game = {test.game: test for test in tests}
    pairs = _align(preds, answers)
    if not pairs:
        return 0.0
    hits = [
        nearest_tagging(p.tags, tests_by_game[a.game].eval_ids, _truth_id(index, a), m, partition).is_nearest
        for p, a in pairs
    ]
    return float(np.mean(hits))


def r_acc(
    pred_rule: str | None,
    truth_rule_id: int,
    partition: EquivalencePartition,
    config: WorldConfig,
    index: dict[str, int],
) -> bool:
    """
    Whether a predicted rule is equivalent to the hidden one. Missing or unparseable rules are wrong.
    """
    if not pred_rule:
        return False
    try:
        rule_id = index.get(str(parse_rule(pred_rule, config)))
    except RuleParseError:
        return False
    if rule_id is None:
        return False
    return partition.same_class(rule_id, truth_rule_id)


@dataclass
class GameScore:
    game: int
    t_acc: float
    nearest: bool
    truth_distance: int
    min_distance: int
    rule_correct: bool

    def dump_dict(self) -> dict:
        return {
            'game': self.game,
            't_acc': self.t_acc,
            'nearest': self.nearest,
            'truth_distance': self.truth_distance,
            'min_distance': self.min_distance,
            'rule_correct': self.rule_correct,
        }


@dataclass
class ScoreReport:
    """
    Scores of a prediction file against the private answers.
    """
    t_acc: float
    nrs: float
    r_acc: float
    matrix_checksum: int
    games: list[GameScore] = field(default_factory=list)

    def dump_dict(self) -> dict:
        return {
            't_acc': self.t_acc,
            'nrs': self.nrs,
            'r_acc': self.r_acc,
            'n_games': len(self.games),
            'matrix_checksum': self.matrix_checksum,
            'games': [g.dump_dict() for g in self.games],
        }


def score(
    preds: list[PredictionRecord],
    answers: list[AnswerRecord],
    tests: list[TestGame],
    m: SemanticMatrix,
    partition: EquivalencePartition,
    rules: list[RuleAst],
    config: WorldConfig,
    expected_checksum: int = None,
    threads: int = 1,
) -> ScoreReport:
    """
    Compute T-Acc, NRS and R-Acc with a per-game breakdown, in game order.

    Raises:
        MetricsError: On a checksum mismatch, missing predictions or tag length mismatches.
    """
    check_checksum(m, expected_checksum)
    index = rule_index(rules)
    tests_by_game = {test.game: test for test in tests}
    pairs = _align(preds, answers)
    missing = [a.game for _, a in pairs if a.game not in tests_by_game]
    if missing:
        raise MetricsError(f'Missing test games {missing[:20]}')

    def score_game(pair: tuple[PredictionRecord, AnswerRecord]) -> GameScore:
        pred, answer = pair
        truth_id = _truth_id(index, answer)
        nearest = nearest_tagging(pred.tags, tests_by_game[answer.game].eval_ids, truth_id, m, partition)
        return GameScore(
            game=answer.game,
            t_acc=game_tag_accuracy(pred, answer),
            nearest=nearest.is_nearest,
            truth_distance=nearest.truth_distance,
            min_distance=nearest.min_distance,
            rule_correct=r_acc(pred.rule, truth_id, partition, config, index),
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        games = list(pool.map(score_game, pairs))

    report = ScoreReport(
        t_acc=float(np.mean([g.t_acc for g in games])) if games else 0.0,
        nrs=float(np.mean([g.nearest for g in games])) if games else 0.0,
        r_acc=float(np.mean([g.rule_correct for g in games])) if games else 0.0,
        matrix_checksum=m.checksum,
        games=games,
    )
    logger.info('Scored %d games: t_acc=%.4f nrs=%.4f r_acc=%.4f', len(games), report.t_acc, report.nrs, report.r_acc)
    return report
