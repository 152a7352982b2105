import functools
import logging
import threading

import numpy as np

from odeentoy.expressions import (
    Conjunction,
    ObjectPattern,
    Quantifier,
    RelationalRule,
    RelationKind,
    RuleAst,
    SimpleRule,
)
from odeentoy.world import Piece, Structure, WorldConfig, universe_codes

logger = logging.getLogger(__name__)


@functools.lru_cache(maxsize=256)
def pattern_codes(obj: ObjectPattern, config: WorldConfig) -> frozenset[int]:
    """
    Piece codes matched by an object pattern. The empty cell (code 0) never matches.
    """
    codes = set()
    for code in range(1, config.alphabet_size):
        piece = Piece.from_code(code, config)
        if piece_matches(piece, obj, config):
            codes.add(code)
    return frozenset(codes)


def piece_matches(piece: Piece, obj: ObjectPattern, config: WorldConfig) -> bool:
    """
    Check whether a piece satisfies an object pattern.

    Empty cells never match. A color constraint requires the same color; a bare shape family matches
    every orientation of that family; an oriented shape matches that orientation only.

    Example:
        ```python
        red_up = Piece.from_code(2, config)
        piece_matches(red_up, ObjectPattern(shape='pyramid'), config)  # True
        ```
    """
    if piece.is_empty:
        return False
    if obj.color is not None and config.colors[piece.color] != obj.color:
        return False
    if obj.shape is not None:
        family, _, orientation = config.shape_variants[piece.variant].rpartition('_')
        if not family:
            family, orientation = orientation, None
        if family != obj.shape:
            return False
        if obj.orientation is not None and orientation != obj.orientation:
            return False
    return True


def count_matches(obj: ObjectPattern, structure: Structure) -> int:
    codes = pattern_codes(obj, structure.config)
    return sum(code in codes for code in structure.codes)


def _has_witness(relation: RelationKind, codes: tuple[int, ...], i: int, target: frozenset[int]) -> bool:
    if relation == 'touching':
        return (i > 0 and codes[i - 1] in target) or (i + 1 < len(codes) and codes[i + 1] in target)
    if relation == 'at_the_right_of':
        return any(codes[j] in target for j in range(i))
    # surrounded_by: both neighbours exist and match
    return 0 < i < len(codes) - 1 and codes[i - 1] in target and codes[i + 1] in target


def relation_count(rule: RelationalRule, structure: Structure) -> int:
    """
    Number of cells matching the rule object that have a witness for the rule relation.
    """
    config = structure.config
    subject = pattern_codes(rule.obj, config)
    target = pattern_codes(rule.target, config)
    codes = structure.codes
    return sum(
        codes[i] in subject and _has_witness(rule.relation, codes, i, target)
        for i in range(len(codes))
    )


def eval_rule(ast: RuleAst, structure: Structure) -> int:
    """
    Tag a structure with a rule: 1 when the structure adheres to the rule, 0 otherwise.

    Semantics:
        - simple: count the cells matching the object and apply the quantifier.
        - relational: count the cells matching the first object that have a witness cell `j != i`
          matching the second object, then apply the quantifier. `touching` needs an adjacent
          witness, `at_the_right_of` a witness anywhere to the left (`j < i`), `surrounded_by`
          both neighbours as witnesses.
        - conjunction: boolean `and` / `or` of both simple propositions.

    Returns:
        int: The tag, 0 or 1.
    """
    if isinstance(ast, SimpleRule):
        return int(ast.quantifier.test(count_matches(ast.obj, structure)))
    if isinstance(ast, RelationalRule):
        return int(ast.quantifier.test(relation_count(ast, structure)))
    if isinstance(ast, Conjunction):
        left = eval_rule(ast.left, structure)
        right = eval_rule(ast.right, structure)
        return int(left and right) if ast.conj == 'and' else int(left or right)
    raise TypeError(f'Invalid rule node {type(ast)}')


def quantifier_mask(quantifier: Quantifier, counts: np.ndarray) -> np.ndarray:
    """
    Vectorised quantifier test over an array of counts.
    """
    if quantifier.kind == 'at_least':
        return counts >= quantifier.n
    if quantifier.kind == 'exactly':
        return counts == quantifier.n
    if quantifier.kind == 'at_most':
        return counts <= quantifier.n
    return counts == 0


def relation_witness(relation: RelationKind, target_mask: np.ndarray) -> np.ndarray:
    """
    Witness mask over a (structures, cells) table: `w[x, i]` is True when cell `i` of structure `x`
    has a witness for `relation` among the cells matching the target.
    """
    witness = np.zeros_like(target_mask)
    if relation == 'touching':
        witness[:, 1:] |= target_mask[:, :-1]
        witness[:, :-1] |= target_mask[:, 1:]
    elif relation == 'at_the_right_of':
        witness[:, 1:] = np.logical_or.accumulate(target_mask, axis=1)[:, :-1]
    elif relation == 'surrounded_by':
        witness[:, 1:-1] = target_mask[:, :-2] & target_mask[:, 2:]
    else:
        raise ValueError(f'Invalid relation {relation!r}')
    return witness


class UniverseTagger:
    """
    Vectorised tagging of the whole universe, caching per-pattern masks and counts.

    Instances are shared between threads; cached arrays are read-only.

    Args:
        - config (WorldConfig): The world.

    Example:
        ```python
        tagger = UniverseTagger(WorldConfig())
        tagger.tag(parse_rule('zero red')).sum()  # 4096
        ```
    """

    def __init__(self, config: WorldConfig):
        self._config = config
        self._codes = universe_codes(config)
        self._masks: dict[ObjectPattern, np.ndarray] = {}
        self._counts: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def config(self) -> WorldConfig:
        return self._config

    def _cached(self, cache: dict, key, compute):
        value = cache.get(key)
        if value is None:
            value = compute()
            value.setflags(write=False)
            with self._lock:
                value = cache.setdefault(key, value)
        return value

    def pattern_mask(self, obj: ObjectPattern) -> np.ndarray:
        def compute():
            lut = np.zeros(self._config.alphabet_size, dtype=bool)
            lut[list(pattern_codes(obj, self._config))] = True
            return lut[self._codes]
        return self._cached(self._masks, obj, compute)

    def simple_counts(self, obj: ObjectPattern) -> np.ndarray:
        return self._cached(
            self._counts,
            (obj,),
            lambda: self.pattern_mask(obj).sum(axis=1, dtype=np.uint8)
        )

    def relation_counts(self, obj: ObjectPattern, relation: RelationKind, target: ObjectPattern) -> np.ndarray:
        def compute():
            witness = relation_witness(relation, self.pattern_mask(target))
            return (self.pattern_mask(obj) & witness).sum(axis=1, dtype=np.uint8)
        return self._cached(self._counts, (obj, relation, target), compute)

    def tag(self, ast: RuleAst) -> np.ndarray:
        """
        Tag every structure of the universe.

        Returns:
            np.ndarray: Bool array of length universe_size, element j being the tag of structure j.
        """
        if isinstance(ast, SimpleRule):
            return quantifier_mask(ast.quantifier, self.simple_counts(ast.obj))
        if isinstance(ast, RelationalRule):
            return quantifier_mask(ast.quantifier, self.relation_counts(ast.obj, ast.relation, ast.target))
        if isinstance(ast, Conjunction):
            left = self.tag(ast.left)
            right = self.tag(ast.right)
            return (left & right) if ast.conj == 'and' else (left | right)
        raise TypeError(f'Invalid rule node {type(ast)}')


@functools.lru_cache(maxsize=4)
def universe_tagger(config: WorldConfig) -> UniverseTagger:
    return UniverseTagger(config)


def tag_universe(ast: RuleAst, config: WorldConfig) -> np.ndarray:
    """
    Tag all structures of the universe with a rule: one row of the semantic matrix.

    Returns:
        np.ndarray: Bool array of length universe_size.
    """
    return universe_tagger(config).tag(ast)
