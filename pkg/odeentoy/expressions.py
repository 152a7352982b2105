from dataclasses import dataclass
from typing import Literal, TypeAlias

QuantifierKind = Literal['at_least', 'exactly', 'at_most', 'zero']
RelationKind = Literal['touching', 'surrounded_by', 'at_the_right_of']
ConjunctionKind = Literal['and', 'or']

QUANTIFIER_KINDS: tuple[QuantifierKind, ...] = ('at_least', 'exactly', 'at_most', 'zero')
NUMBERS: tuple[int, ...] = (1, 2)
RELATIONS: tuple[RelationKind, ...] = ('touching', 'surrounded_by', 'at_the_right_of')
CONJUNCTIONS: tuple[ConjunctionKind, ...] = ('and', 'or')
ORIENTATION_PREFIX = 'pointing_'


@dataclass(frozen=True, slots=True)
class Quantifier:
    """
    A counting quantifier: `at_least n`, `exactly n`, `at_most n` or `zero`.

    Example:
        ```python
        Quantifier('at_most', 1).test(0)  # True
        ```
    """
    kind: QuantifierKind
    n: int | None = None

    def __post_init__(self):
        if self.kind == 'zero':
            if self.n is not None:
                raise ValueError('Quantifier zero takes no number')
        elif self.n not in NUMBERS:
            raise ValueError(f'Invalid number {self.n} for quantifier {self.kind}, allowed are {NUMBERS}')

    def tokens(self) -> tuple[str, ...]:
        if self.kind == 'zero':
            return ('zero',)
        return (self.kind, str(self.n))

    def test(self, count: int) -> bool:
        if self.kind == 'at_least':
            return count >= self.n
        if self.kind == 'exactly':
            return count == self.n
        if self.kind == 'at_most':
            return count <= self.n
        return count == 0

    def __str__(self) -> str:
        return ' '.join(self.tokens())


@dataclass(frozen=True, slots=True)
class ObjectPattern:
    """
    A piece description: an optional color, an optional shape family and, for oriented families,
    an optional orientation. At least one of color and shape is present.

    Example:
        ```python
        str(ObjectPattern(color='blue', shape='pyramid', orientation='up'))
        # 'blue pyramid pointing_up'
        ```
    """
    color: str | None = None
    shape: str | None = None
    orientation: str | None = None

    def __post_init__(self):
        if self.color is None and self.shape is None:
            raise ValueError('An object needs a color, a shape or both')
        if self.orientation is not None and self.shape is None:
            raise ValueError('An orientation needs a shape')

    def tokens(self) -> tuple[str, ...]:
        tokens = []
        if self.color is not None:
            tokens.append(self.color)
        if self.shape is not None:
            tokens.append(self.shape)
        if self.orientation is not None:
            tokens.append(f'{ORIENTATION_PREFIX}{self.orientation}')
        return tuple(tokens)

    def __str__(self) -> str:
        return ' '.join(self.tokens())


class RuleExpression:
    """
    Base class of rule AST nodes.

    Simple propositions combine with `&` and `|` into conjunctions:

        ```python
        rule = SimpleRule(Quantifier('zero'), ObjectPattern('blue')) | SimpleRule(
            Quantifier('at_most', 1), ObjectPattern('blue', 'pyramid', 'up')
        )
        str(rule)  # 'zero blue or at_most 1 blue pyramid pointing_up'
        ```
    """
    __slots__ = ()

    def tokens(self) -> tuple[str, ...]:
        raise NotImplementedError

    def __str__(self) -> str:
        return ' '.join(self.tokens())


@dataclass(frozen=True, slots=True)
class SimpleRule(RuleExpression):
    quantifier: Quantifier
    obj: ObjectPattern

    def tokens(self) -> tuple[str, ...]:
        return (*self.quantifier.tokens(), *self.obj.tokens())

    def __and__(self, other: 'SimpleRule') -> 'Conjunction':
        return Conjunction(self, 'and', other)

    def __or__(self, other: 'SimpleRule') -> 'Conjunction':
        return Conjunction(self, 'or', other)


@dataclass(frozen=True, slots=True)
class RelationalRule(RuleExpression):
    quantifier: Quantifier
    obj: ObjectPattern
    relation: RelationKind
    target: ObjectPattern

    def tokens(self) -> tuple[str, ...]:
        return (*self.quantifier.tokens(), *self.obj.tokens(), self.relation, *self.target.tokens())


@dataclass(frozen=True, slots=True)
class Conjunction(RuleExpression):
    left: SimpleRule
    conj: ConjunctionKind
    right: SimpleRule

    def __post_init__(self):
        # Only simple propositions can be joined
        if not isinstance(self.left, SimpleRule) or not isinstance(self.right, SimpleRule):
            raise TypeError('Conjunction operands must be SimpleRule instances')
        if self.conj not in CONJUNCTIONS:
            raise ValueError(f'Invalid conjunction {self.conj!r}')

    def tokens(self) -> tuple[str, ...]:
        return (*self.left.tokens(), self.conj, *self.right.tokens())


RuleAst: TypeAlias = SimpleRule | RelationalRule | Conjunction
