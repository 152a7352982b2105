import functools
import itertools
import logging
import os
from collections import Counter
from dataclasses import dataclass, field

from odeentoy.errors import RuleParseError, WorldError
from odeentoy.expressions import (
    CONJUNCTIONS,
    NUMBERS,
    ORIENTATION_PREFIX,
    QUANTIFIER_KINDS,
    RELATIONS,
    Conjunction,
    ObjectPattern,
    Quantifier,
    RelationalRule,
    RuleAst,
    SimpleRule,
)
from odeentoy.files import atomic_open
from odeentoy.world import WorldConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = WorldConfig()


class Grammar:
    """
    The Odeen explanation grammar instantiated for a world.

        RULE   ::= PROP_S | PROP | PROP_S CONJ PROP_S
        PROP   ::= QTY OBJ REL OBJ
        PROP_S ::= QTY OBJ
        OBJ    ::= COL | SHAPE | COL SHAPE
        QTY    ::= at_least NUM | exactly NUM | at_most NUM | zero
        SHAPE  ::= pyramid ORIEN | pyramid | block
        REL    ::= touching | surrounded_by | at_the_right_of
        ORIEN  ::= pointing_up | pointing_down
        NUM    ::= 1 | 2
        CONJ   ::= and | or
        COL    ::= red | blue

    Shape families and orientations come from the world's shape variants: a variant named
    `<family>_<orientation>` makes `<family>` an oriented family. Every list below is in grammar
    listing order, which drives the enumeration order.

    Args:
        - config (WorldConfig): The world.

    Raises:
        WorldError: If a family is declared both with and without orientations.
    """

    def __init__(self, config: WorldConfig):
        oriented: dict[str, list[str]] = {}
        plain: list[str] = []
        for variant in config.shape_variants:
            family, sep, orientation = variant.rpartition('_')
            if sep:
                oriented.setdefault(family, []).append(orientation)
            else:
                plain.append(variant)
        clash = set(oriented) & set(plain)
        if clash:
            raise WorldError(f'Shape families {sorted(clash)} are declared with and without orientations')

        self._config = config
        self._oriented = {family: tuple(orients) for family, orients in oriented.items()}
        self._plain = tuple(plain)

        shapes: list[tuple[str, str | None]] = []
        for family, orients in self._oriented.items():
            shapes.extend((family, o) for o in orients)
            shapes.append((family, None))
        shapes.extend((family, None) for family in self._plain)
        self._shapes = tuple(shapes)

        self._quantifiers = tuple(
            Quantifier(kind, n)
            for kind in QUANTIFIER_KINDS
            for n in ((None,) if kind == 'zero' else NUMBERS)
        )
        self._objects = (
            *(ObjectPattern(color=c) for c in config.colors),
            *(ObjectPattern(shape=s, orientation=o) for s, o in self._shapes),
            *(ObjectPattern(color=c, shape=s, orientation=o) for c in config.colors for s, o in self._shapes),
        )

    @property
    def config(self) -> WorldConfig:
        return self._config

    @property
    def quantifiers(self) -> tuple[Quantifier, ...]:
        return self._quantifiers

    @property
    def objects(self) -> tuple[ObjectPattern, ...]:
        return self._objects

    @property
    def oriented_families(self) -> dict[str, tuple[str, ...]]:
        return dict(self._oriented)

    @property
    def families(self) -> tuple[str, ...]:
        return (*self._oriented, *self._plain)

    @functools.cached_property
    def tokens(self) -> tuple[str, ...]:
        """
        Every terminal of the grammar.
        """
        orientations = dict.fromkeys(o for orients in self._oriented.values() for o in orients)
        return (
            *QUANTIFIER_KINDS,
            *(str(n) for n in NUMBERS),
            *self._config.colors,
            *self.families,
            *(f'{ORIENTATION_PREFIX}{o}' for o in orientations),
            *RELATIONS,
            *CONJUNCTIONS,
        )

    @functools.cached_property
    def productions(self) -> tuple[str, ...]:
        """
        Every production alternative of the grammar, spelled `LHS -> rhs`.
        """
        orientations = dict.fromkeys(o for orients in self._oriented.values() for o in orients)
        return (
            'RULE -> PROP_S',
            'RULE -> PROP',
            'RULE -> PROP_S CONJ PROP_S',
            'OBJ -> COL',
            'OBJ -> SHAPE',
            'OBJ -> COL SHAPE',
            *(f'QTY -> {kind} NUM' for kind in QUANTIFIER_KINDS if kind != 'zero'),
            'QTY -> zero',
            *(p for family in self._oriented for p in (f'SHAPE -> {family} ORIEN', f'SHAPE -> {family}')),
            *(f'SHAPE -> {family}' for family in self._plain),
            *(f'REL -> {rel}' for rel in RELATIONS),
            *(f'ORIEN -> {ORIENTATION_PREFIX}{o}' for o in orientations),
            *(f'NUM -> {n}' for n in NUMBERS),
            *(f'CONJ -> {conj}' for conj in CONJUNCTIONS),
            *(f'COL -> {color}' for color in self._config.colors),
        )


@functools.lru_cache(maxsize=8)
def grammar_for(config: WorldConfig = DEFAULT_CONFIG) -> Grammar:
    return Grammar(config)


@functools.lru_cache(maxsize=8)
def _enumerate_rules(config: WorldConfig) -> tuple[RuleAst, ...]:
    grammar = grammar_for(config)
    simple = [SimpleRule(q, o) for q, o in itertools.product(grammar.quantifiers, grammar.objects)]
    relational = [
        RelationalRule(q, o1, rel, o2)
        for q, o1, rel, o2 in itertools.product(grammar.quantifiers, grammar.objects, RELATIONS, grammar.objects)
    ]
    conjunctions = [
        Conjunction(left, conj, right)
        for left, conj, right in itertools.product(simple, CONJUNCTIONS, simple)
    ]
    rules = (*simple, *relational, *conjunctions)
    logger.debug(
        'Enumerated %d rules (%d simple, %d relational, %d conjunctions)',
        len(rules), len(simple), len(relational), len(conjunctions)
    )
    return rules


def enumerate_rules(config: WorldConfig = DEFAULT_CONFIG) -> list[RuleAst]:
    """
    Enumerate every rule of the grammar in canonical order.

    Simple rules come first, then relational rules, then conjunctions; inside each alternative the
    rightmost slot varies fastest, every slot following grammar listing order. The position of a rule
    in the returned list is its rule id.

    Args:
        config: The world.

    Returns:
        list[RuleAst]: The full enumeration, 23,422 rules for the default world.
    """
    return list(_enumerate_rules(config))


def render_rule(ast: RuleAst) -> str:
    """
    Render a rule as its canonical space separated token string.
    """
    return str(ast)


class _TokenStream:
    """
    Cursor over rule tokens used by the recursive descent parser.
    """

    def __init__(self, tokens: list[str]):
        self._tokens = tokens
        self.pos = 0

    def peek(self, offset: int = 0) -> str | None:
        index = self.pos + offset
        return self._tokens[index] if index < len(self._tokens) else None

    def take(self) -> str | None:
        token = self.peek()
        self.pos += 1
        return token

    @property
    def done(self) -> bool:
        return self.pos >= len(self._tokens)

    def fail(self, message: str, offset: int = 0):
        raise RuleParseError(message, position=self.pos + offset, token=self.peek(offset))


def _parse_quantifier(stream: _TokenStream) -> Quantifier:
    token = stream.peek()
    if token == 'zero':
        stream.take()
        return Quantifier('zero')
    if token in QUANTIFIER_KINDS:
        number = stream.peek(1)
        if number is None or not number.isdigit() or int(number) not in NUMBERS:
            stream.fail(f'Expected a number in {NUMBERS} after {token!r}', offset=1)
        stream.take()
        stream.take()
        return Quantifier(token, int(number))
    stream.fail(f'Expected a quantifier in {QUANTIFIER_KINDS}')


def _parse_object(stream: _TokenStream, grammar: Grammar) -> ObjectPattern:
    color = shape = orientation = None
    if stream.peek() in grammar.config.colors:
        color = stream.take()
    token = stream.peek()
    if token in grammar.families:
        shape = stream.take()
        orients = grammar.oriented_families.get(shape, ())
        token = stream.peek()
        if token is not None and token.startswith(ORIENTATION_PREFIX):
            orientation = token.removeprefix(ORIENTATION_PREFIX)
            if orientation not in orients:
                stream.fail(f'Orientation {token!r} is not allowed after {shape!r}')
            stream.take()
    elif token is not None and token.startswith(ORIENTATION_PREFIX):
        stream.fail(f'{token!r} must follow an oriented shape')
    if color is None and shape is None:
        stream.fail('Expected an object (a color, a shape or both)')
    return ObjectPattern(color=color, shape=shape, orientation=orientation)


def _parse_simple(stream: _TokenStream, grammar: Grammar) -> SimpleRule:
    quantifier = _parse_quantifier(stream)
    obj = _parse_object(stream, grammar)
    return SimpleRule(quantifier, obj)


def parse_rule(text: str, config: WorldConfig = DEFAULT_CONFIG) -> RuleAst:
    """
    Parse a rule string of the Odeen grammar.

    Whitespace is normalised; tokens are case sensitive and spelled as in the grammar.

    Args:
        text: The rule string.
        config: The world whose colors and shapes are allowed.

    Returns:
        RuleAst: The unique AST whose canonical rendering equals the input tokens.

    Raises:
        RuleParseError: On unknown tokens, malformed productions or out-of-grammar combinations,
        with the 0-based position of the offending token.

    Example:
        ```python
        parse_rule('at_least 2 pyramid pointing_down')
        # SimpleRule(Quantifier('at_least', 2), ObjectPattern(shape='pyramid', orientation='down'))
        ```
    """
    grammar = grammar_for(config)
    stream = _TokenStream(text.split())
    if stream.done:
        stream.fail('Empty rule')

    first = _parse_simple(stream, grammar)
    if stream.done:
        return first

    token = stream.peek()
    if token in RELATIONS:
        stream.take()
        target = _parse_object(stream, grammar)
        rule = RelationalRule(first.quantifier, first.obj, token, target)
    elif token in CONJUNCTIONS:
        stream.take()
        rule = Conjunction(first, token, _parse_simple(stream, grammar))
    else:
        stream.fail(f'Expected a relation in {RELATIONS} or a conjunction in {CONJUNCTIONS}')

    if not stream.done:
        stream.fail('Unexpected token after a complete rule')
    return rule


def rule_index(rules: list[RuleAst] | list[str]) -> dict[str, int]:
    """
    Map canonical rule text to rule id.
    """
    return {str(rule): rule_id for rule_id, rule in enumerate(rules)}


def rule_tokens(ast: RuleAst) -> tuple[str, ...]:
    return ast.tokens()


def _object_productions(obj: ObjectPattern) -> list[str]:
    productions = []
    if obj.color is not None and obj.shape is not None:
        productions.append('OBJ -> COL SHAPE')
    elif obj.color is not None:
        productions.append('OBJ -> COL')
    else:
        productions.append('OBJ -> SHAPE')
    if obj.color is not None:
        productions.append(f'COL -> {obj.color}')
    if obj.shape is not None:
        if obj.orientation is not None:
            productions.append(f'SHAPE -> {obj.shape} ORIEN')
            productions.append(f'ORIEN -> {ORIENTATION_PREFIX}{obj.orientation}')
        else:
            productions.append(f'SHAPE -> {obj.shape}')
    return productions


def _quantifier_productions(q: Quantifier) -> list[str]:
    if q.kind == 'zero':
        return ['QTY -> zero']
    return [f'QTY -> {q.kind} NUM', f'NUM -> {q.n}']


def _simple_productions(rule: SimpleRule) -> list[str]:
    return [*_quantifier_productions(rule.quantifier), *_object_productions(rule.obj)]


def rule_productions(ast: RuleAst) -> list[str]:
    """
    Production alternatives used by the derivation of a rule, with repetitions.
    """
    if isinstance(ast, SimpleRule):
        return ['RULE -> PROP_S', *_simple_productions(ast)]
    if isinstance(ast, RelationalRule):
        return [
            'RULE -> PROP',
            *_quantifier_productions(ast.quantifier),
            *_object_productions(ast.obj),
            f'REL -> {ast.relation}',
            *_object_productions(ast.target),
        ]
    return [
        'RULE -> PROP_S CONJ PROP_S',
        *_simple_productions(ast.left),
        f'CONJ -> {ast.conj}',
        *_simple_productions(ast.right),
    ]


@dataclass
class CoverageReport:
    """
    Usage counts of grammar tokens and productions over a list of rules.
    """
    token_counts: dict[str, int] = field(default_factory=dict)
    production_counts: dict[str, int] = field(default_factory=dict)

    @property
    def uncovered_tokens(self) -> list[str]:
        return [token for token, count in self.token_counts.items() if count == 0]

    @property
    def uncovered_productions(self) -> list[str]:
        return [prod for prod, count in self.production_counts.items() if count == 0]

    @property
    def full_coverage(self) -> bool:
        return not self.uncovered_tokens and not self.uncovered_productions

    def dump_dict(self) -> dict:
        return {
            'full_coverage': self.full_coverage,
            'token_counts': dict(self.token_counts),
            'production_counts': dict(self.production_counts),
            'uncovered_tokens': self.uncovered_tokens,
            'uncovered_productions': self.uncovered_productions,
        }


def coverage_report(
    rules: list[RuleAst],
    config: WorldConfig = DEFAULT_CONFIG,
    tokens: tuple[str, ...] = None,
    productions: tuple[str, ...] = None,
) -> CoverageReport:
    """
    Count how often every grammar token and production appears in `rules`.

    Args:
        rules: The rules to inspect.
        config: The world whose grammar defines the expected tokens and productions.
        tokens: Restrict the report to these tokens (default: all grammar tokens).
        productions: Restrict the report to these productions (default: all grammar productions).

    Returns:
        CoverageReport: Counts in grammar order; full coverage when no count is zero.
    """
    grammar = grammar_for(config)
    token_counter = Counter()
    production_counter = Counter()
    for rule in rules:
        token_counter.update(rule_tokens(rule))
        production_counter.update(rule_productions(rule))

    return CoverageReport(
        token_counts={t: token_counter[t] for t in (tokens if tokens is not None else grammar.tokens)},
        production_counts={
            p: production_counter[p] for p in (productions if productions is not None else grammar.productions)
        },
    )


def write_rules_file(path: str | os.PathLike, rules: list[RuleAst]):
    """
    Write `rules.txt`: one canonical rule per line, line N being rule id N.
    """
    with atomic_open(path, 'w', newline='\n') as f:
        for rule in rules:
            f.write(f'{render_rule(rule)}\n')


def read_rules_file(path: str | os.PathLike, config: WorldConfig = DEFAULT_CONFIG) -> list[RuleAst]:
    """
    Read a `rules.txt` file.

    Raises:
        RuleParseError: If a line is not a valid rule; the message names the line.
    """
    rules = []
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            try:
                rules.append(parse_rule(line, config))
            except RuleParseError as e:
                raise RuleParseError(f'Line {line_no}: {e}', position=e.position, token=e.token) from None
    return rules
