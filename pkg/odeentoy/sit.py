"""
Symbol Interpretation Task: multiple-choice questions over a small fixed world.

A question shows two structures and five sentences; exactly one sentence holds for the first structure
and not for the second. The same question is rendered under five legends, which change how glyphs and
words map to meanings but never which choice is the answer.
"""
import functools
import logging
from dataclasses import dataclass, field

import numpy as np

from odeentoy.errors import SitError
from odeentoy.records import SitRecord
from odeentoy.seeds import derive_seed

logger = logging.getLogger(__name__)

SIT_LENGTH = 6
SUBTASKS = ('plain', 'agnostic_emoji', 'agnostic_name', 'tricky', 'adversarial')


@dataclass(frozen=True, slots=True)
class SitPiece:
    color: str | None
    shape: str | None
    orientation: str | None = None

    @property
    def is_empty(self) -> bool:
        return self.shape is None

    @property
    def description(self) -> str:
        if self.is_empty:
            return 'empty space'
        words = [self.color, self.shape]
        if self.orientation:
            words += ['pointing', self.orientation]
        return ' '.join(words)


PIECES = (
    SitPiece('red', 'circle'),
    SitPiece('blue', 'circle'),
    SitPiece('yellow', 'circle'),
    SitPiece('red', 'triangle', 'up'),
    SitPiece('red', 'triangle', 'down'),
    SitPiece('red', 'square'),
    SitPiece('blue', 'square'),
    SitPiece('yellow', 'square'),
    SitPiece(None, None),
)
EMPTY_PIECE = len(PIECES) - 1
DESCRIPTIONS = tuple(p.description for p in PIECES)
PLAIN_GLYPHS = ('🔴', '🔵', '🟡', '🔺', '🔻', '🟥', '🟦', '🟨', '⬜')
AGNOSTIC_GLYPHS = ('α', 'β', 'γ', 'δ', 'ε', 'ζ', 'η', 'θ', 'ι')

COLORS = ('red', 'blue', 'yellow')
SHAPES = ('circle', 'triangle', 'square')
PLACEHOLDERS = {
    'red': 'X',
    'square': 'Y',
    'blue': 'Z',
    'yellow': 'W',
    'circle': 'K',
    'triangle': 'J',
    'up': 'Q',
    'down': 'V',
    'empty': 'U',
    'space': 'H',
}
# words carrying meaning, rewritten by the agnostic-name and tricky legends
MEANING_WORDS = (*COLORS, *SHAPES, *(f'{s}s' for s in SHAPES), 'pointing', 'up', 'down', 'empty', 'space')

QUANTIFIERS = (
    ('zero', 0),
    ('exactly', 1),
    ('at_least', 1),
    ('at_most', 1),
    ('at_most', 2),
    ('at_least', 2),
)
_NUMBER_WORDS = {1: 'one', 2: 'two'}
_QUANTIFIER_PHRASES = {
    ('zero', 0): 'zero',
    ('exactly', 1): 'exactly one',
    ('at_least', 1): 'at least one',
    ('at_most', 1): 'at most one',
    ('at_most', 2): 'at most two',
    ('at_least', 2): 'at least two',
}


@dataclass(frozen=True, slots=True)
class SitObject:
    color: str | None = None
    shape: str | None = None
    orientation: str | None = None

    def matches(self, piece: SitPiece) -> bool:
        if piece.is_empty:
            return False
        if self.color is not None and piece.color != self.color:
            return False
        if self.shape is not None and piece.shape != self.shape:
            return False
        return self.orientation is None or piece.orientation == self.orientation

    def words(self, plural: bool) -> list[str]:
        noun = self.shape or 'piece'
        words = [self.color] if self.color else []
        words.append(f'{noun}s' if plural else noun)
        if self.orientation:
            words += ['pointing', self.orientation]
        return words


def _sit_objects() -> tuple[SitObject, ...]:
    objects = [SitObject(color=c) for c in COLORS]
    objects += [SitObject(shape=s) for s in SHAPES]
    pairs = sorted({(p.color, p.shape) for p in PIECES if not p.is_empty}, key=lambda cs: (SHAPES.index(cs[1]), COLORS.index(cs[0])))
    objects += [SitObject(color=c, shape=s) for c, s in pairs]
    objects += [SitObject(p.color, p.shape, p.orientation) for p in PIECES if p.orientation]
    return tuple(objects)


SIT_OBJECTS = _sit_objects()


@dataclass(frozen=True, slots=True)
class SitSentence:
    kind: str
    n: int
    obj: SitObject

    def count(self, structure: tuple[int, ...]) -> int:
        return sum(self.obj.matches(PIECES[p]) for p in structure)

    def holds(self, structure: tuple[int, ...]) -> bool:
        c = self.count(structure)
        if self.kind == 'zero':
            return c == 0
        if self.kind == 'exactly':
            return c == self.n
        if self.kind == 'at_least':
            return c >= self.n
        return c <= self.n

    @property
    def plural(self) -> bool:
        return self.n != 1

    def words(self) -> list[str]:
        verb = 'are' if self.plural else 'is'
        return ['There', verb, *_QUANTIFIER_PHRASES[(self.kind, self.n)].split(), *self.obj.words(self.plural)]

    def text(self) -> str:
        return ' '.join(self.words()) + '.'


SIT_SENTENCES = tuple(SitSentence(kind, n, obj) for kind, n in QUANTIFIERS for obj in SIT_OBJECTS)


def parse_sentence(text: str) -> SitSentence:
    """
    Parse a plain English SIT sentence back into its proposition.

    Raises:
        SitError: If the text is not a sentence of the family.
    """
    words = text.strip().rstrip('.').split()
    if len(words) < 4 or words[0] != 'There' or words[1] not in ('is', 'are'):
        raise SitError(f'Not a SIT sentence: {text!r}')
    rest = words[2:]
    for (kind, n), phrase in _QUANTIFIER_PHRASES.items():
        phrase_words = phrase.split()
        if rest[:len(phrase_words)] != phrase_words:
            continue
        obj_words = rest[len(phrase_words):]
        for sentence_obj in SIT_OBJECTS:
            if sentence_obj.words(n != 1) == obj_words and (words[1] == 'are') == (n != 1):
                return SitSentence(kind, n, sentence_obj)
    raise SitError(f'Not a SIT sentence: {text!r}')


def reverse_words(text: str) -> str:
    """
    Reverse every word of `text` in place, keeping word order.
    """
    return ' '.join(word[::-1] for word in text.split(' '))


@dataclass(frozen=True)
class Legend:
    """
    Map between glyphs, words and meanings for one subtask.

    Attributes:
        subtask: The subtask name.
        glyphs: Glyph of every legend line.
        meanings: Piece index described by every legend line.
        word_map: `(plain word, rendered word)` pairs; unlisted words render unchanged.
    """
    subtask: str
    glyphs: tuple[str, ...]
    meanings: tuple[int, ...]
    word_map: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if sorted(self.meanings) != list(range(len(PIECES))):
            raise SitError(f'Legend {self.subtask} must describe each of the {len(PIECES)} pieces once')
        if len(set(self.glyphs)) != len(PIECES):
            raise SitError(f'Legend {self.subtask} needs {len(PIECES)} distinct glyphs')

    @functools.cached_property
    def _forward(self) -> dict[str, str]:
        return dict(self.word_map)

    @functools.cached_property
    def _backward(self) -> dict[str, str]:
        return {rendered: plain for plain, rendered in self.word_map}

    @property
    def world_name(self) -> str:
        return f'SIT-{self.subtask.replace("_", "-")}'

    def word(self, word: str) -> str:
        return self._forward.get(word, word)

    def unword(self, word: str) -> str:
        return self._backward.get(word, word)

    def description(self, line: int) -> str:
        return ' '.join(self.word(w) for w in DESCRIPTIONS[self.meanings[line]].split())

    def lines(self) -> list[str]:
        out = []
        for line, glyph in enumerate(self.glyphs):
            description = self.description(line)
            article = 'an' if description[0].lower() in 'aeiou' else 'a'
            out.append(f'{glyph} is {article} {description};')
        return out

    def glyph_for(self, piece: int) -> str:
        return self.glyphs[self.meanings.index(piece)]

    def render_structure(self, structure: tuple[int, ...]) -> str:
        return ''.join(self.glyph_for(p) for p in structure)

    def decode_structure(self, text: str) -> tuple[int, ...]:
        """
        Read a rendered structure back through the legend lines.
        """
        pieces = []
        rest = text
        while rest:
            for line, glyph in enumerate(self.glyphs):
                if rest.startswith(glyph):
                    plain = ' '.join(self.unword(w) for w in self.description(line).split())
                    pieces.append(DESCRIPTIONS.index(plain))
                    rest = rest[len(glyph):]
                    break
            else:
                raise SitError(f'Unknown glyph at {rest!r} for legend {self.subtask}')
        return tuple(pieces)

    def render_sentence(self, sentence: SitSentence) -> str:
        return ' '.join(self.word(w) for w in sentence.words()) + '.'

    def decode_sentence(self, text: str) -> SitSentence:
        return parse_sentence(' '.join(self.unword(w) for w in text.strip().rstrip('.').split()))


def _derangement(rng: np.random.Generator, n: int) -> tuple[int, ...]:
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return tuple(int(i) for i in perm)


def make_legend(subtask: str, seed: int = 0) -> Legend:
    """
    Build the legend of a subtask.

    - `plain`: natural glyphs, true descriptions.
    - `agnostic_emoji`: non-pictorial glyphs, true descriptions.
    - `agnostic_name`: natural glyphs, placeholder words (`X Y` for red square).
    - `tricky`: natural glyphs, every description word reversed.
    - `adversarial`: natural glyphs, each describing another piece (a seeded derangement).

    Raises:
        SitError: If the subtask is unknown.
    """
    identity = tuple(range(len(PIECES)))
    if subtask == 'plain':
        return Legend(subtask, PLAIN_GLYPHS, identity)
    if subtask == 'agnostic_emoji':
        return Legend(subtask, AGNOSTIC_GLYPHS, identity)
    if subtask == 'agnostic_name':
        word_map = [(w, PLACEHOLDERS[w]) for w in PLACEHOLDERS]
        word_map += [(f'{s}s', f'{PLACEHOLDERS[s]}s') for s in SHAPES]
        return Legend(subtask, PLAIN_GLYPHS, identity, tuple(word_map))
    if subtask == 'tricky':
        return Legend(subtask, PLAIN_GLYPHS, identity, tuple((w, w[::-1]) for w in MEANING_WORDS))
    if subtask == 'adversarial':
        rng = np.random.Generator(np.random.PCG64(seed))
        return Legend(subtask, PLAIN_GLYPHS, _derangement(rng, len(PIECES)))
    raise SitError(f'Unknown subtask {subtask!r}, expected one of {SUBTASKS}')


@dataclass(frozen=True)
class SitQuestion:
    structure_a: tuple[int, ...]
    structure_b: tuple[int, ...]
    sentences: tuple[SitSentence, ...]
    answer_index: int
    seed: int


@dataclass
class QuestionCheck:
    """
    Outcome of validating a question: `qualifying` lists the choices that hold for structure A and
    not for structure B.
    """
    valid: bool
    qualifying: list[int] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def validate_question(q: SitQuestion, legend: Legend = None) -> QuestionCheck:
    """
    Re-evaluate the choices of a question as rendered under a legend.

    Structures and sentences are rendered with the legend and decoded back through it, then each
    sentence is checked against both structures. Valid when exactly one choice qualifies and it is the
    stated answer.
    """
    legend = legend or make_legend('plain')
    diagnostics = []
    try:
        a = legend.decode_structure(legend.render_structure(q.structure_a))
        b = legend.decode_structure(legend.render_structure(q.structure_b))
        sentences = [legend.decode_sentence(legend.render_sentence(s)) for s in q.sentences]
    except SitError as e:
        return QuestionCheck(valid=False, diagnostics=[str(e)])

    if len(sentences) != 5:
        diagnostics.append(f'{len(sentences)} choices, 5 expected')
    if len({s.text() for s in sentences}) != len(sentences):
        diagnostics.append('Choices are not pairwise distinct')
    qualifying = [i for i, s in enumerate(sentences) if s.holds(a) and not s.holds(b)]
    if len(qualifying) != 1:
        diagnostics.append(f'{len(qualifying)} qualifying choices: {qualifying}')
    elif qualifying[0] != q.answer_index:
        diagnostics.append(f'Qualifying choice {qualifying[0]} differs from answer {q.answer_index}')
    return QuestionCheck(valid=not diagnostics, qualifying=qualifying, diagnostics=diagnostics)


def generate_question(seed: int, max_attempts: int = 1000) -> SitQuestion:
    """
    Sample a valid question, deterministically for a given seed.

    Distractors include, when available, one sentence true for both structures and one true for neither.

    Raises:
        SitError: If no valid question is found within `max_attempts` samples.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(max_attempts):
        a = tuple(int(p) for p in rng.integers(len(PIECES), size=SIT_LENGTH))
        b = tuple(int(p) for p in rng.integers(len(PIECES), size=SIT_LENGTH))
        if a == b:
            continue
        answers, both, neither, only_b = [], [], [], []
        for s in SIT_SENTENCES:
            in_a, in_b = s.holds(a), s.holds(b)
            if in_a and not in_b:
                answers.append(s)
            elif in_a:
                both.append(s)
            elif in_b:
                only_b.append(s)
            else:
                neither.append(s)
        if not answers or len(both) + len(neither) + len(only_b) < 4:
            continue

        answer = answers[int(rng.integers(len(answers)))]
        distractors = []
        for group in (both, neither):
            if group:
                distractors.append(group[int(rng.integers(len(group)))])
        rest = [s for s in (*both, *neither, *only_b) if s not in distractors]
        picks = rng.choice(len(rest), size=4 - len(distractors), replace=False)
        distractors += [rest[int(i)] for i in picks]

        choices = [answer, *distractors]
        order = rng.permutation(5)
        sentences = tuple(choices[int(i)] for i in order)
        question = SitQuestion(
            structure_a=a,
            structure_b=b,
            sentences=sentences,
            answer_index=int(np.flatnonzero(order == 0)[0]),
            seed=seed,
        )
        if validate_question(question).valid:
            return question
    raise SitError(f'No valid question found in {max_attempts} attempts for seed {seed}')


def render_question_head(q: SitQuestion, legend: Legend) -> str:
    lines = [
        f'In the {legend.world_name} world, a structure is a sequence of six emojis. '
        'Below are the emojis used, along with their descriptions:',
        *(f'- {line}' for line in legend.lines()),
        '',
        f'Choose the sentence consistent with the structure {legend.render_structure(q.structure_a)} '
        f'and not consistent with the structure {legend.render_structure(q.structure_b)}:',
    ]
    return '\n'.join(lines)


def render_choices(q: SitQuestion, legend: Legend) -> list[str]:
    return [legend.render_sentence(s) for s in q.sentences]


def render_prompt(q: SitQuestion, legend: Legend) -> str:
    """
    Full prompt: the legend block, the question line and the five choices.
    """
    return '\n'.join([render_question_head(q, legend), *(f'- {c}' for c in render_choices(q, legend))])


def render_plain_text(record: SitRecord) -> str:
    return '\n'.join([record.prompt, *(f'- {c}' for c in record.choices)])


def questionnaire(n: int, seed: int, subtasks: tuple[str, ...] = SUBTASKS) -> list[SitRecord]:
    """
    Generate `n` questions, each rendered under every subtask in `subtasks`.

    Question i uses the stream `sit/<i>`; records are numbered in question-major order.

    Raises:
        SitError: If a rendering fails validation.
    """
    records = []
    for index in range(n):
        q = generate_question(derive_seed(seed, 'sit', index))
        for subtask in subtasks:
            legend = make_legend(subtask, derive_seed(seed, 'sit', index, subtask))
            check = validate_question(q, legend)
            if not check.valid:
                raise SitError(f'Question {index} invalid under {subtask}: {"; ".join(check.diagnostics)}')
            records.append(SitRecord(
                question_id=len(records),
                subtask=subtask,
                prompt=render_question_head(q, legend),
                choices=render_choices(q, legend),
                answer=q.answer_index,
            ))
    logger.info('Generated %d questions under %d subtasks', n, len(subtasks))
    return records
