import functools
import logging
import os
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

from odeentoy.errors import WorldError

logger = logging.getLogger(__name__)

RenderMode = Literal['token', 'emoji']
EMPTY_TOKEN = '_'

# Default glyphs, indexed by piece code under the default world.
DEFAULT_GLYPHS = ('·', '🟥', '🔺', '🔻', '🟦', '🔼', '🔽')


@dataclass(frozen=True)
class WorldConfig:
    """
    Parameters of an Odeen universe.

    Args:
        - length (int): Number of cells in every structure.
        - colors (tuple[str]): Ordered color names.
        - shape_variants (tuple[str]): Ordered shape variant names. A variant named
          `<family>_<orientation>` (e.g. `pyramid_up`) is an oriented member of `<family>`.

    Properties:
        - alphabet_size (int): `1 + len(colors) * len(shape_variants)`, the empty cell included.
        - universe_size (int): `alphabet_size ** length`.

    Example:
        ```python
        config = WorldConfig()
        config.universe_size  # 117649
        ```
    """
    length: int = 6
    colors: tuple[str, ...] = ('red', 'blue')
    shape_variants: tuple[str, ...] = ('block', 'pyramid_up', 'pyramid_down')

    def __post_init__(self):
        if self.length < 1:
            raise WorldError(f'Invalid length {self.length}, min allowed is 1')
        if not self.colors or not self.shape_variants:
            raise WorldError('A world needs at least one color and one shape variant')
        if len(set(self.colors)) != len(self.colors):
            raise WorldError(f'Duplicated colors {self.colors}')
        if len(set(self.shape_variants)) != len(self.shape_variants):
            raise WorldError(f'Duplicated shape variants {self.shape_variants}')
        # Tuples keep the config hashable when lists are given
        object.__setattr__(self, 'colors', tuple(self.colors))
        object.__setattr__(self, 'shape_variants', tuple(self.shape_variants))

    @property
    def alphabet_size(self) -> int:
        return 1 + len(self.colors) * len(self.shape_variants)

    @property
    def universe_size(self) -> int:
        return self.alphabet_size ** self.length

    @functools.cached_property
    def piece_tokens(self) -> tuple[str, ...]:
        """
        Token spelling of every piece, indexed by piece code.

        Returns:
            tuple[str]: `('_', 'red_block', 'red_pyramid_up', ...)` under the default world.
        """
        return (EMPTY_TOKEN, *(f'{c}_{v}' for c in self.colors for v in self.shape_variants))

    @functools.cached_property
    def token_codes(self) -> dict[str, int]:
        return {token: code for code, token in enumerate(self.piece_tokens)}

    @functools.cached_property
    def place_values(self) -> tuple[int, ...]:
        # Leftmost cell is the most significant digit
        return tuple(self.alphabet_size ** (self.length - 1 - i) for i in range(self.length))

    def as_dict(self) -> dict:
        return {
            'length': self.length,
            'colors': list(self.colors),
            'shape_variants': list(self.shape_variants),
        }


@dataclass(frozen=True, slots=True)
class Piece:
    """
    One cell of a structure: either empty (`color` and `variant` are None) or an occupied cell
    holding color index `color` and shape-variant index `variant`.
    """
    color: int | None = None
    variant: int | None = None

    @property
    def is_empty(self) -> bool:
        return self.color is None

    @classmethod
    def from_code(cls, code: int, config: WorldConfig) -> 'Piece':
        if not 0 <= code < config.alphabet_size:
            raise WorldError(f'Invalid piece code {code}, allowed range is [0, {config.alphabet_size})')
        if code == 0:
            return EMPTY
        color, variant = divmod(code - 1, len(config.shape_variants))
        return cls(color=color, variant=variant)

    def code(self, config: WorldConfig) -> int:
        if self.is_empty:
            return 0
        return 1 + self.color * len(config.shape_variants) + self.variant


EMPTY = Piece()


@dataclass(frozen=True, slots=True)
class Structure:
    """
    A point of the universe: a fixed-length sequence of piece codes with its canonical id.

    Args:
        - codes (tuple[int]): Piece code per cell, index 0 is the leftmost cell.
        - id (int): Canonical id, the big-endian base-`alphabet_size` reading of `codes`.
        - config (WorldConfig): The world the structure belongs to.
    """
    codes: tuple[int, ...]
    id: int
    config: WorldConfig = field(repr=False, compare=False)

    @property
    def cells(self) -> tuple[Piece, ...]:
        return tuple(Piece.from_code(code, self.config) for code in self.codes)

    def __len__(self) -> int:
        return len(self.codes)


def structure_to_id(codes: tuple[int, ...] | list[int], config: WorldConfig) -> int:
    """
    Compute the canonical id of a sequence of piece codes.

    Args:
        codes: Piece code per cell.
        config: The world.

    Returns:
        int: The canonical id.

    Raises:
        WorldError: If the length or a code is invalid.
    """
    if len(codes) != config.length:
        raise WorldError(f'Invalid structure length {len(codes)}, required is {config.length}')
    struct_id = 0
    for code in codes:
        if not 0 <= code < config.alphabet_size:
            raise WorldError(f'Invalid piece code {code}, allowed range is [0, {config.alphabet_size})')
        struct_id = struct_id * config.alphabet_size + code
    return struct_id


def structure_from_id(struct_id: int, config: WorldConfig) -> Structure:
    """
    Decode a canonical id into its structure.

    Args:
        struct_id: The canonical id.
        config: The world.

    Returns:
        Structure: The unique structure whose id is `struct_id`.

    Raises:
        WorldError: If the id is outside `[0, universe_size)`.

    Example:
        ```python
        structure_from_id(7, WorldConfig()).codes  # (0, 0, 0, 0, 1, 0)
        ```
    """
    struct_id = int(struct_id)
    if not 0 <= struct_id < config.universe_size:
        raise WorldError(f'Structure id {struct_id} out of range [0, {config.universe_size})')
    codes = []
    rest = struct_id
    for _ in range(config.length):
        rest, code = divmod(rest, config.alphabet_size)
        codes.append(code)
    return Structure(codes=tuple(reversed(codes)), id=struct_id, config=config)


def structure_from_codes(codes: tuple[int, ...] | list[int], config: WorldConfig) -> Structure:
    codes = tuple(int(c) for c in codes)
    return Structure(codes=codes, id=structure_to_id(codes, config), config=config)


def iter_structures(config: WorldConfig) -> Iterator[Structure]:
    for struct_id in range(config.universe_size):
        yield structure_from_id(struct_id, config)


@functools.lru_cache(maxsize=8)
def universe_codes(config: WorldConfig) -> np.ndarray:
    """
    Table of piece codes of the whole universe, row j being structure j.

    Returns:
        np.ndarray: Read-only uint8 array of shape (universe_size, length).
    """
    ids = np.arange(config.universe_size, dtype=np.int64)
    table = np.empty((config.universe_size, config.length), dtype=np.uint8)
    for i, place in enumerate(config.place_values):
        table[:, i] = (ids // place) % config.alphabet_size
    table.setflags(write=False)
    logger.debug('Universe table built: %d structures of length %d', config.universe_size, config.length)
    return table


def codes_to_ids(codes: np.ndarray, config: WorldConfig) -> np.ndarray:
    """
    Vectorised `structure_to_id` over the rows of a code table.
    """
    places = np.asarray(config.place_values, dtype=np.int64)
    return codes.astype(np.int64) @ places


def cell_neighbors(struct_id: int, config: WorldConfig) -> list[int]:
    """
    Ids of all structures differing from `struct_id` in exactly one cell, ordered by cell then code.
    """
    structure = structure_from_id(struct_id, config)
    neighbors = []
    for i, (code, place) in enumerate(zip(structure.codes, config.place_values)):
        base = struct_id - code * place
        neighbors.extend(base + other * place for other in range(config.alphabet_size) if other != code)
    return neighbors


def cell_distance(a: Structure, b: Structure) -> int:
    return sum(x != y for x, y in zip(a.codes, b.codes))


class GlyphTable:
    """
    Bidirectional mapping between piece codes and display glyphs.

    Args:
        - glyphs (tuple[str]): Glyph per piece code.

    Raises:
        WorldError: If glyphs are empty, duplicated, or one glyph is a prefix of another
        (rendered structures are parsed back by prefix matching).
    """

    def __init__(self, glyphs: tuple[str, ...] | list[str]):
        glyphs = tuple(glyphs)
        if any(not g or g.isspace() for g in glyphs):
            raise WorldError('Glyphs must be non-blank')
        if len(set(glyphs)) != len(glyphs):
            raise WorldError(f'Duplicated glyphs in {glyphs}')
        for a in glyphs:
            for b in glyphs:
                if a != b and b.startswith(a):
                    raise WorldError(f'Glyph {a!r} is a prefix of glyph {b!r}')
        self._glyphs = glyphs
        # Longest first, so prefix matching is unambiguous
        self._by_length = sorted(enumerate(glyphs), key=lambda item: -len(item[1]))

    @property
    def glyphs(self) -> tuple[str, ...]:
        return self._glyphs

    def __len__(self) -> int:
        return len(self._glyphs)

    def glyph(self, code: int) -> str:
        return self._glyphs[code]

    def split(self, text: str) -> list[int]:
        """
        Split a run of glyphs into piece codes.

        Raises:
            WorldError: If the text contains something that is not a glyph.
        """
        codes = []
        pos = 0
        text = ''.join(text.split())
        while pos < len(text):
            for code, glyph in self._by_length:
                if text.startswith(glyph, pos):
                    codes.append(code)
                    pos += len(glyph)
                    break
            else:
                raise WorldError(f'Unknown glyph at position {pos} of {text!r}')
        return codes

    @classmethod
    def default(cls, config: WorldConfig) -> 'GlyphTable':
        if config.alphabet_size != len(DEFAULT_GLYPHS):
            raise WorldError(
                f'No default glyph table for alphabet size {config.alphabet_size}, please load one'
            )
        return cls(DEFAULT_GLYPHS)


def load_glyph_table(path: str | os.PathLike, config: WorldConfig) -> GlyphTable:
    """
    Load a glyph table file made of `code=glyph` lines.

    Blank lines and lines starting with `#` are ignored. Every piece code of the world must be
    present exactly once.

    Raises:
        WorldError: If a line is malformed or the table is incomplete.
    """
    glyphs: dict[int, str] = {}
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            key, sep, glyph = line.partition('=')
            if not sep or not key.strip().isdigit() or not glyph.strip():
                raise WorldError(f'Malformed glyph line {line_no}: {line!r}')
            code = int(key)
            if code in glyphs:
                raise WorldError(f'Duplicated glyph code {code} at line {line_no}')
            glyphs[code] = glyph.strip()

    missing = sorted(set(range(config.alphabet_size)) - set(glyphs))
    extra = sorted(set(glyphs) - set(range(config.alphabet_size)))
    if missing or extra:
        raise WorldError(f'Glyph table mismatch: missing codes {missing}, unknown codes {extra}')
    return GlyphTable(tuple(glyphs[c] for c in range(config.alphabet_size)))


def render_structure(
    structure: Structure,
    mode: RenderMode = 'token',
    glyphs: GlyphTable = None,
) -> str:
    """
    Render a structure as text.

    Args:
        structure: The structure to render.
        mode: `token` for space separated piece tokens, `emoji` for one glyph per cell.
        glyphs: Glyph table for `emoji` mode, the default table when omitted.

    Returns:
        str: e.g. `red_block _ _ _ _ _` in token mode.
    """
    config = structure.config
    if mode == 'token':
        return ' '.join(config.piece_tokens[code] for code in structure.codes)
    if mode == 'emoji':
        glyphs = glyphs or GlyphTable.default(config)
        return ''.join(glyphs.glyph(code) for code in structure.codes)
    raise WorldError(f'Unknown render mode {mode!r}')


def parse_structure(
    text: str,
    config: WorldConfig,
    mode: RenderMode = 'token',
    glyphs: GlyphTable = None,
) -> Structure:
    """
    Parse the output of `render_structure` back into a structure.

    Raises:
        WorldError: On unknown tokens or glyphs, or a wrong cell count.
    """
    if mode == 'token':
        tokens = text.split()
        codes = []
        for pos, token in enumerate(tokens):
            code = config.token_codes.get(token)
            if code is None:
                raise WorldError(f'Unknown piece token {token!r} at position {pos}')
            codes.append(code)
    elif mode == 'emoji':
        glyphs = glyphs or GlyphTable.default(config)
        codes = glyphs.split(text)
    else:
        raise WorldError(f'Unknown render mode {mode!r}')
    return structure_from_codes(codes, config)
