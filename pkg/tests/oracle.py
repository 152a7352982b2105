"""
Brute-force rule evaluation over rendered text, written without odeentoy.interpreter.

Rules are read token by token and structures cell by cell from their token rendering
(`red_pyramid_up _ blue_block ...`), so the check shares no code with the vectorised tagger.
"""
COLORS = ('red', 'blue')
SHAPES = ('pyramid', 'block')
RELATIONS = ('touching', 'surrounded_by', 'at_the_right_of')


def _piece(token: str):
    if token == '_':
        return None
    color, _, variant = token.partition('_')
    family, _, orientation = variant.partition('_')
    return color, family, orientation or None


def _read_object(tokens: list[str], i: int):
    color = shape = orientation = None
    if i < len(tokens) and tokens[i] in COLORS:
        color = tokens[i]
        i += 1
    if i < len(tokens) and tokens[i] in SHAPES:
        shape = tokens[i]
        i += 1
        if i < len(tokens) and tokens[i].startswith('pointing_'):
            orientation = tokens[i].removeprefix('pointing_')
            i += 1
    return (color, shape, orientation), i


def _matches(piece, obj) -> bool:
    if piece is None:
        return False
    return all(want is None or want == got for want, got in zip(obj, piece))


def _quantify(kind: str, n: int, count: int) -> bool:
    if kind == 'at_least':
        return count >= n
    if kind == 'exactly':
        return count == n
    if kind == 'at_most':
        return count <= n
    return count == 0


def evaluate(rule_text: str, structure_text: str) -> int:
    cells = [_piece(t) for t in structure_text.split()]
    tokens = rule_text.split()
    kind, i, n = tokens[0], 1, 0
    if kind != 'zero':
        n, i = int(tokens[1]), 2
    obj, i = _read_object(tokens, i)

    if i == len(tokens):
        return int(_quantify(kind, n, sum(_matches(c, obj) for c in cells)))

    if tokens[i] in RELATIONS:
        relation = tokens[i]
        target, _ = _read_object(tokens, i + 1)
        count = 0
        for pos, cell in enumerate(cells):
            if not _matches(cell, obj):
                continue
            left = pos > 0 and _matches(cells[pos - 1], target)
            right = pos + 1 < len(cells) and _matches(cells[pos + 1], target)
            if relation == 'touching':
                count += left or right
            elif relation == 'surrounded_by':
                count += left and right
            else:
                count += any(_matches(c, target) for c in cells[:pos])
        return int(_quantify(kind, n, count))

    left = evaluate(' '.join(tokens[:i]), structure_text)
    right = evaluate(' '.join(tokens[i + 1:]), structure_text)
    return int(left and right) if tokens[i] == 'and' else int(left or right)
