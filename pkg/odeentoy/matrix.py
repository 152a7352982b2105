import csv
import functools
import hashlib
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from odeentoy import kernels
from odeentoy.errors import ContractError, MatrixError
from odeentoy.expressions import Conjunction, RuleAst
from odeentoy.files import atomic_open
from odeentoy.interpreter import universe_tagger
from odeentoy.rules import rule_index
from odeentoy.world import WorldConfig

logger = logging.getLogger(__name__)

MAGIC = b'ODNM'
FORMAT_VERSION = 1
_HEADER = struct.Struct('<4sIQQ')
_CHECKSUM = struct.Struct('<Q')
_RESTRICT_BLOCK = 2048
_FILTER_CHUNK = 4096


def n_words_for(n_structures: int) -> int:
    return (n_structures + 63) // 64


def pack_bits(bits: np.ndarray, n_words: int = None) -> np.ndarray:
    """
    Pack a bool vector into uint64 words, bit j in word j // 64 at position j % 64.
    """
    bits = np.asarray(bits, dtype=bool)
    n_words = n_words if n_words is not None else n_words_for(bits.shape[-1])
    padded = np.zeros((*bits.shape[:-1], n_words * 64), dtype=bool)
    padded[..., :bits.shape[-1]] = bits
    packed = np.packbits(padded, axis=-1, bitorder='little')
    return packed.view('<u8').astype(np.uint64)


def unpack_bits(words: np.ndarray, n_bits: int) -> np.ndarray:
    words = np.ascontiguousarray(words, dtype='<u8')
    return np.unpackbits(words.view(np.uint8), axis=-1, bitorder='little')[..., :n_bits].astype(bool)


def _gather_bits(words: np.ndarray, ids: np.ndarray) -> np.ndarray:
    # words: (..., n_words) uint64; picks bit ids[k] of every row
    shifts = (ids & 63).astype(np.uint64)
    return ((words[..., ids >> 6] >> shifts) & np.uint64(1)).astype(bool)


class SemanticMatrix:
    """
    Bit-packed rules x structures matrix; `rows[i]` holds the tags of rule i over the universe.

    Args:
        - rows (np.ndarray): uint64 array of shape (n_rules, ceil(n_structures / 64)).
        - n_structures (int): Number of meaningful bits per row.

    Properties:
        - n_rules, n_structures, n_words (int): Shape information.
        - checksum (int): XOR of all data words, as stored in the matrix file.
        - partition (EquivalencePartition): Lazily computed equivalence classes.

    Example:
        ```python
        m = build_matrix(enumerate_rules(config), config)
        m.bit(0, 117_648)
        ```
    """

    def __init__(self, rows: np.ndarray, n_structures: int):
        if rows.ndim != 2 or rows.dtype != np.uint64:
            raise MatrixError(f'Invalid rows array {rows.dtype}{rows.shape}, required is a 2-D uint64 array')
        if rows.shape[1] != n_words_for(n_structures):
            raise MatrixError(f'Invalid row width {rows.shape[1]} for {n_structures} structures')
        rows.setflags(write=False)
        self._rows = rows
        self._n_structures = n_structures

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    @property
    def n_rules(self) -> int:
        return self._rows.shape[0]

    @property
    def n_structures(self) -> int:
        return self._n_structures

    @property
    def n_words(self) -> int:
        return self._rows.shape[1]

    @functools.cached_property
    def checksum(self) -> int:
        if self._rows.size == 0:
            return 0
        return int(np.bitwise_xor.reduce(self._rows, axis=None))

    @functools.cached_property
    def partition(self) -> 'EquivalencePartition':
        return equivalence_classes(self)

    def row(self, rule_id: int) -> np.ndarray:
        return self._rows[rule_id]

    def bit(self, rule_id: int, struct_id: int) -> int:
        return int((self._rows[rule_id, struct_id >> 6] >> np.uint64(struct_id & 63)) & np.uint64(1))

    def row_bits(self, rule_id: int, ids=None) -> np.ndarray:
        """
        Tags of a rule, over the whole universe or over `ids` in the given order.
        """
        if ids is None:
            return unpack_bits(self._rows[rule_id], self._n_structures)
        return _gather_bits(self._rows[rule_id], self._check_ids(ids))

    def restrict(self, ids, rule_ids=None) -> np.ndarray:
        """
        Restrict rows to the columns `ids`.

        Args:
            ids: Structure ids, in output column order.
            rule_ids: Rows to keep, all rules when omitted.

        Returns:
            np.ndarray: Bool array of shape (len(rule_ids), len(ids)).
        """
        ids = self._check_ids(ids)
        rule_ids = np.arange(self.n_rules) if rule_ids is None else np.asarray(rule_ids, dtype=np.int64)
        out = np.empty((len(rule_ids), len(ids)), dtype=bool)
        for start in range(0, len(rule_ids), _RESTRICT_BLOCK):
            block = rule_ids[start:start + _RESTRICT_BLOCK]
            out[start:start + len(block)] = _gather_bits(self._rows[block], ids)
        return out

    def _check_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self._n_structures):
            raise MatrixError(f'Structure ids out of range [0, {self._n_structures})')
        return ids


def build_matrix(rules: list[RuleAst], config: WorldConfig, threads: int = 1) -> SemanticMatrix:
    """
    Tag the whole universe with every rule.

    Simple and relational rows are tagged by the vectorised interpreter, parallel over row ranges;
    conjunction rows whose operands are among `rules` are combined word by word from the operand rows.

    Args:
        rules: The rules, row i being rule i.
        config: The world.
        threads: Worker threads; the result does not depend on it.

    Returns:
        SemanticMatrix: The complete matrix.

    Raises:
        MatrixError: If the matrix cannot be allocated.
    """
    n_structures = config.universe_size
    n_words = n_words_for(n_structures)
    try:
        rows = np.empty((len(rules), n_words), dtype=np.uint64)
    except MemoryError:
        raise MatrixError(
            f'Cannot allocate a {len(rules)} x {n_structures} matrix ({len(rules) * n_words * 8} bytes)'
        ) from None

    tagger = universe_tagger(config)
    index = rule_index(rules)
    direct = [i for i, rule in enumerate(rules) if not isinstance(rule, Conjunction)]
    combined = []
    for i, rule in enumerate(rules):
        if not isinstance(rule, Conjunction):
            continue
        left, right = index.get(str(rule.left)), index.get(str(rule.right))
        if left is None or right is None:
            direct.append(i)
        else:
            combined.append((i, left, right, rule.conj))

    def tag_block(block: list[int]):
        for i in block:
            rows[i] = pack_bits(tagger.tag(rules[i]), n_words)

    blocks = [direct[start:start + 256] for start in range(0, len(direct), 256)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for done, _ in enumerate(pool.map(tag_block, blocks), start=1):
            logger.debug('Tagged block %d/%d', done, len(blocks))
    logger.info('Tagged %d rules over %d structures', len(direct), n_structures)

    for i, left, right, conj in combined:
        if conj == 'and':
            np.bitwise_and(rows[left], rows[right], out=rows[i])
        else:
            np.bitwise_or(rows[left], rows[right], out=rows[i])
    if combined:
        logger.info('Combined %d conjunction rows', len(combined))

    return SemanticMatrix(rows, n_structures)


@dataclass
class EquivalencePartition:
    """
    Partition of rules by identical rows.

    Attributes:
        class_of (np.ndarray): Class id of every rule.
        representatives (np.ndarray): Lowest rule id of every class; class ids follow representative order.
    """
    class_of: np.ndarray
    representatives: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.representatives)

    def representative(self, class_id: int) -> int:
        return int(self.representatives[class_id])

    def members(self, class_id: int) -> list[int]:
        return np.flatnonzero(self.class_of == class_id).tolist()

    def same_class(self, rule_a: int, rule_b: int) -> bool:
        return bool(self.class_of[rule_a] == self.class_of[rule_b])


def _row_digest(row: np.ndarray) -> bytes:
    return hashlib.blake2b(row.tobytes(), digest_size=16).digest()


def equivalence_classes(m: SemanticMatrix) -> EquivalencePartition:
    """
    Partition rules by exact row equality.

    Rows are bucketed by a BLAKE2b fingerprint and every bucket hit is confirmed bit for bit, so
    fingerprint collisions cannot merge distinct classes.
    """
    buckets: dict[bytes, list[int]] = {}
    class_of = np.empty(m.n_rules, dtype=np.int64)
    representatives: list[int] = []
    for rule_id in range(m.n_rules):
        row = m.rows[rule_id]
        candidates = buckets.setdefault(_row_digest(row), [])
        for class_id in candidates:
            if np.array_equal(m.rows[representatives[class_id]], row):
                class_of[rule_id] = class_id
                break
        else:
            class_id = len(representatives)
            representatives.append(rule_id)
            candidates.append(class_id)
            class_of[rule_id] = class_id
    logger.info('Found %d equivalence classes among %d rules', len(representatives), m.n_rules)
    return EquivalencePartition(class_of=class_of, representatives=np.asarray(representatives, dtype=np.int64))


def surviving_classes(
    m: SemanticMatrix,
    partition: EquivalencePartition,
    ids,
    tags,
    candidates=None,
) -> np.ndarray:
    """
    Classes whose rows agree with every observation.

    Args:
        m: The matrix.
        partition: Its equivalence partition.
        ids: Observed structure ids.
        tags: Observed tags, aligned with `ids`.
        candidates: Class ids to filter, all classes when omitted.

    Returns:
        np.ndarray: Surviving class ids, ascending.
    """
    ids = np.asarray(ids, dtype=np.int64)
    tags = np.asarray(tags, dtype=bool)
    alive = np.arange(partition.n_classes) if candidates is None else np.asarray(candidates, dtype=np.int64)
    for start in range(0, len(ids), _FILTER_CHUNK):
        if not len(alive):
            break
        chunk = slice(start, start + _FILTER_CHUNK)
        bits = m.restrict(ids[chunk], partition.representatives[alive])
        alive = alive[np.all(bits == tags[chunk], axis=1)]
    return np.sort(alive)


@dataclass
class RepresentativityReport:
    representative: bool
    unresolved: list[int] = field(default_factory=list)


def _split_observations(obs) -> tuple[np.ndarray, np.ndarray]:
    if len(obs) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=bool)
    ids, tags = zip(*obs)
    return np.asarray(ids, dtype=np.int64), np.asarray(tags, dtype=bool)


def is_representative(
    obs: list[tuple[int, int]],
    rule_id: int,
    m: SemanticMatrix,
    partition: EquivalencePartition = None,
) -> RepresentativityReport:
    """
    Check whether observations single out the equivalence class of a rule.

    Args:
        obs: `(structure id, tag)` pairs.
        rule_id: The rule the observations were drawn from.
        m: The matrix.
        partition: Its partition, `m.partition` when omitted.

    Returns:
        RepresentativityReport: `representative` is True when every other class is contradicted by an
        observation; otherwise `unresolved` lists the surviving other classes.

    Raises:
        ContractError: If an observation disagrees with the rule.
    """
    partition = partition or m.partition
    ids, tags = _split_observations(obs)
    mismatches = np.flatnonzero(m.row_bits(rule_id, ids) != tags)
    if len(mismatches):
        raise ContractError(
            f'Observations inconsistent with rule {rule_id} at structures {ids[mismatches][:10].tolist()}'
        )
    truth_class = int(partition.class_of[rule_id])
    alive = surviving_classes(m, partition, ids, tags)
    unresolved = [int(c) for c in alive if c != truth_class]
    return RepresentativityReport(representative=not unresolved, unresolved=unresolved)


@dataclass
class NearestResult:
    """
    Outcome of the nearest-rule comparison for one predicted vector.

    Attributes:
        is_nearest (bool): True when the prediction is strictly closer to the truth vector than to any
            other distinct restricted vector.
        truth_distance (int): Hamming distance to the truth vector.
        min_distance (int): Smallest distance over all distinct restricted vectors.
        argmin_classes (list[int]): Classes whose restricted vector is at `min_distance`.
    """
    is_nearest: bool
    truth_distance: int
    min_distance: int
    argmin_classes: list[int]


def nearest_tagging(
    pred,
    ids,
    truth_rule: int,
    m: SemanticMatrix,
    partition: EquivalencePartition = None,
) -> NearestResult:
    """
    Decide whether a predicted tag vector is nearest to the truth rule.

    Every class row is restricted to `ids`; vectors equal to the truth vector are dropped (equivalent
    or indistinguishable rules), and the prediction must be strictly closer to the truth than to each
    remaining vector. Ties count as failure.
    """
    partition = partition or m.partition
    pred = np.asarray(pred, dtype=bool)
    ids = np.asarray(ids, dtype=np.int64)
    if pred.shape != ids.shape:
        raise ContractError(f'Prediction length {len(pred)} differs from {len(ids)} evaluation ids')
    if len(np.unique(ids)) != len(ids):
        raise ContractError('Evaluation ids must be distinct')

    truth = m.row_bits(truth_rule, ids)
    restricted = m.restrict(ids, partition.representatives)
    packed = pack_bits(restricted)
    distances = kernels.hamming_to_rows(packed, pack_bits(pred))
    to_truth = kernels.hamming_to_rows(packed, pack_bits(truth))

    truth_distance = int(np.count_nonzero(pred != truth))
    others = distances[to_truth != 0]
    min_other = int(others.min()) if len(others) else None
    is_nearest = min_other is None or truth_distance < min_other
    min_distance = truth_distance if min_other is None else min(truth_distance, min_other)
    argmin_classes = np.flatnonzero(distances == min_distance).tolist()
    return NearestResult(
        is_nearest=is_nearest,
        truth_distance=truth_distance,
        min_distance=min_distance,
        argmin_classes=argmin_classes,
    )


@dataclass
class WeightStats:
    """
    Hamming weights of rows (rules) and columns (structures) with summary histograms.
    """
    rule_weights: np.ndarray
    structure_weights: np.ndarray
    rule_histogram: tuple[np.ndarray, np.ndarray]
    structure_histogram: tuple[np.ndarray, np.ndarray]

    @property
    def rule_weight_min(self) -> int:
        return int(self.rule_weights.min())

    @property
    def rule_weight_max(self) -> int:
        return int(self.rule_weights.max())

    @property
    def structure_weight_min(self) -> int:
        return int(self.structure_weights.min())

    @property
    def structure_weight_max(self) -> int:
        return int(self.structure_weights.max())

    def dump_dict(self) -> dict:
        def hist(h):
            counts, edges = h
            return {'counts': counts.tolist(), 'edges': edges.tolist()}

        return {
            'rule_weight_min': self.rule_weight_min,
            'rule_weight_max': self.rule_weight_max,
            'rule_weight_mean': float(self.rule_weights.mean()),
            'structure_weight_min': self.structure_weight_min,
            'structure_weight_max': self.structure_weight_max,
            'structure_weight_mean': float(self.structure_weights.mean()),
            'rule_histogram': hist(self.rule_histogram),
            'structure_histogram': hist(self.structure_histogram),
        }


def weight_stats(m: SemanticMatrix, bins: int = 50) -> WeightStats:
    """
    Exact popcounts of every row and column of the matrix.
    """
    rule_weights = kernels.row_popcounts(m.rows)
    structure_weights = kernels.column_counts(m.rows, m.n_structures)
    return WeightStats(
        rule_weights=rule_weights,
        structure_weights=structure_weights,
        rule_histogram=np.histogram(rule_weights, bins=bins, range=(0, m.n_structures)),
        structure_histogram=np.histogram(structure_weights, bins=bins, range=(0, m.n_rules)),
    )


def band_report(stats: WeightStats, low: int = 10_000, high: int = 14_000) -> dict:
    """
    Compare structure weights with a reference band; a soft diagnostic that only logs a warning.
    """
    weights = stats.structure_weights
    inside = (weights >= low) & (weights <= high)
    counts, _ = stats.structure_histogram
    peaks = int(np.count_nonzero(
        (counts[1:-1] > counts[:-2]) & (counts[1:-1] >= counts[2:])
    )) if len(counts) > 2 else 0
    report = {
        'band': [low, high],
        'measured_min': stats.structure_weight_min,
        'measured_max': stats.structure_weight_max,
        'median': float(np.median(weights)),
        'fraction_inside': float(inside.mean()),
        'within_band': bool(inside.all()),
        'histogram_peaks': peaks,
    }
    if not report['within_band']:
        logger.warning(
            'Structure weights span [%d, %d], outside the reference band [%d, %d]',
            report['measured_min'], report['measured_max'], low, high
        )
    return report


def export_weights_csv(stats: WeightStats, path: str | os.PathLike):
    """
    Write raw weight vectors as CSV rows `kind,index,weight`.
    """
    with atomic_open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['kind', 'index', 'weight'])
        writer.writerows(('rule', i, int(w)) for i, w in enumerate(stats.rule_weights))
        writer.writerows(('structure', j, int(w)) for j, w in enumerate(stats.structure_weights))


def save_matrix(m: SemanticMatrix, path: str | os.PathLike):
    """
    Write the matrix file: header, little-endian rows, XOR checksum.
    """
    with atomic_open(path, 'wb') as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, m.n_rules, m.n_structures))
        f.write(np.ascontiguousarray(m.rows, dtype='<u8').tobytes())
        f.write(_CHECKSUM.pack(m.checksum))
    logger.info('Saved %d x %d matrix to %s (checksum %016x)', m.n_rules, m.n_structures, path, m.checksum)


def load_matrix(path: str | os.PathLike) -> SemanticMatrix:
    """
    Read a matrix file.

    Raises:
        MatrixError: On bad magic, unsupported version, truncated data or checksum mismatch.
    """
    with open(path, 'rb') as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise MatrixError(f'Truncated matrix header in {path}')
        magic, version, n_rules, n_structures = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MatrixError(f'Invalid magic {magic!r} in {path}, required is {MAGIC!r}')
        if version != FORMAT_VERSION:
            raise MatrixError(f'Unsupported matrix format version {version}, required is {FORMAT_VERSION}')
        n_words = n_words_for(n_structures)
        count = n_rules * n_words
        data = np.fromfile(f, dtype='<u8', count=count)
        if data.size != count:
            raise MatrixError(f'Truncated matrix data in {path}: {data.size} of {count} words')
        tail = f.read(_CHECKSUM.size)
        if len(tail) != _CHECKSUM.size:
            raise MatrixError(f'Missing checksum in {path}')

    m = SemanticMatrix(data.astype(np.uint64).reshape(n_rules, n_words), n_structures)
    (stored,) = _CHECKSUM.unpack(tail)
    if stored != m.checksum:
        raise MatrixError(f'Checksum mismatch in {path}: stored {stored:016x}, computed {m.checksum:016x}')
    return m
