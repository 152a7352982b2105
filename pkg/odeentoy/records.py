import abc
import json
import os
from collections import OrderedDict
from typing import TYPE_CHECKING, Any, Iterator, Type, TypeVar

from odeentoy import fields
from odeentoy.errors import ErrorWrapper, RecordError, RecordValidationError, ValidationError
from odeentoy.fields import EmptyValue, FieldInfo
from odeentoy.files import atomic_open
from odeentoy.rules import parse_rule

_REGISTERED_RECORDS = OrderedDict()

R = TypeVar('R', bound='Record')


class RecordMeta(abc.ABCMeta):
    """
    Metaclass combining the fields of base classes with the ones declared in the class body,
    and registering the record class by name.

    Raises:
        RecordError: If a record with the same name is already registered.
    """

    def __new__(mcls, name, bases, namespace, **kwargs):
        _cls = super().__new__(mcls, name, bases, namespace)

        # add base classes fields
        _fields = OrderedDict()
        for base in bases:
            _fields.update(getattr(base, '__fields__', {}))

        # add class namespace declared fields
        _fields.update({
            field.name: field
            for field in namespace.values()
            if isinstance(field, FieldInfo)
        })
        _cls.__fields__ = _fields

        if name in _REGISTERED_RECORDS:
            raise RecordError(f'Record {name} already defined, please use a different name')
        _REGISTERED_RECORDS[name] = _cls

        return _cls


class Record(abc.ABC, metaclass=RecordMeta):
    """
    Base class for JSON-lines records.

    In memory, fields hold parsed values (structure ids, tag tuples); `parse` reads the JSON form and
    `dump_dict` writes it back. Mappers needing the world receive it through the `config` option.

    Example:
        ```python
        class Answer(Record):
            game = IntField(gte=0)
            tags = BitStringField()

        Answer.parse({'game': 0, 'tags': '0110'}).tags  # (0, 1, 1, 0)
        ```
    """
    if TYPE_CHECKING:
        __fields__: dict[str, FieldInfo]
        __data__: dict[str, Any]

    def __init__(self, **values):
        unknown = set(values) - set(self.__fields__)
        if unknown:
            raise RecordError(f'Unknown fields {sorted(unknown)} for record {type(self).__name__}')
        self.__data__ = dict(values)

    @classmethod
    def parse(cls: Type[R], data: dict, line: int = None, **options) -> R:
        """
        Parse a JSON object into a record instance.

        Args:
            data: The decoded JSON object.
            line: 1-based line number, reported in errors.
            **options: Mapper options such as `config` or `tags_length`.

        Raises:
            RecordValidationError: If any field fails to parse.
        """
        if not isinstance(data, dict):
            error = TypeError(f'Expected a JSON object, got {type(data).__name__}')
            raise RecordValidationError(
                errors=[ValidationError([ErrorWrapper(loc='$', error=error)])],
                record_cls=cls,
                line=line,
            )

        instance = cls.__new__(cls)
        instance.__data__ = {}
        errors = []
        for field in cls.__fields__.values():
            try:
                value = data.get(field.alias, EmptyValue)
                field.__set__(instance, value=value, **options)
            except ValidationError as err:
                errors.append(err)
        if errors:
            raise RecordValidationError(errors=errors, record_cls=cls, line=line)
        return instance

    def dump_dict(self, **options) -> dict:
        data = {}
        for field in self.__fields__.values():
            value = self.__data__.get(field.name, EmptyValue)
            if value is not EmptyValue:
                data[field.alias] = field.dump(value, **options)
        return data

    def dump_json(self, **options) -> str:
        return json.dumps(self.dump_dict(**options), ensure_ascii=False)

    def __eq__(self, other):
        return type(self) is type(other) and self.__data__ == other.__data__

    def __repr__(self):
        values = ', '.join(f'{k}={v!r}' for k, v in self.__data__.items())
        return f'{type(self).__name__}({values})'


class TrainingGame(Record):
    """
    A training rule with its labelled observations.
    """
    rule = fields.StrField(min_len=1)
    rule_id = fields.IntField(gte=0)
    observations = fields.ListField(fields.ObservationField())

    def validate_rule(self, value, **options):
        if 'config' in options:
            parse_rule(value, options['config'])


class TestGame(Record):
    """
    Public side of a test game: the 32 tagged board structures and the evaluation structures.
    """
    __test__ = False

    game = fields.IntField(gte=0)
    board = fields.ListField(fields.ObservationField(), min_len=1)
    eval_ids = fields.ListField(fields.StructureField(), alias='eval', min_len=1)


class AnswerRecord(Record):
    """
    Private side of a test game: the hidden rule and its tags over the evaluation structures.
    """
    game = fields.IntField(gte=0)
    rule = fields.StrField(min_len=1)
    tags = fields.BitStringField()

    def validate_rule(self, value, **options):
        if 'config' in options:
            parse_rule(value, options['config'])


class PredictionRecord(Record):
    """
    A submitted tagging of one test game, optionally with the conjectured rule.
    """
    game = fields.IntField(gte=0)
    tags = fields.BitStringField()
    rule = fields.StrField(required=False, nullable=True)


class SitRecord(Record):
    """
    One multiple-choice symbolic-interpretation question.
    """
    question_id = fields.IntField(alias='id', gte=0)
    subtask = fields.StrField(min_len=1)
    prompt = fields.StrField(min_len=1)
    choices = fields.ListField(fields.StrField(), min_len=5, max_len=5)
    answer = fields.IntField(gte=0, lt=5)


def read_records(path: str | os.PathLike, record_cls: Type[R], **options) -> Iterator[R]:
    """
    Iterate the records of a JSON-lines file; blank lines are skipped.

    Raises:
        RecordValidationError: On malformed JSON or invalid fields, naming the line.
    """
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordValidationError(
                    errors=[ValidationError([ErrorWrapper(loc='$', error=e)])],
                    record_cls=record_cls,
                    line=line_no,
                ) from e
            yield record_cls.parse(data, line=line_no, **options)


def write_records(path: str | os.PathLike, records, **options):
    """
    Write records as JSON-lines, replacing `path` atomically.
    """
    with atomic_open(path, 'w', newline='\n') as f:
        for record in records:
            f.write(record.dump_json(**options))
            f.write('\n')
