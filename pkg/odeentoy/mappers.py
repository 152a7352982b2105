from odeentoy.errors import ErrorWrapper, MapperError, ValidationError, WorldError
from odeentoy.world import WorldConfig, parse_structure, render_structure, structure_from_id


class Mapper:
    """
    Base class for defining a data mapper.

    Data mappers perform two functions:
        - parse: Parses and validates a JSON value into its in-memory form.
        - dump: Transforms an in-memory value into its JSON form.

    These functions can be overridden in derived classes for custom behavior.
    """

    def parse(self, value, **options):
        """
        Parse and validate the given value.

        Args:
            value: The value to be parsed.
            **options: Additional options for parsing (e.g. `config`).

        Returns:
            The parsed and validated value.
        """
        return value

    def dump(self, value, **options):
        """
        Transform the given value into its JSON form.
        """
        return value


class ListMapper(Mapper):
    """
    Mapper for handling lists of elements with a specific type.

    Args:
        - inner_mapper (Mapper): The mapper of individual elements.
        - min_len (int, optional): Minimum list length.
        - max_len (int, optional): Maximum list length.

    Example:
        ```python
        ListMapper(IntMapper(gte=0), max_len=3).parse([1, 2])
        ```
    """

    def __init__(self, inner_mapper: Mapper, min_len: int = None, max_len: int = None):
        if isinstance(inner_mapper, ListMapper):
            raise MapperError('ListMapper does not support another ListMapper as inner_mapper')

        self._inner_mapper = inner_mapper
        self._min_len = min_len
        self._max_len = max_len

    @property
    def inner_mapper(self) -> Mapper:
        return self._inner_mapper

    def parse(self, value, **options):
        """
        Parse and validate a list of elements.

        Raises:
            TypeError: If the input is not a list.
            ValueError: If the length of the list violates constraints.
            ValidationError: If elements fail to parse, located by index.
        """
        if not isinstance(value, list):
            raise TypeError(f'Invalid type {type(value)}, required type is {list}')

        value_len = len(value)
        if self._min_len is not None and value_len < self._min_len:
            raise ValueError(f'Invalid length {value_len}, min allowed is {self._min_len}')
        if self._max_len is not None and value_len > self._max_len:
            raise ValueError(f'Invalid length {value_len}, max allowed is {self._max_len}')

        new_value = []
        errors = []
        for i, val in enumerate(value):
            try:
                new_value.append(self.inner_mapper.parse(val, **options))
            except ValidationError as e:
                errors.extend(ErrorWrapper(loc=str(i), error=err) for err in e.errors)
            except Exception as e:
                errors.append(ErrorWrapper(loc=str(i), error=e))
        if errors:
            raise ValidationError(errors=errors) from None

        return new_value

    def dump(self, value, **options):
        return [self.inner_mapper.dump(val, **options) for val in value]


class IntMapper(Mapper):
    """
    Mapper for handling integer data.

    Args:
        - gte (int): The value should be greater than or equal to this.
        - lt (int): The value should be less than this.
        - choices (tuple[int]): Allowed values.
    """

    def __init__(self, gte: int = None, lt: int = None, choices: tuple[int, ...] = None):
        self._gte = gte
        self._lt = lt
        self._choices = choices

    def parse(self, value, **options):
        """
        Raises:
            TypeError: If the value is not an int (bools are rejected).
            ValueError: If the value violates the constraints.
        """
        if not isinstance(value, int) or isinstance(value, bool):
            raise TypeError(f'Invalid type, required {int}, got {type(value)}')
        if self._gte is not None and value < self._gte:
            raise ValueError(f'Value {value} is not greater than or equal to {self._gte}')
        if self._lt is not None and value >= self._lt:
            raise ValueError(f'Value {value} is not less than {self._lt}')
        if self._choices is not None and value not in self._choices:
            raise ValueError(f'Value {value} not belong to choices {self._choices}')
        return value


class StrMapper(Mapper):
    """
    Mapper for handling string data.

    Args:
        - min_len (int): Minimum length.
        - choices (tuple[str]): Allowed values.
    """

    def __init__(self, min_len: int = None, choices: tuple[str, ...] = None):
        self._min_len = min_len
        self._choices = choices

    def parse(self, value, **options):
        if not isinstance(value, str):
            raise TypeError(f'Invalid type, required {str}, got {type(value)}')
        if self._min_len is not None and len(value) < self._min_len:
            raise ValueError(f'Invalid length {len(value)}, min is {self._min_len}')
        if self._choices is not None and value not in self._choices:
            raise ValueError(f'Value {value} not belong to choices {self._choices}')
        return value


class BitStringMapper(Mapper):
    """
    Mapper for tag vectors stored as strings of `0` and `1` characters.

    Parses into a tuple of ints; the length can be pinned with `length` or with the `tags_length`
    parse option.
    """

    def __init__(self, length: int = None):
        self._length = length

    def parse(self, value, **options):
        if not isinstance(value, str):
            raise TypeError(f'Invalid type, required {str}, got {type(value)}')
        if value.strip('01'):
            raise ValueError('Tags must contain only 0 and 1 characters')
        length = self._length if self._length is not None else options.get('tags_length')
        if length is not None and len(value) != length:
            raise ValueError(f'Invalid tags length {len(value)}, required is {length}')
        return tuple(int(c) for c in value)

    def dump(self, value, **options):
        return ''.join('1' if v else '0' for v in value)


class StructureMapper(Mapper):
    """
    Mapper for structures stored as token text (`red_block _ _ _ _ _`), parsed into structure ids.

    Requires the `config` parse / dump option (a WorldConfig).
    """

    def parse(self, value, **options):
        config: WorldConfig = options['config']
        if not isinstance(value, str):
            raise TypeError(f'Invalid type, required {str}, got {type(value)}')
        return parse_structure(value, config).id

    def dump(self, value, **options):
        config: WorldConfig = options['config']
        return render_structure(structure_from_id(value, config))


class ObservationMapper(Mapper):
    """
    Mapper for `[structure text, tag]` pairs, parsed into `(structure id, tag)` tuples.
    """

    def __init__(self):
        self._structure = StructureMapper()
        self._tag = IntMapper(choices=(0, 1))

    def parse(self, value, **options):
        if not isinstance(value, list) or len(value) != 2:
            raise TypeError('Invalid observation, required a [structure, tag] pair')
        try:
            struct_id = self._structure.parse(value[0], **options)
        except WorldError as e:
            raise ValidationError(errors=[ErrorWrapper(loc='0', error=e)]) from None
        try:
            tag = self._tag.parse(value[1], **options)
        except Exception as e:
            raise ValidationError(errors=[ErrorWrapper(loc='1', error=e)]) from None
        return struct_id, tag

    def dump(self, value, **options):
        struct_id, tag = value
        return [self._structure.dump(struct_id, **options), int(tag)]
