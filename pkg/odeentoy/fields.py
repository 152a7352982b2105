import inspect
from typing import Any, Callable

from odeentoy import mappers
from odeentoy.errors import ErrorWrapper, ValidationError
from odeentoy.mappers import Mapper

EmptyValue = type('Empty', (), {'__repr__': lambda _: 'Empty()', '__bool__': lambda _: False})()


class FieldInfo:
    """
    Represents information about a field in a record.

    Args:
        - mapper (Mapper): The mapper responsible for handling the data of the field.
        - alias (str): An optional JSON key for the field.
        - required (bool): Whether a missing value is an error when no default is given.
        - nullable (bool): Indicates whether the field can be set to None.
        - default (Any): The default value for the field.
        - default_factory (Callable[[], Any]): A callable that returns the default value.
    """

    def __init__(
        self,
        mapper: Mapper,
        alias: str = None,
        required: bool = True,
        nullable: bool = False,
        default: Any = EmptyValue,
        default_factory: Callable[[], Any] = None,
    ):
        if not default_factory:
            def default_factory():
                return default

        self._owner = None
        self._name = None
        self._mapper = mapper
        self._alias = alias
        self._required = required
        self._nullable = nullable
        self._default_factory = default_factory

    @property
    def mapper(self) -> Mapper:
        return self._mapper

    @property
    def name(self) -> str:
        return self._name

    @property
    def alias(self) -> str:
        """
        The JSON key of the field, the attribute name unless an alias is set.
        """
        return self._alias or self._name

    def __set_name__(self, owner, name):
        self._owner = owner
        self._name = name

    def __get__(self, instance, owner):
        if instance is None:
            return self
        return instance.__data__.get(self.name, EmptyValue)

    def __set__(self, instance, value, **options):
        value = self.parse(value, instance=instance, **options)
        if value is not EmptyValue:
            instance.__data__[self.name] = value

    def __delete__(self, instance):
        instance.__data__.pop(self.name, None)

    def parse(self, value, **options):
        """
        Parse and validate the given value for the field.

        Args:
            value: The value to be parsed.
            **options: Additional options for parsing, forwarded to the mapper.

        Returns:
            Any: The parsed and validated value for the field.

        Raises:
            ValidationError: If parsing or validation fails.
        """
        if value is EmptyValue:
            value = self._default_factory()

        if value is EmptyValue:
            if self._required:
                raise ValidationError(errors=[ErrorWrapper(loc=self.alias, error=ValueError('Missing value'))])
            return value

        if value is None:
            if not self._nullable:
                raise ValidationError(errors=[ErrorWrapper(loc=self.alias, error=ValueError('Null value not allowed'))])
            return value

        try:
            value = self.mapper.parse(value, **options)

            # Owner instance validator
            validator = getattr(options.get('instance'), f'validate_{self.name}', None)
            if validator and inspect.ismethod(validator):
                validator(value, **options)

        except ValidationError as e:
            raise ValidationError(
                errors=[ErrorWrapper(loc=self.alias, error=err) for err in e.errors]
            ) from None
        except Exception as e:
            raise ValidationError(
                errors=[ErrorWrapper(loc=self.alias, error=e)]
            ) from None

        return value

    def dump(self, value, **options):
        if value is None:
            return None
        return self.mapper.dump(value, **options)


def ListField(
    inner_field: FieldInfo,
    alias: str = None,
    required: bool = True,
    default: Any = EmptyValue,
    min_len: int = None,
    max_len: int = None,
) -> FieldInfo:
    return FieldInfo(
        mapper=mappers.ListMapper(
            inner_mapper=inner_field.mapper,
            min_len=min_len,
            max_len=max_len,
        ),
        alias=alias,
        required=required,
        default=default,
    )


def StrField(
    alias: str = None,
    required: bool = True,
    nullable: bool = False,
    default: Any = EmptyValue,
    min_len: int = None,
    choices: tuple[str, ...] = None,
) -> FieldInfo:
    return FieldInfo(
        mapper=mappers.StrMapper(min_len=min_len, choices=choices),
        alias=alias,
        required=required,
        nullable=nullable,
        default=default,
    )


def IntField(
    alias: str = None,
    required: bool = True,
    default: Any = EmptyValue,
    gte: int = None,
    lt: int = None,
    choices: tuple[int, ...] = None,
) -> FieldInfo:
    return FieldInfo(
        mapper=mappers.IntMapper(gte=gte, lt=lt, choices=choices),
        alias=alias,
        required=required,
        default=default,
    )


def BitStringField(alias: str = None, required: bool = True, length: int = None) -> FieldInfo:
    return FieldInfo(mapper=mappers.BitStringMapper(length=length), alias=alias, required=required)


def StructureField(alias: str = None, required: bool = True) -> FieldInfo:
    return FieldInfo(mapper=mappers.StructureMapper(), alias=alias, required=required)


def ObservationField(alias: str = None, required: bool = True) -> FieldInfo:
    return FieldInfo(mapper=mappers.ObservationMapper(), alias=alias, required=required)
