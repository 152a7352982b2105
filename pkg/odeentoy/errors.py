from typing import TYPE_CHECKING, Type

if TYPE_CHECKING:
    from odeentoy.records import Record


class ErrorWrapper(Exception):
    """
    Wrapper class for attaching a location to an error raised while parsing records.

    Args:
        - loc (str): The location where the error occurred (field name or list index).
        - error (Exception): The wrapped error instance.

    Properties:
        - loc (tuple[str]): The location where the error occurred, represented as a tuple of strings.
        - error (Exception): The wrapped error instance.

    Example:
        ```python
        try:
            mapper.parse(value)
        except Exception as e:
            wrapped = ErrorWrapper(loc='observations', error=e)
            wrapped.dump_dict()  # {'loc': ['observations'], 'error': '...'}
        ```
    """

    def __init__(self, loc: str, error: Exception):
        self._loc, self._error = self._unwrap_error((loc,), error)
        super().__init__(str(self._error))

    def _unwrap_error(self, loc: tuple[str, ...], error: Exception) -> tuple[tuple[str, ...], Exception]:
        """
        Recursively unwrap nested ErrorWrapper instances to get the original error and its location.

        Args:
            - loc (tuple[str]): The current location information.
            - error (Exception): The wrapped error instance.

        Returns:
            tuple[tuple[str], Exception]: The final location information and the original error.
        """
        if not isinstance(error, ErrorWrapper):
            return loc, error
        return self._unwrap_error((*loc, *error.loc), error.error)

    @property
    def loc(self) -> tuple[str, ...]:
        return self._loc

    @property
    def error(self) -> Exception:
        return self._error

    def dump_dict(self) -> dict:
        """
        Convert the error information to a dictionary.

        Returns:
            dict: A dictionary containing the location and string representation of the error.
        """
        return {
            'loc': list(self.loc),
            'error': str(self.error)
        }


class ValidationError(Exception):
    """
    Aggregate of located errors found while parsing a value.

    Args:
        - errors (list[ErrorWrapper]): List of ErrorWrapper instances containing details of validation errors.

    Example:
        ```python
        try:
            ListMapper(IntMapper()).parse([1, 'x'])
        except ValidationError as ve:
            ve.dump_dict()  # {'errors': [{'loc': ['1'], 'error': '...'}]}
        ```
    """

    def __init__(self, errors: list[ErrorWrapper]):
        self._errors = errors
        super().__init__(self._get_message())

    def _get_message(self) -> str:
        return f'Invalid data into {len(self.errors)} fields'

    @property
    def errors(self) -> list[ErrorWrapper]:
        return self._errors

    def dump_dict(self) -> dict:
        return {
            'errors': [err.dump_dict() for err in self.errors]
        }


class RecordValidationError(ValidationError):
    """
    Validation errors of a single JSON-lines record.

    Args:
        - errors (list[ValidationError]): Field level validation errors.
        - record_cls (Type['Record']): The record class being parsed.
        - line (int): Optional 1-based line number of the record in its file.

    Example:
        ```python
        try:
            TrainingGame.parse({'rule': 'zero red'}, config=config)
        except RecordValidationError as e:
            print(e)
            # Invalid data at record TrainingGame:
            #   - rule_id: Missing value
        ```
    """

    def __init__(self, errors: list[ValidationError], record_cls: Type['Record'], line: int = None):
        unwrapped_errors = []
        for err in errors:
            unwrapped_errors.extend(err.errors)

        self._record_cls = record_cls
        self._line = line
        super().__init__(errors=unwrapped_errors)

    def _get_message(self) -> str:
        where = f' (line {self._line})' if self._line is not None else ''
        msg = f'Invalid data at record {self._record_cls.__name__}{where}:'
        for err in self.errors:
            msg += f'\n  - {".".join(err.loc)}: {str(err)}'
        return msg

    def dump_dict(self) -> dict:
        return {
            'record_cls': self._record_cls.__name__,
            'line': self._line,
            **super().dump_dict()
        }


class WorldError(Exception):
    """
    Exception class for errors related to the Odeen universe.
    This can be raised when a structure id is out of range, a structure text cannot be decoded,
    or a glyph table is malformed.

    Example:
        ```python
        try:
            structure_from_id(117_649, config)
        except WorldError as e:
            print(f"WorldError: {e}")
        ```
    """
    pass


class RuleParseError(Exception):
    """
    Exception class for rule strings outside the Odeen grammar.

    Args:
        - message (str): Description of the problem.
        - position (int): 0-based index of the offending token.
        - token (str | None): The offending token, None when the input ended early.

    Example:
        ```python
        try:
            parse_rule('at_least one pointing up')
        except RuleParseError as e:
            print(e.position, e.token)  # 1 one
        ```
    """

    def __init__(self, message: str, position: int, token: str | None = None):
        self._position = position
        self._token = token
        super().__init__(f'{message} (token {position}: {token!r})')

    @property
    def position(self) -> int:
        return self._position

    @property
    def token(self) -> str | None:
        return self._token


class MapperError(Exception):
    """
    Exception class for errors related to mapper definitions.

    Example:
        ```python
        try:
            ListMapper(inner_mapper=ListMapper(IntMapper()))
        except MapperError as e:
            print(f"MapperError: {e}")
        ```
    """
    pass


class RecordError(Exception):
    """
    Exception class for errors related to record classes, such as duplicated record names.
    """
    pass


class MatrixError(Exception):
    """
    Exception class for semantic matrix errors: bad file magic or version, checksum mismatches,
    shape mismatches and allocation failures.

    Example:
        ```python
        try:
            load_matrix('broken.odnm')
        except MatrixError as e:
            print(f"MatrixError: {e}")
        ```
    """
    pass


class ContractError(Exception):
    """
    Exception class for violated pre-conditions, e.g. observations whose tags disagree with the rule
    they are supposed to describe.
    """
    pass


class DatasetError(Exception):
    """
    Exception class for dataset generation failures: coverage unreachable with the requested number of
    rules, classes that cannot be isolated, or not enough disjoint classes for the test set.
    """
    pass


class SolverError(Exception):
    """
    Exception class for solver configuration errors, such as a non-positive budget or a failing
    external conjecture process.
    """
    pass


class MetricsError(Exception):
    """
    Exception class for scoring errors: predictions missing games, wrong tag lengths, or a matrix whose
    checksum does not match the dataset manifest.
    """
    pass


class SitError(Exception):
    """
    Exception class for Symbol Interpretation Task errors, e.g. a sampling budget exhausted
    without a valid question.
    """
    pass


class CliError(Exception):
    """
    Exception class for command line usage and configuration errors.
    """
    pass
