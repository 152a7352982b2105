import json
import os
import tempfile


class atomic_open:
    """
    Context manager writing to a temporary file that replaces `path` on success only.

    Example:
        ```python
        with atomic_open('rules.txt') as f:
            f.write('zero red\\n')
        ```
    """

    def __init__(self, path: str | os.PathLike, mode: str = 'w', **kwargs):
        self._path = os.fspath(path)
        self._mode = mode
        self._kwargs = kwargs
        if 'b' not in mode:
            self._kwargs.setdefault('encoding', 'utf-8')

    def __enter__(self):
        directory = os.path.dirname(os.path.abspath(self._path))
        fd, self._tmp = tempfile.mkstemp(prefix='.tmp-', dir=directory)
        self._file = os.fdopen(fd, self._mode, **self._kwargs)
        return self._file

    def __exit__(self, exc_type, exc, tb):
        self._file.close()
        if exc_type is None:
            os.replace(self._tmp, self._path)
        else:
            os.unlink(self._tmp)
        return False


def write_json(path: str | os.PathLike, data: dict):
    with atomic_open(path, 'w', newline='\n') as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=False)
        f.write('\n')


def read_json(path: str | os.PathLike) -> dict:
    with open(path, encoding='utf-8') as f:
        return json.load(f)
