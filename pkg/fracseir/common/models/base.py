# SPDX-License-Identifier: GPL-3.0+

import json
from abc import ABC, abstractmethod

from fracseir.processor.error import SchemaVersionMismatch


class JsonModel(ABC):
    """Base class for fracseir objects that are saved to versioned JSON files."""

    SCHEMA_VERSION = 1

    @abstractmethod
    def to_dict(self):
        """Implement the serialization to JSON-compatible data in your subclass."""

    @classmethod
    @abstractmethod
    def from_dict(cls, data):
        """Implement the inverse of ``to_dict`` in your subclass."""

    @classmethod
    def check_schema_version(cls, data):
        """
        Ensure serialized data was written with the supported schema version.

        :param dict data: the serialized object
        :raises SchemaVersionMismatch: if the version is missing or different
        """
        version = data.get('schema_version') if isinstance(data, dict) else None
        if version != cls.SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f'{cls.__name__} schema version {version} is not supported (expected '
                f'{cls.SCHEMA_VERSION})')

    def save(self, path):
        """
        Write the object to a JSON file; identical objects produce identical bytes.

        :param str path: the destination file
        """
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')

    @classmethod
    def load(cls, path):
        """
        Read an object written by ``save``.

        :param str path: the JSON file
        :return: the object
        :raises SchemaVersionMismatch: if the file uses another schema version
        :raises ValueError: if the file is not valid JSON
        """
        with open(path, 'r') as f:
            data = json.load(f)
        cls.check_schema_version(data)
        return cls.from_dict(data)
