"""
Provides a mechanism to declare config file sections as python data classes.

A sectioned key-value file is validated against the section definitions
and its values are loaded into instances of the data classes used as a
schema. Every field needs a default, so an empty section is valid.

Example:
    from schema import SectionModel

    @dataclass(eq=True, frozen=True)
    class Run:
        seed: int = 1234
        threads: str = "1"

    run = SectionModel(Run).load({"seed": "7"})
    print(run.seed)
"""
import difflib
import dataclasses
from typing import Any, Dict, Iterable, Tuple, get_args, get_origin


class InvalidConfig(ValueError):
    pass


def nearest(key: str, candidates: Iterable[str]) -> str:
    """The closest valid name to a misspelled key

    >>> nearest("ensembel", ["ensemble", "horizon", "dt"])
    'ensemble'
    """
    candidates = list(candidates)
    matches = difflib.get_close_matches(key, candidates, n=1, cutoff=0.0)
    return matches[0] if matches else ""


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _converter(field_type: Any):
    if field_type is bool:
        return _parse_bool
    if get_origin(field_type) is tuple:
        element = get_args(field_type)[0]

        def convert(value: str) -> Tuple:
            return tuple(element(item.strip()) for item in value.split(",") if item.strip())
        return convert
    return field_type


def format_value(value: Any) -> str:
    """Inverse of the section converters

    >>> format_value((0.5, 0.25))
    '0.5, 0.25'
    >>> format_value(True)
    'true'
    """
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(format_value(item) for item in value)
    return str(value)


class SectionModel:
    """A section model maps one config section onto the provided model type.

    Keys of the section must be public fields of the model. Values are
    converted to the field types given by the model's annotations.
    """

    def __init__(self, model: type, name: str = ""):
        self._model = model
        self._name = name or model.__name__.lower()
        self._fields = {field.name: field for field in dataclasses.fields(model)}

    @property
    def name(self) -> str:
        return self._name

    @property
    def fields(self) -> Iterable[str]:
        return self._fields.keys()

    def convert(self, key: str, value: str) -> Any:
        if key not in self._fields:
            raise InvalidConfig(f"Unknown key {self._name}.{key}, "
                                f"did you mean {self._name}.{nearest(key, self._fields)}?")
        field_type = self._model.__annotations__[key]
        try:
            return _converter(field_type)(value)
        except ValueError as error:
            raise InvalidConfig(f"Invalid value for {self._name}.{key}: {value!r} ({error})")

    def load(self, values: Dict[str, str], base: Any = None) -> Any:
        """Create a model instance from string values.

        Values missing from `values` come from `base` when given, else from
        the model defaults.
        """
        fields = {key: self.convert(key, value) for key, value in values.items()}
        if base is not None:
            return dataclasses.replace(base, **fields)
        return self._model(**fields)

    def dump(self, instance: Any) -> Dict[str, str]:
        return {name: format_value(getattr(instance, name)) for name in self._fields}


def require(instance: Any, section: str, *names: str):
    """Raise when any of the named fields is left empty"""
    missing = [name for name in names if getattr(instance, name) in ("", (), None)]
    if missing:
        raise InvalidConfig(f"Missing required parameters: "
                            f"{', '.join(f'{section}.{name}' for name in missing)}")

