"""Category label sets.

A label file is UTF-8 text with one category name per line; the line
number (zero-based) is the category id and line 0 must be ``background``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .exceptions import ValidationError

BACKGROUND = "background"


@dataclass(frozen=True)
class LabelSpec:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names or names[0] != BACKGROUND:
            raise ValidationError("label spec must start with 'background'")
        if any(not n for n in names):
            raise ValidationError("label names must be non-empty")
        if len(set(names)) != len(names):
            raise ValidationError("label names must be unique")

    @property
    def count(self) -> int:
        return len(self.names)

    def name(self, category_id: int) -> str:
        return self.names[category_id]

    def id_of(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self):
        return len(self.names)


def parse_label_spec(text: str) -> LabelSpec:
    lines = text.splitlines()
    # a single trailing blank line is tolerated
    while lines and lines[-1] == "":
        lines.pop()
    return LabelSpec(tuple(line.strip() for line in lines))


def load_label_spec(path) -> LabelSpec:
    return parse_label_spec(Path(path).read_text(encoding="utf-8"))


def _bundled(name: str) -> LabelSpec:
    text = resources.files("mhpbench.data").joinpath(name).read_text(encoding="utf-8")
    return parse_label_spec(text)


def mhp_v2_labels() -> LabelSpec:
    """The 58 MHP v2.0 categories plus background (59 entries)."""
    return _bundled("mhp_v2.txt")


def pascal_person_part_labels() -> LabelSpec:
    return _bundled("pascal_person_part.txt")


DEFAULT_LABELS = mhp_v2_labels()
