"""Entity-type schemes and the original-to-common label mapping.

Each supported corpus annotates its own inventory of entity types; the
canonical label lists, accepted alias spellings, and the reduction of every
original label onto the five common types (PER, ORG, LOC, FAC, OTHER) are
shipped as a versioned data file (``data/type_maps.json``) so the mapping can
be audited and swapped without touching code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

#: Sentinel label for mentions without an entity type.  It is appended to
#: every scheme internally, so type comparisons stay total on partially
#: typed corpora.
NA = "NA"

SCHEME_NAMES = (
    "litbank-orig",
    "emailcoref-orig",
    "wikicoref-orig",
    "ontonotes-orig",
    "common",
)

COMMON = "common"


class UnknownTypeLabel(ValueError):
    """A label that is not part of the scheme it was used with."""


@dataclass(frozen=True)
class TypeScheme:
    """A named, ordered inventory of entity-type labels.

    ``labels`` holds the canonical spellings; ``aliases`` maps alternate
    spellings (e.g. ``WORK_OF_ART``) back onto canonical ones (``WOA``).
    """

    name: str
    labels: tuple[str, ...]
    aliases: dict[str, str] = field(default_factory=dict)

    def canonical(self, label: str) -> str:
        """Normalize ``label`` to its canonical spelling.

        ``NA`` is always accepted.  Raises :class:`UnknownTypeLabel` for
        labels outside the scheme.
        """
        if label in self.aliases:
            return self.aliases[label]
        if label in self.labels or label == NA:
            return label
        raise UnknownTypeLabel(
            f"label {label!r} is not in type scheme {self.name!r}"
        )

    def __contains__(self, label: str) -> bool:
        try:
            self.canonical(label)
        except UnknownTypeLabel:
            return False
        return True

    @property
    def labels_with_na(self) -> tuple[str, ...]:
        if NA in self.labels:
            return self.labels
        return self.labels + (NA,)


def _load_tables() -> dict:
    data = resources.files("typecoref").joinpath("data/type_maps.json")
    return json.loads(data.read_text(encoding="utf-8"))


_TABLES = _load_tables()
TABLE_VERSION: int = _TABLES["version"]

_SCHEMES: dict[str, TypeScheme] = {
    name: TypeScheme(name, tuple(labels), dict(_TABLES["aliases"].get(name, {})))
    for name, labels in _TABLES["schemes"].items()
}


def get_scheme(name: str) -> TypeScheme:
    """Look up a scheme by name (see :data:`SCHEME_NAMES`)."""
    try:
        return _SCHEMES[name]
    except KeyError:
        raise UnknownTypeLabel(f"unknown type scheme {name!r}") from None


def map_to_common(label: str, source_scheme: TypeScheme | str) -> str:
    """Reduce an original corpus label to one of the five common types.

    ``NA`` maps through the scheme's own NA row when the scheme defines one
    (WikiCoref, OntoNotes); for fully typed schemes it passes through
    unchanged, since there absence of a type is not a label.
    """
    scheme = get_scheme(source_scheme) if isinstance(source_scheme, str) else source_scheme
    canon = scheme.canonical(label)
    table = _TABLES["to_common"][scheme.name]
    if canon == NA and canon not in table:
        return NA
    return table[canon]
