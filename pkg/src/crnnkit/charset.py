"""Character set limited to the training annotations.

Index 0 is the CTC blank; characters occupy 1..len in order of first
occurrence while scanning the annotation file top to bottom. Spaces never
enter the charset and are dropped when encoding, so the loss and the
space-insensitive metric see the same targets.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence

BLANK = 0
SPACE = " "
HEADER = "#ctc-charset v1"


class CharsetError(ValueError):
    pass


class OutOfCharsetError(CharsetError):
    """Raised by :func:`encode` for characters the charset does not contain.

    ``missing`` is a list of ``(position, char)`` pairs, positions counted in
    the label as given (before space stripping).
    """

    def __init__(self, missing):
        self.missing = list(missing)
        desc = ", ".join(f"{c!r} at {i}" for i, c in self.missing)
        super().__init__(f"characters not in charset: {desc}")


@dataclass(frozen=True)
class Sample:
    path: str
    label: str
    line: int = 0


def strip_spaces(text: str) -> str:
    return text.replace(SPACE, "")


@dataclass(frozen=True)
class Charset:
    chars: tuple
    version: str = "v1"
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        chars = tuple(self.chars)
        if SPACE in chars:
            raise CharsetError("charset may not contain the space character")
        if len(set(chars)) != len(chars):
            raise CharsetError("duplicate characters in charset")
        for c in chars:
            if len(c) != 1 or c in "\n\r\t":
                raise CharsetError(f"invalid charset entry {c!r}")
        object.__setattr__(self, "chars", chars)
        object.__setattr__(self, "_index", {c: i + 1 for i, c in enumerate(chars)})

    blank_index = BLANK

    def __len__(self):
        return len(self.chars)

    @property
    def num_classes(self) -> int:
        """Size of the network output layer (characters + blank)."""
        return len(self.chars) + 1

    def index_of(self, char: str) -> int:
        return self._index[char]

    def char_at(self, index: int) -> str:
        if not 1 <= index <= len(self.chars):
            raise CharsetError(f"index out of charset: {index}")
        return self.chars[index - 1]

    def __contains__(self, char):
        return char in self._index

    def to_text(self) -> str:
        return "\n".join([HEADER, *self.chars]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Charset":
        lines = text.split("\n")
        if not lines or lines[0].rstrip("\r") != HEADER:
            raise CharsetError(f"missing charset header {HEADER!r}")
        if lines[-1] == "":
            lines = lines[:-1]
        return cls(tuple(lines[1:]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Charset":
        with open(path, "r", encoding="utf-8", newline="") as f:
            return cls.from_text(f.read())


def build_charset(samples: Iterable) -> Charset:
    """Distinct non-space characters of all labels, by first occurrence.

    ``samples`` may hold :class:`Sample` objects or bare label strings.
    """
    seen = {}
    n = 0
    for s in samples:
        n += 1
        label = s if isinstance(s, str) else s.label
        for ch in label:
            if ch != SPACE and ch not in seen:
                seen[ch] = None
    if n == 0:
        raise CharsetError("empty corpus")
    return Charset(tuple(seen))


def encode(charset: Charset, label: str) -> List[int]:
    out = []
    missing = []
    for pos, ch in enumerate(label):
        if ch == SPACE:
            continue
        idx = charset._index.get(ch)
        if idx is None:
            missing.append((pos, ch))
        else:
            out.append(idx)
    if missing:
        raise OutOfCharsetError(missing)
    return out


def decode_indices(charset: Charset, indices: Sequence[int]) -> str:
    return "".join(charset.char_at(int(i)) for i in indices)


def read_annotations(path, root=None) -> List[Sample]:
    """Parse an annotation TSV (``relative/image/path<TAB>label`` per line).

    Image paths are resolved against ``root`` (default: the TSV's directory).
    Blank lines are skipped; a line without a tab is an error.
    """
    root = os.path.dirname(os.path.abspath(path)) if root is None else root
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if "\t" not in line:
                raise CharsetError(f"{path}:{lineno}: expected '<path>\\t<label>'")
            rel, label = line.split("\t", 1)
            samples.append(Sample(os.path.join(root, rel), label, lineno))
    return samples


def write_annotations(path, samples: Iterable[Sample], root=None) -> None:
    root = os.path.dirname(os.path.abspath(path)) if root is None else root
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in samples:
            rel = os.path.relpath(s.path, root) if os.path.isabs(s.path) else s.path
            f.write(f"{rel.replace(os.sep, '/')}\t{s.label}\n")
