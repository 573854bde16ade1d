"""In-memory samples shared by the trainer and the evaluator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .charset import Charset, encode, strip_spaces
from .imaging import ImageError, check_image, load_image


@dataclass
class Example:
    image: Optional[np.ndarray]
    text: str
    target: Optional[list] = None
    path: str = ""
    error: str = ""

    @property
    def readable(self) -> bool:
        return self.image is not None


def load_examples(samples, charset: Charset = None, strict: bool = False) -> List[Example]:
    """Load images for ``samples``; unreadable ones keep ``image=None`` and an
    error message unless ``strict``. Targets are encoded when ``charset`` is
    given (out-of-charset labels raise)."""
    out = []
    for s in samples:
        try:
            img = load_image(s.path)
            err = ""
        except (OSError, ImageError) as exc:
            if strict:
                raise
            img, err = None, str(exc)
        target = encode(charset, s.label) if charset is not None else None
        out.append(Example(img, s.label, target, s.path, err))
    return out


def from_arrays(pairs, charset: Charset = None) -> List[Example]:
    """Wrap ``(image, label)`` pairs."""
    return [
        Example(check_image(img), lab, encode(charset, lab) if charset is not None else None, f"<mem:{i}>")
        for i, (img, lab) in enumerate(pairs)
    ]


def label_length(text: str) -> int:
    return len(strip_spaces(text))
