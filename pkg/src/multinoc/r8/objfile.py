"""Object text format.

``@hhhh`` sets the load address, every other line holds one 4-hex-digit word,
``;`` starts a comment.  A later ``@`` may skip forward (the gap is zero
filled) but not backwards.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

LOCAL_WORDS = 1024


class ObjectFormatError(Exception):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass
class ObjectImage:
    origin: int = 0
    words: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.origin < 0 or self.origin + len(self.words) > LOCAL_WORDS:
            raise ObjectFormatError(
                f"image at {self.origin} with {len(self.words)} words overflows local memory")

    def __len__(self) -> int:
        return len(self.words)

    def to_text(self) -> str:
        lines = [f"@{self.origin:04X}"]
        lines += [f"{w:04X}" for w in self.words]
        return "\n".join(lines) + "\n"


_WORD = re.compile(r"[0-9A-Fa-f]{4}")


def parse_object(text: str) -> ObjectImage:
    origin = None
    words: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@"):
            h = line[1:].strip()
            if not _WORD.fullmatch(h):
                raise ObjectFormatError(f"malformed origin {line!r}", lineno)
            addr = int(h, 16)
            if origin is None:
                origin = addr
            else:
                pos = origin + len(words)
                if addr < pos:
                    raise ObjectFormatError("origin moves backwards", lineno)
                words.extend([0] * (addr - pos))
            continue
        if not _WORD.fullmatch(line):
            raise ObjectFormatError(f"malformed hex word {line!r}", lineno)
        if origin is None:
            origin = 0
        words.append(int(line, 16))
        if origin + len(words) > LOCAL_WORDS:
            raise ObjectFormatError("image overflows local memory", lineno)
    return ObjectImage(origin or 0, words)


def load_object(path_or_text: "str | os.PathLike") -> ObjectImage:
    """Load an object image from a file path, or parse it directly from text."""
    if isinstance(path_or_text, os.PathLike) or (
            isinstance(path_or_text, str) and "\n" not in path_or_text
            and os.path.exists(path_or_text)):
        with open(path_or_text) as f:
            return parse_object(f.read())
    return parse_object(str(path_or_text))


def save_object(image: ObjectImage, path) -> None:
    with open(path, "w") as f:
        f.write(image.to_text())
