import math
from typing import Callable, Iterator, List, Optional, Tuple, TypeVar

import numpy as np
from pydantic import ValidationError

from .errors import InputOutputError, ParseError
from .evaluation import EmbeddingSet
from .schemas import CrossAgeSplit, Pair, SyntheticSample

DATASET_HEADER = "# oefd-dataset v1"
SPLIT_HEADER = "# oefd-split v1"
PAIRS_HEADER = "# oefd-pairs v1"
EMBEDDINGS_HEADER = "# oefd-embeddings v1"

T = TypeVar("T")


def _read_lines(filepath: str) -> List[str]:
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            return f.read().splitlines()
    except FileNotFoundError:
        raise InputOutputError(f"File not found: {filepath}")
    except (OSError, UnicodeDecodeError) as e:
        raise InputOutputError(f"Could not read {filepath}: {e}")


def _records(filepath: str, header: str, header_optional: bool = False) -> Iterator[Tuple[int, str]]:
    """Yields (line_number, text) for every non-blank line after the header."""
    lines = _read_lines(filepath)
    start = 1
    if not lines or lines[0].strip() != header:
        if not header_optional:
            raise ParseError(f"expected header '{header}'", path=filepath, line=1)
        start = 0
    for number, text in enumerate(lines[start:], start=start + 1):
        if text.strip():
            yield number, text


def _parse(filepath: str, line: int, parser: Callable[[], T]) -> T:
    try:
        return parser()
    except (ValueError, IndexError, ValidationError) as e:
        raise ParseError(f"malformed record: {e}", path=filepath, line=line)


def _floats(text: str) -> List[float]:
    values = [float(v) for v in text.split(',')]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite component")
    return values


def extract_dataset(filepath: str) -> List[SyntheticSample]:
    """Reads `identity,age<TAB>c1,c2,...` lines."""
    samples = []
    width: Optional[int] = None
    for line, text in _records(filepath, DATASET_HEADER):
        def parse():
            head, components = text.split('\t')
            identity, age = head.split(',')
            return SyntheticSample(input=_floats(components), identity=int(identity), age=float(age))
        sample = _parse(filepath, line, parse)
        if width is None:
            width = len(sample.input)
        elif len(sample.input) != width:
            raise ParseError(f"sample has {len(sample.input)} components, expected {width}", path=filepath, line=line)
        samples.append(sample)
    return samples


def extract_split(filepath: str) -> CrossAgeSplit:
    roles = {"train": [], "gallery": [], "probe": []}
    for line, text in _records(filepath, SPLIT_HEADER):
        def parse():
            role, index = text.split('\t')
            if role not in roles:
                raise ValueError(f"unknown role '{role}'")
            return role, int(index)
        role, index = _parse(filepath, line, parse)
        roles[role].append(index)
    return CrossAgeSplit(**roles)


def extract_pairs(filepath: str) -> List[Pair]:
    """Reads `index_a,index_b,label` lines; the version header may be omitted."""
    pairs = []
    for line, text in _records(filepath, PAIRS_HEADER, header_optional=True):
        def parse():
            a, b, label = text.split(',')
            if label.strip() not in ("0", "1"):
                raise ValueError(f"label must be 0 or 1, got '{label}'")
            return Pair(index_a=int(a), index_b=int(b), same=label.strip() == "1")
        pairs.append(_parse(filepath, line, parse))
    return pairs


def extract_embeddings(filepath: str) -> EmbeddingSet:
    """Reads `identity<TAB>age<TAB>norm<TAB>c1,...` or the short `identity<TAB>c1,...` form."""
    identities, ages, rows = [], [], []
    for line, text in _records(filepath, EMBEDDINGS_HEADER):
        def parse():
            fields = text.split('\t')
            if len(fields) == 4:
                identity, age, _norm, components = fields
                return int(identity), float(age), _floats(components)
            if len(fields) == 2:
                identity, components = fields
                return int(identity), float('nan'), _floats(components)
            raise ValueError(f"expected 2 or 4 tab-separated fields, got {len(fields)}")
        identity, age, row = _parse(filepath, line, parse)
        if rows and len(row) != len(rows[0]):
            raise ParseError(f"embedding has {len(row)} components, expected {len(rows[0])}", path=filepath, line=line)
        identities.append(identity)
        ages.append(age)
        rows.append(row)
    if not rows:
        raise ParseError("embedding file has no rows", path=filepath, line=1)
    return EmbeddingSet(np.array(rows, dtype=np.float64), np.array(identities, dtype=np.int64),
                        np.array(ages, dtype=np.float64))
