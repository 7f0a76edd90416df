import csv
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import InputOutputError
from .extraction import DATASET_HEADER, EMBEDDINGS_HEADER, PAIRS_HEADER, SPLIT_HEADER
from .numerics import row_norms
from .schemas import CrossAgeSplit, EvalReport, Pair, SyntheticSample

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "lr", "total_loss", "id_loss", "age_loss", "train_accuracy"]
SCATTER_COLUMNS = ["x", "y", "identity", "age", "norm"]
SUMMARY_COLUMNS = ["mode", "train_accuracy", "norm_age_pearson", "age_mae"]


def _fmt(value: float) -> str:
    # repr of a Python float is the shortest string that parses back bit-exactly.
    return repr(float(value))


def _write_text(filepath: str, lines: Iterable[str]) -> None:
    try:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(filepath, 'w', encoding='utf-8', newline='\n') as f:
            for line in lines:
                f.write(line)
                f.write('\n')
    except OSError as e:
        raise InputOutputError(f"Could not write {filepath}: {e}")
    logger.debug("Wrote %s", filepath)


def write_dataset(filepath: str, samples: Sequence[SyntheticSample]) -> None:
    lines = [DATASET_HEADER]
    lines.extend(f"{s.identity},{_fmt(s.age)}\t{','.join(_fmt(c) for c in s.input)}" for s in samples)
    _write_text(filepath, lines)


def write_split(filepath: str, split: CrossAgeSplit) -> None:
    lines = [SPLIT_HEADER]
    for role in ("train", "gallery", "probe"):
        lines.extend(f"{role}\t{index}" for index in getattr(split, role))
    _write_text(filepath, lines)


def write_pairs(filepath: str, pairs: Sequence[Pair]) -> None:
    lines = [PAIRS_HEADER]
    lines.extend(f"{p.index_a},{p.index_b},{int(p.same)}" for p in pairs)
    _write_text(filepath, lines)


def write_embeddings(filepath: str, embeddings: np.ndarray, identities: Sequence[int],
                     ages: Optional[Sequence[float]] = None) -> None:
    """One row per sample: identity, age, norm, then the raw embedding components."""
    norms = row_norms(np.asarray(embeddings, dtype=np.float64))
    lines = [EMBEDDINGS_HEADER]
    for i, row in enumerate(embeddings):
        age = float('nan') if ages is None else ages[i]
        lines.append(f"{int(identities[i])}\t{_fmt(age)}\t{_fmt(norms[i])}\t{','.join(_fmt(c) for c in row)}")
    _write_text(filepath, lines)


def write_metrics_log(filepath: str, rows: Sequence[Dict[str, float]]) -> None:
    try:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(filepath, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(METRICS_COLUMNS)
            for row in rows:
                writer.writerow([int(row["epoch"])] + [_fmt(row[c]) for c in METRICS_COLUMNS[1:]])
    except OSError as e:
        raise InputOutputError(f"Could not write {filepath}: {e}")


def write_report(filepath: str, report: EvalReport) -> None:
    _write_text(filepath, [report.model_dump_json(indent=2)])


def write_tsv(filepath: str, columns: List[str], rows: Iterable[Sequence[Any]]) -> None:
    def cell(value: Any) -> str:
        if isinstance(value, (float, np.floating)):
            return _fmt(value)
        return str(value)
    lines = ["\t".join(columns)]
    lines.extend("\t".join(cell(v) for v in row) for row in rows)
    _write_text(filepath, lines)
