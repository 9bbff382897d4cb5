"""Loading, validation, and deterministic splitting of the labeled study collection.

A corpus file is either delimited tabular (``csv``) or record-per-line JSON
(``jsonl``) with fields ``study_id``, ``title``, ``abstract``, ``keywords``
and ``label``. Records with a missing or empty abstract are dropped (and
counted); a label that cannot be cast to 0/1 is fatal.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorpusFormatError

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 0.70
TEST_FRACTION = 0.30
VAL_SHARE_OF_TEST = 0.50

# Inside a csv cell the keyword list is ";"-separated.
KEYWORD_DELIMITER = ";"

MIN_SPLIT_RECORDS = 4


@dataclass(frozen=True)
class StudyRecord:
    """One labeled publication. ``label`` is 1 when the study mentions EQ-5D."""

    study_id: str
    title: str
    abstract: str
    keywords: tuple[str, ...]
    label: int


@dataclass
class LoadedCorpus:
    """Result of ingestion: valid records plus the count of dropped ones."""

    records: list[StudyRecord]
    dropped: int

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class DatasetSplit:
    """Study-level train/val/test partition, stratified by label."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int
    fractions: tuple[float, float, float] = (
        TRAIN_FRACTION,
        TEST_FRACTION,
        VAL_SHARE_OF_TEST,
    )


def _cast_label(raw, study_id: str) -> int:
    if isinstance(raw, bool):
        return int(raw)
    if isinstance(raw, int) and raw in (0, 1):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true"):
        return 1
    if text in ("0", "false"):
        return 0
    raise CorpusFormatError(f"study {study_id!r}: cannot cast label {raw!r} to 0/1")


def _keywords(raw) -> tuple[str, ...]:
    if raw is None:
        return ()
    if isinstance(raw, (list, tuple)):
        return tuple(str(k).strip() for k in raw if str(k).strip())
    return tuple(k.strip() for k in str(raw).split(KEYWORD_DELIMITER) if k.strip())


def _iter_raw_rows(path: Path, fmt: str):
    if fmt == "jsonl":
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusFormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    elif fmt == "csv":
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is not None:
                missing = {"study_id", "abstract", "label"} - set(reader.fieldnames)
                if missing:
                    raise CorpusFormatError(f"{path}: missing columns {sorted(missing)}")
            yield from reader
    else:
        raise CorpusFormatError(f"unknown corpus format {fmt!r} (expected 'csv' or 'jsonl')")


def load_corpus(path: str | Path, fmt: str = "jsonl") -> LoadedCorpus:
    """Read a corpus file, drop records without an abstract, validate the rest."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")

    records: list[StudyRecord] = []
    seen_ids: set[str] = set()
    dropped = 0
    for row in _iter_raw_rows(path, fmt):
        study_id = str(row.get("study_id", "") or "").strip()
        if not study_id:
            raise CorpusFormatError(f"{path}: record without study_id: {row!r}")
        if study_id in seen_ids:
            raise CorpusFormatError(f"{path}: duplicate study_id {study_id!r}")
        seen_ids.add(study_id)

        abstract = str(row.get("abstract", "") or "").strip()
        if not abstract:
            dropped += 1
            continue

        records.append(
            StudyRecord(
                study_id=study_id,
                title=str(row.get("title", "") or "").strip(),
                abstract=abstract,
                keywords=_keywords(row.get("keywords")),
                label=_cast_label(row.get("label"), study_id),
            )
        )

    logger.info("loaded %d records from %s (%d dropped for missing abstract)",
                len(records), path, dropped)
    return LoadedCorpus(records=records, dropped=dropped)


def _largest_remainder(quotas: list[float], total: int) -> list[int]:
    """Integer counts summing to ``total``, each within 1 of its quota."""
    base = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(base)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_corpus(records: list[StudyRecord], seed: int) -> DatasetSplit:
    """Deterministic stratified study-level split: 70% train, remainder halved
    into val and test (test takes the odd study).

    The result depends only on the record ids, their labels, and the seed,
    not on input order.
    """
    n = len(records)
    if n < MIN_SPLIT_RECORDS:
        raise ValueError(
            f"cannot split {n} records: at least {MIN_SPLIT_RECORDS} required "
            "so every partition is non-empty"
        )

    n_train = round(TRAIN_FRACTION * n)
    # round(0.7n) can leave fewer than 2 remaining when n <= 5; keep val and
    # test non-empty in that case.
    n_train = min(n_train, n - 2)
    remainder = n - n_train
    n_val = remainder // 2
    n_test = remainder - n_val

    pos_ids = sorted(r.study_id for r in records if r.label == 1)
    neg_ids = sorted(r.study_id for r in records if r.label == 0)
    n_pos = len(pos_ids)

    sizes = [n_train, n_val, n_test]
    pos_counts = _largest_remainder([s * n_pos / n for s in sizes], n_pos)
    neg_counts = [s - p for s, p in zip(sizes, pos_counts)]

    rng = np.random.default_rng(seed)
    pos_order = [pos_ids[i] for i in rng.permutation(len(pos_ids))]
    neg_order = [neg_ids[i] for i in rng.permutation(len(neg_ids))]

    parts: list[list[str]] = []
    p0 = q0 = 0
    for p_count, q_count in zip(pos_counts, neg_counts):
        parts.append(sorted(pos_order[p0:p0 + p_count] + neg_order[q0:q0 + q_count]))
        p0 += p_count
        q0 += q_count

    return DatasetSplit(
        train_ids=tuple(parts[0]),
        val_ids=tuple(parts[1]),
        test_ids=tuple(parts[2]),
        seed=seed,
    )


def select_records(records: list[StudyRecord], ids) -> list[StudyRecord]:
    wanted = set(ids)
    return [r for r in records if r.study_id in wanted]


def save_split(split: DatasetSplit, path: str | Path) -> None:
    """Persist the split manifest as JSON."""
    payload = {
        "seed": split.seed,
        "fractions": {
            "train": split.fractions[0],
            "test": split.fractions[1],
            "val_share_of_test": split.fractions[2],
        },
        "train_ids": list(split.train_ids),
        "val_ids": list(split.val_ids),
        "test_ids": list(split.test_ids),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> DatasetSplit:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return DatasetSplit(
        train_ids=tuple(payload["train_ids"]),
        val_ids=tuple(payload["val_ids"]),
        test_ids=tuple(payload["test_ids"]),
        seed=int(payload["seed"]),
        fractions=(
            payload["fractions"]["train"],
            payload["fractions"]["test"],
            payload["fractions"]["val_share_of_test"],
        ),
    )
