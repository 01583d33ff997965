"""Balanced two-domain binary classification corpus and its plumbing.

Two synthetic generators produce the corpus: a factual-recall task (does a
candidate value match the fact a question asks about, given a small context
of stated facts) and an event-continuation task (is a candidate continuation
consistent with a templated activity scenario). Both emit one positive and
one negative per generated context, so labels are balanced per domain by
construction. Externally converted corpora enter through a line-delimited
ingestion format with fixed field names.

The stratified split and the whitespace/punctuation tokenizer live here too;
everything is a pure function of its parameters and a seed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .rng import RngStream

INGEST_FORMAT_VERSION = 1
SAMPLE_FIELDS = ("id", "domain", "premise", "candidate", "label")
DOMAINS = ("memory", "reasoning")

PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
_SPECIALS = ("<pad>", "<unk>", "<cls>", "<sep>")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


class IngestError(ValueError):
    """Raised when an ingestion file violates the record contract."""

    def __init__(self, message: str, line: int, column: Optional[int] = None):
        loc = f"line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{message} ({loc})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Sample:
    """One binary-classification item tagged with its cognitive domain."""

    id: str
    domain: str
    premise: str
    candidate: str
    label: bool

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if not self.premise or not self.candidate:
            raise ValueError("premise and candidate must be non-empty")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    test: tuple
    seed: int


# -- synthetic vocabulary ----------------------------------------------------

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["", "l", "n", "r", "s", "th"]

_RELATIONS = ["capital", "emblem", "anthem", "currency", "motto", "founder"]

_PERSON_NAMES = [
    "mira", "tomas", "ingrid", "felix", "nadia", "oscar", "lena", "viktor",
    "paula", "ruben", "sofia", "henrik", "alma", "dario", "greta", "jonas",
]

# Activity scenarios: ordered steps with one consistent continuation and
# continuations that violate the scenario.
_SCHEMAS = [
    {
        "name": "kettle",
        "steps": [
            "{p} fills the kettle with water.",
            "{p} places the kettle on the hot stove.",
            "{p} waits beside the counter.",
        ],
        "consistent": "soon the water begins to boil and steam rises.",
        "violations": [
            "the water instantly freezes into solid ice.",
            "the kettle floats up and drifts out the window.",
        ],
    },
    {
        "name": "seed",
        "steps": [
            "{p} plants a seed in a pot of soil.",
            "{p} waters the pot every morning.",
            "{p} leaves the pot on a sunny windowsill.",
        ],
        "consistent": "after some days a green sprout pushes out of the soil.",
        "violations": [
            "the pot fills with snow although the room is warm.",
            "the seed leaps out and rolls under the door.",
        ],
    },
    {
        "name": "candle",
        "steps": [
            "{p} sets a candle on the table.",
            "{p} strikes a match.",
            "{p} touches the flame to the wick.",
        ],
        "consistent": "the candle lights and the wax slowly melts down.",
        "violations": [
            "the candle grows taller the longer it burns.",
            "the match turns into a spoon in {p} 's hand.",
        ],
    },
    {
        "name": "bicycle",
        "steps": [
            "{p} pumps air into the flat bicycle tire.",
            "{p} checks the valve twice.",
            "{p} squeezes the tire with both hands.",
        ],
        "consistent": "the tire is firm again and ready for the road.",
        "violations": [
            "the bicycle sinks into the pavement like water.",
            "the tire unwinds itself into a long rope.",
        ],
    },
    {
        "name": "letter",
        "steps": [
            "{p} writes a letter at the desk.",
            "{p} folds the page and seals the envelope.",
            "{p} walks to the mailbox on the corner.",
        ],
        "consistent": "{p} drops the envelope through the slot.",
        "violations": [
            "the envelope dissolves into a flock of moths.",
            "{p} plants the envelope in the garden to grow.",
        ],
    },
    {
        "name": "soup",
        "steps": [
            "{p} chops onions and carrots on a board.",
            "{p} drops them into a pot of broth.",
            "{p} stirs the pot over a low flame.",
        ],
        "consistent": "the kitchen fills with the smell of warm soup.",
        "violations": [
            "the pot hums a loud song about winter.",
            "the carrots reassemble themselves on the board.",
        ],
    },
    {
        "name": "library",
        "steps": [
            "{p} carries a stack of books to the library desk.",
            "{p} hands the librarian a library card.",
            "{p} waits while each book is scanned.",
        ],
        "consistent": "the librarian stamps the due date and returns the card.",
        "violations": [
            "the books flap their covers and circle the ceiling.",
            "the desk folds itself into a paper boat.",
        ],
    },
    {
        "name": "laundry",
        "steps": [
            "{p} loads wet clothes into the dryer.",
            "{p} sets the timer for an hour.",
            "{p} comes back when the drum stops.",
        ],
        "consistent": "the clothes come out dry and warm.",
        "violations": [
            "the clothes come out soaked in blue paint.",
            "the dryer door opens onto a sandy beach.",
        ],
    },
    {
        "name": "snowman",
        "steps": [
            "{p} rolls three big snowballs in the yard.",
            "{p} stacks them from largest to smallest.",
            "{p} presses two pebbles into the top ball.",
        ],
        "consistent": "a snowman with pebble eyes stands in the yard.",
        "violations": [
            "the snow bursts into flame in the cold air.",
            "the pebbles sprout wings and fly off south.",
        ],
    },
    {
        "name": "bread",
        "steps": [
            "{p} kneads the dough on a floured table.",
            "{p} shapes it into a round loaf.",
            "{p} slides the loaf into the hot oven.",
        ],
        "consistent": "a brown crust forms as the loaf bakes.",
        "violations": [
            "the oven cools the loaf into a block of ice.",
            "the dough crawls out and hides in a drawer.",
        ],
    },
    {
        "name": "umbrella",
        "steps": [
            "{p} hears rain begin to tap on the roof.",
            "{p} grabs an umbrella by the door.",
            "{p} steps outside onto the wet street.",
        ],
        "consistent": "{p} opens the umbrella and stays dry.",
        "violations": [
            "the rain falls upward past the windows.",
            "the umbrella melts like sugar in the drizzle.",
        ],
    },
    {
        "name": "puzzle",
        "steps": [
            "{p} spreads puzzle pieces across the table.",
            "{p} sorts the edge pieces first.",
            "{p} fits the pieces together one by one.",
        ],
        "consistent": "the last piece clicks in and the picture is complete.",
        "violations": [
            "the finished puzzle slides off and swims away.",
            "each piece splits in half whenever it fits.",
        ],
    },
]


def _coin_word(gen: np.random.Generator, syllables: int = 2) -> str:
    parts = []
    for _ in range(syllables):
        parts.append(_ONSETS[gen.integers(len(_ONSETS))])
        parts.append(_VOWELS[gen.integers(len(_VOWELS))])
    parts.append(_CODAS[gen.integers(len(_CODAS))])
    return "".join(parts)


def _coin_pool(gen: np.random.Generator, count: int, syllables: int = 2) -> list:
    pool: list[str] = []
    seen = set()
    while len(pool) < count:
        w = _coin_word(gen, syllables)
        if w not in seen:
            seen.add(w)
            pool.append(w)
    return pool


def gen_memory(n: int, seed: int) -> list:
    """Factual-recall samples: n/2 contexts, each giving one true and one
    false candidate. Negatives borrow the stored value of a different
    context's fact and are guaranteed unequal to the correct value."""
    if n % 2 != 0:
        raise ValueError("n must be even so labels balance")
    gen = RngStream(seed, stream_id=101).generator()
    half = n // 2
    entities = _coin_pool(gen, max(2 * half, 8), syllables=2)
    # Small disjoint per-relation value pools keep the answer vocabulary
    # dense enough for a small model to learn from a few hundred examples.
    pools = _coin_pool(gen, 12 * len(_RELATIONS), syllables=2)
    values = {
        rel: pools[12 * i:12 * (i + 1)] for i, rel in enumerate(_RELATIONS)
    }

    facts = []  # (relation, key, value, distractor facts)
    for i in range(half):
        rel = _RELATIONS[int(gen.integers(len(_RELATIONS)))]
        key = entities[i]
        value = values[rel][int(gen.integers(12))]
        others = [e for e in entities[:half] if e != key]
        gen.shuffle(others)
        distractors = [
            (rel, other, values[rel][int(gen.integers(12))]) for other in others[:2]
        ]
        facts.append((rel, key, value, distractors))

    samples = []
    for i, (rel, key, value, distractors) in enumerate(facts):
        lines = [f"the {rel} of {key} is {value}."]
        lines += [f"the {r} of {k} is {v}." for r, k, v in distractors]
        gen.shuffle(lines)
        premise = f"what is the {rel} of {key}? " + " ".join(lines)
        samples.append(
            Sample(id=f"mem-{i:05d}-t", domain="memory", premise=premise,
                   candidate=value, label=True)
        )
        # Negative candidate: another context's stored answer (any relation),
        # guaranteed unequal to the correct value.
        donors = [f for j, f in enumerate(facts) if j != i and f[2] != value]
        if donors:
            wrong = donors[int(gen.integers(len(donors)))][2]
        else:  # every other context stores the same value; fall back to the pool
            pool = [v for v in values[rel] if v != value]
            wrong = pool[int(gen.integers(len(pool)))]
        samples.append(
            Sample(id=f"mem-{i:05d}-f", domain="memory", premise=premise,
                   candidate=wrong, label=False)
        )
    return samples


def gen_reasoning(n: int, seed: int) -> list:
    """Event-continuation samples: n/2 scenario contexts, each paired with
    its consistent continuation (true) and one scenario-violating
    continuation (false)."""
    if n % 2 != 0:
        raise ValueError("n must be even so labels balance")
    gen = RngStream(seed, stream_id=202).generator()
    samples = []
    for i in range(n // 2):
        schema = _SCHEMAS[int(gen.integers(len(_SCHEMAS)))]
        person = _PERSON_NAMES[int(gen.integers(len(_PERSON_NAMES)))]
        premise = " ".join(step.format(p=person) for step in schema["steps"])
        good = schema["consistent"].format(p=person)
        bad = schema["violations"][int(gen.integers(len(schema["violations"])))]
        bad = bad.format(p=person)
        samples.append(
            Sample(id=f"rea-{i:05d}-t", domain="reasoning", premise=premise,
                   candidate=good, label=True)
        )
        samples.append(
            Sample(id=f"rea-{i:05d}-f", domain="reasoning", premise=premise,
                   candidate=bad, label=False)
        )
    return samples


def gen_corpus(memory_n: int, reasoning_n: int, seed: int) -> list:
    return gen_memory(memory_n, seed) + gen_reasoning(reasoning_n, seed)


# -- ingestion ---------------------------------------------------------------


def ingest(path, format_version: int = INGEST_FORMAT_VERSION) -> list:
    """Read samples from the line-delimited ingestion format.

    Line 1 is a header object carrying format_version; every following line
    is a flat object with exactly the fields id, domain, premise, candidate,
    label. Violations raise IngestError naming the offending line.
    """
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return []
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise IngestError(f"malformed header: {e.msg}", line=1, column=e.colno) from e
    if not isinstance(header, dict) or "format_version" not in header:
        raise IngestError("header must carry format_version", line=1)
    if header["format_version"] != format_version:
        raise IngestError(
            f"format_version {header['format_version']} != expected {format_version}",
            line=1,
        )
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise IngestError(f"malformed record: {e.msg}", line=lineno, column=e.colno) from e
        if not isinstance(rec, dict):
            raise IngestError("record must be a key-value object", line=lineno)
        missing = [f for f in SAMPLE_FIELDS if f not in rec]
        if missing:
            raise IngestError(f"missing field(s) {missing}", line=lineno)
        extra = [k for k in rec if k not in SAMPLE_FIELDS]
        if extra:
            raise IngestError(f"unexpected field(s) {extra}", line=lineno)
        if not isinstance(rec["label"], bool):
            raise IngestError("label must be true or false", line=lineno)
        if rec["id"] in seen_ids:
            raise IngestError(f"duplicate id {rec['id']!r}", line=lineno)
        try:
            sample = Sample(
                id=str(rec["id"]), domain=rec["domain"],
                premise=rec["premise"], candidate=rec["candidate"],
                label=rec["label"],
            )
        except ValueError as e:
            raise IngestError(str(e), line=lineno) from e
        seen_ids.add(sample.id)
        samples.append(sample)
    return samples


def write_samples(path, samples: Iterable[Sample]) -> None:
    """Write samples in the ingestion format (inverse of ingest)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format_version": INGEST_FORMAT_VERSION}) + "\n")
        for s in samples:
            rec = {
                "id": s.id, "domain": s.domain, "premise": s.premise,
                "candidate": s.candidate, "label": s.label,
            }
            fh.write(json.dumps(rec) + "\n")


# -- split -------------------------------------------------------------------


def split(samples, fraction: float = 0.8, seed: int = 42) -> DatasetSplit:
    """Stratified train/test split by domain; floor(count * (1-fraction))
    test items per domain, remainder to train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    gen = RngStream(seed, stream_id=303).generator()
    train: list[Sample] = []
    test: list[Sample] = []
    for domain in DOMAINS:
        group = [s for s in samples if s.domain == domain]
        order = gen.permutation(len(group))
        # floor, nudged so exact fractions (e.g. 0.2 of 500) survive binary
        # floating point
        n_test = int(np.floor(len(group) * (1.0 - fraction) + 1e-9))
        shuffled = [group[i] for i in order]
        test.extend(shuffled[:n_test])
        train.extend(shuffled[n_test:])
    order = gen.permutation(len(train))  # interleave domains for training
    train = [train[i] for i in order]
    return DatasetSplit(train=tuple(train), test=tuple(test), seed=seed)


# -- tokenizer ---------------------------------------------------------------


@dataclass
class Vocabulary:
    token_to_id: dict
    id_to_token: list

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, tok: str) -> int:
        return self.token_to_id.get(tok, UNK_ID)


def _split_text(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def build_vocab(samples: Iterable[Sample]) -> Vocabulary:
    """Vocabulary over the given (training) samples only, specials first."""
    tokens = sorted(
        {t for s in samples for t in _split_text(s.premise) + _split_text(s.candidate)}
    )
    id_to_token = list(_SPECIALS) + tokens
    return Vocabulary(
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        id_to_token=id_to_token,
    )


def encode_sample(vocab: Vocabulary, sample: Sample, max_seq_len: int) -> list:
    """<cls> premise <sep> candidate, premise truncated first.

    The candidate ends the sequence, so last-token pooling reads a candidate
    position directly."""
    prem = [vocab.encode_token(t) for t in _split_text(sample.premise)]
    cand = [vocab.encode_token(t) for t in _split_text(sample.candidate)]
    budget = max_seq_len - 2
    if len(cand) > budget:
        cand = cand[:budget]
    prem = prem[: budget - len(cand)]
    ids = [CLS_ID] + prem + [SEP_ID] + cand
    ids += [PAD_ID] * (max_seq_len - len(ids))
    return ids


@dataclass
class TokenizedSplit:
    """Token matrices plus everything needed to score and replay them."""

    vocab: Vocabulary
    max_seq_len: int
    train_ids: np.ndarray       # (n_train, T) int64
    train_labels: np.ndarray    # (n_train,) int64, 1 = true
    test_ids: np.ndarray
    test_labels: np.ndarray
    train_samples: tuple = field(default=())
    test_samples: tuple = field(default=())


def tokenize(data: DatasetSplit, max_seq_len: int = 64) -> TokenizedSplit:
    """Deterministic encoding; vocabulary from the train split only, so
    unseen test tokens map to the unknown id."""
    if not data.train:
        raise ValueError("train split is empty")
    vocab = build_vocab(data.train)

    def matrix(samples):
        ids = np.array(
            [encode_sample(vocab, s, max_seq_len) for s in samples], dtype=np.int64
        )
        labels = np.array([1 if s.label else 0 for s in samples], dtype=np.int64)
        return ids, labels

    train_ids, train_labels = matrix(data.train)
    test_ids, test_labels = matrix(data.test)
    return TokenizedSplit(
        vocab=vocab, max_seq_len=max_seq_len,
        train_ids=train_ids, train_labels=train_labels,
        test_ids=test_ids, test_labels=test_labels,
        train_samples=data.train, test_samples=data.test,
    )
