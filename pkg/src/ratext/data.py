"""Synthetic corpora with planted rationales, plus corpus file I/O.

Classification instances each embed exactly one multi-token keyphrase of
their own class inside filler text; the keyphrase positions are the gold
rationale.  Keyphrase token pools are class-disjoint, so a lookup from
complete keyphrase to class labels every instance correctly.  Two kinds
of noise keep single tokens from being sufficient evidence: with
probability ``noise_rate`` an instance carries a distractor, a strict
suffix of some other class's keyphrase, and each filler slot becomes a
stray lone keyphrase token with probability ``stray_rate``.  Neither can
change the correct label, because generation discards any instance in
which a second complete keyphrase assembles by accident.

Regression instances plant one phrase mixing tokens from a positive and
a negative pool; the score is the positive fraction of the phrase.

On disk a corpus is JSONL, one instance per line:

    {"tokens": ["w12", ...], "label": 2, "rationale": [0, 0, 1, ...]}

with ``rationale`` optional, plus a vocabulary file holding one token
per line (line 0 is the pad symbol, line 1 the unknown symbol).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation, DataError

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1


@dataclass
class Instance:
    tokens: list[int]
    label: float | int
    gold_mask: list[int] | None = None


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}
        if self.tokens[:2] != [PAD, UNK]:
            raise DataError("vocabulary must start with the pad and unknown symbols")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)


def default_vocab(vocab_size: int) -> Vocab:
    return Vocab([PAD, UNK] + [f"w{i}" for i in range(2, vocab_size)])


@dataclass(frozen=True)
class SyntheticSpec:
    vocab_size: int = 200
    num_classes: int = 4
    regression: bool = False
    keyphrases_per_class: int = 2
    keyphrase_len: tuple[int, int] = (2, 4)
    seq_len: tuple[int, int] = (15, 30)
    filler: str = "uniform"  # or "zipf"
    noise_rate: float = 0.3
    stray_rate: float = 0.2
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    seed: int = 13

    def validate(self) -> None:
        lo, hi = self.keyphrase_len
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad keyphrase length range {self.keyphrase_len}")
        slo, shi = self.seq_len
        if not (1 <= slo <= shi):
            raise ConfigError(f"bad sequence length range {self.seq_len}")
        if slo < 2 * hi + 1:
            raise ConfigError(
                "sequences too short to place a keyphrase and a distractor apart"
            )
        if self.num_classes < 2:
            raise ConfigError("need at least two classes (or score pools)")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError(f"noise_rate must lie in [0, 1], got {self.noise_rate}")
        if not 0.0 <= self.stray_rate <= 0.5:
            raise ConfigError(f"stray_rate must lie in [0, 0.5], got {self.stray_rate}")
        if self.filler not in ("uniform", "zipf"):
            raise ConfigError(f"unknown filler distribution {self.filler!r}")
        pools = 2 if self.regression else self.num_classes
        budget = pools * self.keyphrases_per_class * hi
        if self.vocab_size < 2 + budget + 20:
            raise ConfigError(
                f"vocab_size {self.vocab_size} leaves too few filler tokens "
                f"(keyphrases may claim up to {budget})"
            )
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one instance")


@dataclass
class DatasetBundle:
    train: list[Instance]
    dev: list[Instance]
    test: list[Instance]
    vocab: Vocab
    keyphrases: list[list[list[int]]]  # per class (or per pool), lists of token ids
    spec: SyntheticSpec


def _build_keyphrases(spec: SyntheticSpec, rng: np.random.Generator):
    lo, hi = spec.keyphrase_len
    pools = 2 if spec.regression else spec.num_classes
    lengths = [
        [int(rng.integers(lo, hi + 1)) for _ in range(spec.keyphrases_per_class)]
        for _ in range(pools)
    ]
    budget = sum(sum(ls) for ls in lengths)
    ids = rng.permutation(np.arange(2, 2 + budget)).tolist()
    phrases: list[list[list[int]]] = []
    cursor = 0
    for ls in lengths:
        row = []
        for L in ls:
            row.append([int(t) for t in ids[cursor:cursor + L]])
            cursor += L
        phrases.append(row)
    filler_ids = np.arange(2 + budget, spec.vocab_size)
    return phrases, filler_ids


def _filler_probs(spec: SyntheticSpec, filler_ids: np.ndarray) -> np.ndarray:
    if spec.filler == "uniform":
        return np.full(filler_ids.shape[0], 1.0 / filler_ids.shape[0])
    ranks = np.arange(1, filler_ids.shape[0] + 1, dtype=float)
    w = 1.0 / ranks
    return w / w.sum()


def _place(rng: np.random.Generator, length: int, taken: np.ndarray, size: int) -> int | None:
    """A start offset where ``size`` tokens fit without touching taken slots."""
    starts = [
        s for s in range(0, length - size + 1)
        if not taken[s:s + size].any()
    ]
    if not starts:
        return None
    return int(rng.choice(starts))


def _mint(spec: SyntheticSpec, rng: np.random.Generator,
          phrases, filler_ids, filler_p) -> Instance:
    n = int(rng.integers(spec.seq_len[0], spec.seq_len[1] + 1))
    tokens = rng.choice(filler_ids, size=n, p=filler_p).astype(int).tolist()
    taken = np.zeros(n, dtype=bool)

    if spec.regression:
        pos_pool = [t for ph in phrases[0] for t in ph]
        neg_pool = [t for ph in phrases[1] for t in ph]
        L = int(rng.integers(spec.keyphrase_len[0], spec.keyphrase_len[1] + 1))
        n_pos = int(rng.integers(0, L + 1))
        phrase = [int(rng.choice(pos_pool)) for _ in range(n_pos)]
        phrase += [int(rng.choice(neg_pool)) for _ in range(L - n_pos)]
        rng.shuffle(phrase)
        start = _place(rng, n, taken, L)
        tokens[start:start + L] = phrase
        taken[start:start + L] = True
        mask = [0] * n
        mask[start:start + L] = [1] * L
        return Instance(tokens=tokens, label=n_pos / L, gold_mask=mask)

    label = int(rng.integers(0, spec.num_classes))
    if spec.stray_rate > 0.0:
        # Sprinkle lone keyphrase tokens into the filler.  A single such
        # token is then weak evidence for its class (it could be a stray),
        # while a complete consecutive phrase stays conclusive, so minimal
        # sufficient rationales are genuinely multi-token.
        family = np.asarray([t for row in phrases for ph in row for t in ph])
        stray = rng.random(n) < spec.stray_rate
        if stray.any():
            picks = rng.choice(family, size=int(stray.sum())).astype(int)
            for where, tok in zip(np.flatnonzero(stray), picks):
                tokens[int(where)] = int(tok)
    phrase = list(phrases[label][int(rng.integers(0, len(phrases[label])))])
    start = _place(rng, n, taken, len(phrase))
    tokens[start:start + len(phrase)] = phrase
    taken[start:start + len(phrase)] = True
    mask = [0] * n
    mask[start:start + len(phrase)] = [1] * len(phrase)

    if rng.random() < spec.noise_rate:
        other = int(rng.integers(0, spec.num_classes - 1))
        if other >= label:
            other += 1
        full = phrases[other][int(rng.integers(0, len(phrases[other])))]
        if len(full) > 1:
            # Strict suffix: the distractor never carries the other
            # phrase's opening token, so phrase openings stay decisive
            # and the label stays unambiguous.
            cut = int(rng.integers(1, len(full)))
            tail = list(full[-cut:])
            at = _place(rng, n, taken, len(tail))
            if at is not None:
                tokens[at:at + len(tail)] = tail
    return Instance(tokens=tokens, label=label, gold_mask=mask)


def _sole_complete_phrase(inst: Instance, phrases) -> bool:
    """True iff the planted span is the only complete keyphrase occurrence.

    Strays and distractor suffixes may, rarely, line up into a full phrase
    of some class; such instances would have ambiguous labels or gold
    masks and are discarded.
    """
    toks = inst.tokens
    mask = inst.gold_mask
    start = mask.index(1)
    length = sum(mask)
    for row in phrases:
        for ph in row:
            L = len(ph)
            for s in range(len(toks) - L + 1):
                if toks[s:s + L] == ph and not (s == start and L == length):
                    return False
    return True


def generate(spec: SyntheticSpec) -> DatasetBundle:
    """Deterministically generate train/dev/test splits.

    Splits use sub-seeds derived from (seed, split index) and are kept
    instance-disjoint by token-sequence identity.
    """
    spec.validate()
    layout_rng = np.random.default_rng(spec.seed)
    phrases, filler_ids = _build_keyphrases(spec, layout_rng)
    filler_p = _filler_probs(spec, filler_ids)
    seen: set[tuple[int, ...]] = set()
    splits = []
    for split_idx, count in enumerate((spec.n_train, spec.n_dev, spec.n_test)):
        rng = np.random.default_rng([spec.seed, split_idx])
        out = []
        guard = 0
        while len(out) < count:
            inst = _mint(spec, rng, phrases, filler_ids, filler_p)
            key = tuple(inst.tokens)
            if key in seen or (
                not spec.regression and not _sole_complete_phrase(inst, phrases)
            ):
                guard += 1
                if guard > 50 * count:
                    raise DataError("could not generate enough distinct instances")
                continue
            seen.add(key)
            out.append(inst)
        splits.append(out)
    vocab = default_vocab(spec.vocab_size)
    return DatasetBundle(
        train=splits[0], dev=splits[1], test=splits[2],
        vocab=vocab, keyphrases=phrases, spec=spec,
    )


# ---------------------------------------------------------------------------
# file formats


@dataclass
class LoadReport:
    n_instances: int
    unk_substitutions: int


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path: str | Path) -> Vocab:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocabulary file not found: {path}")
    tokens = path.read_text(encoding="utf-8").splitlines()
    if len(tokens) < 2 or tokens[0] != PAD or tokens[1] != UNK:
        raise DataError(f"vocabulary {path} must start with {PAD!r} then {UNK!r}")
    if len(set(tokens)) != len(tokens):
        raise DataError(f"vocabulary {path} contains duplicate tokens")
    return Vocab(tokens)


def save_jsonl(instances: list[Instance], vocab: Vocab, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            row: dict = {
                "tokens": [vocab.tokens[t] for t in inst.tokens],
                "label": inst.label,
            }
            if inst.gold_mask is not None:
                row["rationale"] = list(inst.gold_mask)
            fh.write(json.dumps(row) + "\n")


def load_jsonl(path: str | Path, vocab: Vocab) -> tuple[list[Instance], LoadReport]:
    """Read a JSONL corpus; unknown token strings map to the unk id.

    Malformed lines raise DataError naming the line number (1-based).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    instances: list[Instance] = []
    unk_count = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from e
            if not isinstance(row, dict) or "tokens" not in row or "label" not in row:
                raise DataError(f"{path}: line {lineno}: needs 'tokens' and 'label'")
            toks = row["tokens"]
            if not isinstance(toks, list) or not toks or not all(isinstance(t, str) for t in toks):
                raise DataError(f"{path}: line {lineno}: 'tokens' must be a non-empty list of strings")
            ids = []
            for t in toks:
                i = vocab.id_of(t)
                if i == UNK_ID and t != UNK:
                    unk_count += 1
                ids.append(i)
            label = row["label"]
            if not isinstance(label, (int, float)) or isinstance(label, bool):
                raise DataError(f"{path}: line {lineno}: 'label' must be a number")
            mask = row.get("rationale")
            if mask is not None:
                if (not isinstance(mask, list) or len(mask) != len(ids)
                        or any(v not in (0, 1) for v in mask)):
                    raise DataError(
                        f"{path}: line {lineno}: 'rationale' must be 0/1 flags, one per token"
                    )
            instances.append(Instance(tokens=ids, label=label, gold_mask=mask))
    return instances, LoadReport(n_instances=len(instances), unk_substitutions=unk_count)


def save_bundle(bundle: DatasetBundle, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {
        "train": out / "train.jsonl",
        "dev": out / "dev.jsonl",
        "test": out / "test.jsonl",
        "vocab": out / "vocab.txt",
    }
    save_vocab(bundle.vocab, paths["vocab"])
    save_jsonl(bundle.train, bundle.vocab, paths["train"])
    save_jsonl(bundle.dev, bundle.vocab, paths["dev"])
    save_jsonl(bundle.test, bundle.vocab, paths["test"])
    return paths


def labels_of(instances: list[Instance], mode: str) -> np.ndarray:
    if mode == "classification":
        for inst in instances:
            if not float(inst.label).is_integer():
                raise ContractViolation(
                    f"classification corpus contains non-integer label {inst.label!r}"
                )
        return np.asarray([int(i.label) for i in instances], dtype=np.int64)
    return np.asarray([float(i.label) for i in instances], dtype=float)
