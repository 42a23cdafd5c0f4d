"""Synthetic corpus generation and corpus file formats."""

import json

import numpy as np
import pytest

from ratext.data import (
    PAD,
    PAD_ID,
    UNK,
    UNK_ID,
    Instance,
    SyntheticSpec,
    Vocab,
    default_vocab,
    generate,
    labels_of,
    load_jsonl,
    load_vocab,
    save_bundle,
    save_jsonl,
    save_vocab,
)
from ratext.errors import ConfigError, ContractViolation, DataError

SMALL = SyntheticSpec(vocab_size=80, num_classes=3, keyphrases_per_class=2,
                      keyphrase_len=(2, 3), seq_len=(9, 14), noise_rate=0.4,
                      stray_rate=0.2, n_train=120, n_dev=30, n_test=30, seed=5)


@pytest.fixture(scope="module")
def bundle():
    return generate(SMALL)


def occurrences(tokens: list[int], phrase: list[int]) -> list[int]:
    L = len(phrase)
    return [s for s in range(len(tokens) - L + 1) if tokens[s:s + L] == phrase]


def test_generation_is_deterministic(bundle):
    again = generate(SMALL)
    for a, b in zip(bundle.train + bundle.dev + bundle.test,
                    again.train + again.dev + again.test):
        assert a.tokens == b.tokens and a.label == b.label and a.gold_mask == b.gold_mask
    assert bundle.keyphrases == again.keyphrases


def test_split_sizes_and_lengths(bundle):
    assert (len(bundle.train), len(bundle.dev), len(bundle.test)) == (120, 30, 30)
    for inst in bundle.train:
        assert SMALL.seq_len[0] <= len(inst.tokens) <= SMALL.seq_len[1]
        assert len(inst.gold_mask) == len(inst.tokens)


def test_splits_are_disjoint(bundle):
    keys = [tuple(i.tokens) for split in (bundle.train, bundle.dev, bundle.test)
            for i in split]
    assert len(keys) == len(set(keys))


def test_keyphrase_pools_are_class_disjoint(bundle):
    sets = [set(t for ph in row for t in ph) for row in bundle.keyphrases]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            assert not sets[i] & sets[j]
    for row in bundle.keyphrases:
        for ph in row:
            assert all(t >= 2 for t in ph)


def test_gold_mask_is_one_planted_phrase(bundle):
    label_phrases = [[list(p) for p in row] for row in bundle.keyphrases]
    for inst in bundle.train:
        ones = [i for i, v in enumerate(inst.gold_mask) if v]
        assert ones, "every instance plants a rationale"
        assert ones[-1] - ones[0] + 1 == len(ones), "gold span is consecutive"
        span = inst.tokens[ones[0]:ones[-1] + 1]
        assert span in label_phrases[inst.label]


def test_planted_phrase_is_the_only_complete_one(bundle):
    """Distractor suffixes and stray tokens never assemble a second
    complete keyphrase, so the label and gold span stay unambiguous."""
    for inst in bundle.train + bundle.dev + bundle.test:
        start = inst.gold_mask.index(1)
        size = sum(inst.gold_mask)
        hits = [
            (s, len(ph))
            for row in bundle.keyphrases for ph in row
            for s in occurrences(inst.tokens, list(ph))
        ]
        assert hits == [(start, size)]


def test_lookup_on_gold_tokens_labels_everything(bundle):
    table = {tuple(ph): c for c, row in enumerate(bundle.keyphrases) for ph in row}
    for inst in bundle.test:
        span = tuple(t for t, m in zip(inst.tokens, inst.gold_mask) if m)
        assert table[span] == inst.label


def test_strays_appear_outside_gold_spans(bundle):
    family = {t for row in bundle.keyphrases for ph in row for t in ph}
    loose = sum(
        1
        for inst in bundle.train
        for t, m in zip(inst.tokens, inst.gold_mask)
        if not m and t in family
    )
    assert loose > 50, "stray keyphrase tokens should be common at rate 0.2"


def test_clean_spec_keeps_keyphrase_tokens_inside_gold():
    spec = SyntheticSpec(vocab_size=80, num_classes=3, keyphrase_len=(2, 3),
                         seq_len=(9, 14), noise_rate=0.0, stray_rate=0.0,
                         n_train=60, n_dev=10, n_test=10, seed=5)
    b = generate(spec)
    family = {t for row in b.keyphrases for ph in row for t in ph}
    for inst in b.train:
        for t, m in zip(inst.tokens, inst.gold_mask):
            if not m:
                assert t not in family


def test_regression_scores_are_pool_fractions():
    spec = SyntheticSpec(vocab_size=80, regression=True, keyphrase_len=(2, 4),
                         seq_len=(10, 15), n_train=80, n_dev=10, n_test=10, seed=3)
    b = generate(spec)
    pos = {t for ph in b.keyphrases[0] for t in ph}
    neg = {t for ph in b.keyphrases[1] for t in ph}
    for inst in b.train:
        span = [t for t, m in zip(inst.tokens, inst.gold_mask) if m]
        assert span and all(t in pos | neg for t in span)
        assert inst.label == pytest.approx(sum(t in pos for t in span) / len(span))
        assert 0.0 <= inst.label <= 1.0


def test_zipf_filler_prefers_early_ids():
    flat = SyntheticSpec(vocab_size=120, seq_len=(12, 18), noise_rate=0.0,
                         stray_rate=0.0, n_train=300, n_dev=10, n_test=10,
                         filler="zipf", seed=2)
    b = generate(flat)
    filler_lo = min(t for inst in b.train
                    for t, m in zip(inst.tokens, inst.gold_mask) if not m)
    counts = np.zeros(120)
    for inst in b.train:
        for t, m in zip(inst.tokens, inst.gold_mask):
            if not m:
                counts[t] += 1
    half = filler_lo + (120 - filler_lo) // 2
    assert counts[filler_lo:half].sum() > 2 * counts[half:].sum()


@pytest.mark.parametrize("field, value", [
    ("keyphrase_len", (3, 2)),
    ("keyphrase_len", (0, 2)),
    ("seq_len", (8, 5)),
    ("seq_len", (3, 20)),
    ("num_classes", 1),
    ("noise_rate", 1.5),
    ("stray_rate", 0.8),
    ("stray_rate", -0.1),
    ("filler", "gaussian"),
    ("vocab_size", 20),
    ("n_train", 0),
])
def test_bad_specs_are_rejected(field, value):
    spec = SyntheticSpec(**{field: value})
    with pytest.raises(ConfigError):
        spec.validate()


# ---------------------------------------------------------------------------
# vocabulary and file formats


def test_default_vocab_layout():
    v = default_vocab(10)
    assert v.tokens[:2] == [PAD, UNK]
    assert len(v) == 10
    assert v.id_of("w5") == 5
    assert v.id_of("never-seen") == UNK_ID


def test_vocab_requires_reserved_head():
    with pytest.raises(DataError):
        Vocab(["a", "b", "c"])


def test_vocab_file_round_trip(tmp_path):
    v = default_vocab(12)
    path = tmp_path / "vocab.txt"
    save_vocab(v, path)
    assert load_vocab(path).tokens == v.tokens


def test_vocab_file_rejects_duplicates_and_bad_head(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text(f"{PAD}\n{UNK}\nw2\nw2\n")
    with pytest.raises(DataError):
        load_vocab(path)
    path.write_text("w0\nw1\n")
    with pytest.raises(DataError):
        load_vocab(path)
    with pytest.raises(DataError):
        load_vocab(tmp_path / "missing.txt")


def test_jsonl_round_trip(tmp_path, bundle):
    path = tmp_path / "train.jsonl"
    save_jsonl(bundle.train, bundle.vocab, path)
    back, report = load_jsonl(path, bundle.vocab)
    assert report.n_instances == len(bundle.train)
    assert report.unk_substitutions == 0
    for a, b in zip(bundle.train, back):
        assert a.tokens == b.tokens and a.label == b.label and a.gold_mask == b.gold_mask


def test_unknown_tokens_are_counted(tmp_path):
    v = default_vocab(6)
    path = tmp_path / "c.jsonl"
    rows = [
        {"tokens": ["w2", "mystery", "w3"], "label": 0},
        {"tokens": ["alien"], "label": 1},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    insts, report = load_jsonl(path, v)
    assert insts[0].tokens == [2, UNK_ID, 3]
    assert insts[1].tokens == [UNK_ID]
    assert report.unk_substitutions == 2


@pytest.mark.parametrize("line, fragment", [
    ("{broken", "invalid JSON"),
    ('{"tokens": ["w2"]}', "needs 'tokens' and 'label'"),
    ('{"tokens": [], "label": 0}', "non-empty list"),
    ('{"tokens": [3], "label": 0}', "list of strings"),
    ('{"tokens": ["w2"], "label": "pos"}', "must be a number"),
    ('{"tokens": ["w2"], "label": true}', "must be a number"),
    ('{"tokens": ["w2"], "label": 0, "rationale": [1, 0]}', "one per token"),
    ('{"tokens": ["w2"], "label": 0, "rationale": [2]}', "0/1 flags"),
])
def test_malformed_lines_name_the_line(tmp_path, line, fragment):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"tokens": ["w2"], "label": 0}\n' + line + "\n")
    with pytest.raises(DataError, match="line 2") as err:
        load_jsonl(path, default_vocab(6))
    assert fragment in str(err.value)


def test_missing_corpus_file(tmp_path):
    with pytest.raises(DataError):
        load_jsonl(tmp_path / "nope.jsonl", default_vocab(6))


def test_bundle_writes_all_files(tmp_path, bundle):
    paths = save_bundle(bundle, tmp_path)
    for key in ("train", "dev", "test", "vocab"):
        assert paths[key].exists()
    back, _ = load_jsonl(paths["dev"], load_vocab(paths["vocab"]))
    assert len(back) == len(bundle.dev)


def test_labels_of_checks_mode():
    insts = [Instance([2], 1), Instance([3], 0)]
    assert labels_of(insts, "classification").dtype == np.int64
    got = labels_of([Instance([2], 0.75)], "regression")
    assert got.dtype == float and got[0] == 0.75
    with pytest.raises(ContractViolation):
        labels_of([Instance([2], 0.5)], "classification")


def test_pad_id_is_zero():
    assert PAD_ID == 0 and UNK_ID == 1
