"""Cleaning, vocabulary construction, and sequence encoding contracts."""

import numpy as np
import pytest

from mtlid.preprocess import (
    ARABIC_DIACRITICS,
    CLS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    UNK_ID,
    build_vocab,
    clean_text,
    decode,
    encode,
    load_vocab,
    repad,
    save_vocab,
    stack_sequences,
)

ARABIC_LETTERS = [chr(c) for c in range(0x0621, 0x064B)]


def random_arabic_text(rng: np.random.Generator, with_mentions: bool = False) -> str:
    pool = ARABIC_LETTERS + sorted(ARABIC_DIACRITICS) + list(" " * 8) + list("abc123")
    chars = [pool[int(i)] for i in rng.integers(0, len(pool), size=int(rng.integers(0, 40)))]
    if with_mentions and rng.random() < 0.5:
        chars.insert(int(rng.integers(0, len(chars) + 1)), " @user ")
    return "".join(chars)


# ---------------------------------------------------------------------------
# clean_text
# ---------------------------------------------------------------------------


def test_clean_mention_and_diacritic():
    assert clean_text("@user123 مرحباً") == "USER مرحبا"


def test_clean_no_op_without_targets():
    assert clean_text("لا diacritics here") == "لا diacritics here"


def test_clean_multiple_mentions_and_marks():
    assert clean_text("@a @b نصٌّ") == "USER USER نص"


def test_clean_order_mentions_before_diacritics():
    # the mark ends the mention match; the diacritics pass then removes it
    assert clean_text("@abً") == "USER"


def test_clean_bare_at_sign_kept():
    assert clean_text("@ @@") == "@ @@"


def test_clean_idempotent_on_random_strings():
    rng = np.random.default_rng(17)
    for _ in range(2000):
        text = random_arabic_text(rng, with_mentions=True)
        once = clean_text(text)
        assert clean_text(once) == once


def test_clean_removes_exactly_the_declared_set():
    rng = np.random.default_rng(23)
    for _ in range(2000):
        text = random_arabic_text(rng, with_mentions=False)
        expected = "".join(ch for ch in text if ch not in ARABIC_DIACRITICS)
        assert clean_text(text) == expected


def test_clean_full_arabic_block_scan():
    # exactly U+064B..U+065F, U+0670 and U+0640 disappear; everything else stays
    for cp in range(0x0600, 0x0700):
        ch = chr(cp)
        out = clean_text(f"ب{ch}")
        if ch in ARABIC_DIACRITICS:
            assert out == "ب", hex(cp)
        else:
            assert out == f"ب{ch}", hex(cp)


# ---------------------------------------------------------------------------
# build_vocab
# ---------------------------------------------------------------------------


def test_build_vocab_basic_ranking():
    vocab = build_vocab(["a a b"], min_frequency=1, max_size=100)
    assert vocab.id_to_token == ["[PAD]", "[UNK]", "[CLS]", "a", "b"]
    assert vocab.token_to_id == {"a": 3, "b": 4}


def test_build_vocab_min_frequency_threshold():
    vocab = build_vocab(["a a b"], min_frequency=2, max_size=100)
    assert vocab.token_to_id == {"a": 3}


def test_build_vocab_tie_breaks_lexicographically():
    vocab = build_vocab(["y x"], min_frequency=1, max_size=100)
    assert vocab.token_to_id["x"] == 3
    assert vocab.token_to_id["y"] == 4


def test_build_vocab_max_size_truncates():
    vocab = build_vocab(["a a a b b c"], min_frequency=1, max_size=5)
    assert len(vocab) == 5
    assert "c" not in vocab.token_to_id


def test_build_vocab_empty_corpus_rejected():
    with pytest.raises(ValueError, match="empty corpus"):
        build_vocab([], min_frequency=1, max_size=10)


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------


@pytest.fixture
def small_vocab():
    return build_vocab(["a a b"], min_frequency=1, max_size=100)


def test_encode_empty_text(small_vocab):
    seq = encode("", small_vocab, l_max=4)
    assert list(seq.ids) == [CLS_ID, PAD_ID, PAD_ID, PAD_ID]
    assert seq.true_length == 1
    assert list(seq.mask) == [True, False, False, False]


def test_encode_known_tokens(small_vocab):
    seq = encode("a b", small_vocab, l_max=4)
    assert list(seq.ids) == [2, 3, 4, 0]
    assert list(seq.mask) == [True, True, True, False]


def test_encode_truncates_long_text(small_vocab):
    text = " ".join(["a"] * 100)
    seq = encode(text, small_vocab, l_max=8)
    assert seq.true_length == 8
    assert list(seq.ids) == [CLS_ID] + [3] * 7  # 7th input token is last kept


def test_encode_unknown_token_is_unk(small_vocab):
    seq = encode("zzz", small_vocab, l_max=4)
    assert seq.ids[1] == UNK_ID


def test_encode_requires_width_two(small_vocab):
    with pytest.raises(ValueError):
        encode("a", small_vocab, l_max=1)


def test_encode_mask_is_prefix(small_vocab):
    rng = np.random.default_rng(5)
    tokens = ["a", "b", "zz"]
    for _ in range(200):
        text = " ".join(tokens[int(i)] for i in rng.integers(0, 3, size=int(rng.integers(0, 12))))
        seq = encode(text, small_vocab, l_max=6)
        m = list(seq.mask)
        assert m == sorted(m, reverse=True)  # True prefix then False
        assert seq.ids[0] == CLS_ID and seq.mask[0]
        assert all(i == PAD_ID for i, keep in zip(seq.ids, seq.mask) if not keep)


def test_decode_reencode_stability(small_vocab):
    rng = np.random.default_rng(9)
    for _ in range(200):
        text = " ".join(["a", "b"][int(i)] for i in rng.integers(0, 2, size=int(rng.integers(0, 5))))
        seq = encode(text, small_vocab, l_max=8)
        again = encode(" ".join(decode(seq, small_vocab)), small_vocab, l_max=8)
        assert np.array_equal(seq.ids, again.ids)


def test_stack_sequences_shapes(small_vocab):
    seqs = [encode("a", small_vocab, 4), encode("b b", small_vocab, 4)]
    ids, mask = stack_sequences(seqs)
    assert ids.shape == (2, 4) and mask.shape == (2, 4)
    assert ids.dtype == np.int64 and mask.dtype == np.bool_


def test_repad_preserves_tokens(small_vocab):
    seq = encode("a b", small_vocab, 4)
    wide = repad(seq, 9)
    assert wide.true_length == seq.true_length
    assert np.array_equal(wide.ids[:4], seq.ids)
    assert not wide.mask[3:].any()


# ---------------------------------------------------------------------------
# vocabulary file
# ---------------------------------------------------------------------------


def test_vocab_file_round_trip(tmp_path, small_vocab):
    path = tmp_path / "vocab.txt"
    save_vocab(small_vocab, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert tuple(lines[:3]) == RESERVED_TOKENS
    assert lines[3] == "a"  # line 4 holds id 3
    loaded = load_vocab(path)
    assert loaded.id_to_token == small_vocab.id_to_token
    assert loaded.token_to_id == small_vocab.token_to_id


def test_vocab_file_rejects_bad_header(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("[PAD]\n[CLS]\n[UNK]\na\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_vocab(path)
