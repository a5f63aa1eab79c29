import json

import pytest
from hypothesis import given, settings, strategies as st

from tweetmisinfo import textnorm as tn
from tweetmisinfo.errors import DataError, EmptyAfterNormalization, UnknownLabel

VANILLA = tn.NormalizationConfig(tn.Mode.VANILLA)
COVID = tn.NormalizationConfig(tn.Mode.COVID_BERT)
CANON = [tn.NormalizationConfig(m, canonicalize_keywords=True) for m in tn.Mode]

CORPUS = [
    "@john Check https://t.co/x",
    "#StayHome NOW soooo scared",
    "korona and five g towers",
    "5G causes COVID19!!! Wake up sheeple #5GKills #COVID19",
    "Mail me at someone@example.com or call +1 555-123-4567 :)",
    "no no no no NO NO this is f**k crazy ....",
    "The Wuhan virus and SARS CoV2 / nCoV are the same #coronavirus",
    "BREAKING: www.fake-news.example/5g-covid proves it",
    "I   can't believe it's not butter... #NotButter_Really",
    "Ünïcödé CAFÉ façade — naïve résumé 😀😀😀",
    "5 g 5 g 5 g fiveg FiveG",
    "sooo sooo soooooo good",
    "#NoNoNo <hashtag> literal </hashtag>",
    "RT @user_1: Retweet this!!!1 http://bit.ly/abc",
    "corona corona korona virus",
    "numbers 1234567 and 123-4567 and 3.14 and 42",
    "#2020202020 #a1b2C3 #___",
    "yesss YESSS yes",
    "#FiveG tower #5G mast",
]


@pytest.mark.parametrize(
    "text, config, expected",
    [
        ("@john Check https://t.co/x", VANILLA, ["check"]),
        ("@john Check https://t.co/x", COVID, ["twitteruser", "check", "twitterurl"]),
        (
            "#StayHome NOW soooo scared",
            VANILLA,
            ["<hashtag>", "stay", "home", "</hashtag>", "now", "<allcaps>", "soo", "<elongated>", "scared"],
        ),
    ],
)
def test_examples(text, config, expected):
    assert tn.normalize(tn.Tweet("1", text), config) == expected


@pytest.mark.parametrize("config", CANON, ids=lambda c: c.mode.value)
def test_keyword_canonicalization(config):
    assert tn.normalize("korona and five g towers", config) == ["coronavirus", "and", "5g", "towers"]


def test_vanilla_annotations():
    assert tn.normalize("no no no maybe", VANILLA) == ["no", "<repeated>", "maybe"]
    assert tn.normalize("what the f**k", VANILLA) == ["what", "the", "<censored>"]
    assert tn.normalize("hi someone@example.com 555-123-4567", VANILLA) == ["hi"]
    assert tn.normalize("Hello, World!!!", VANILLA) == ["hello", "world"]
    assert tn.normalize("#COVID19Vaccine", VANILLA) == ["<hashtag>", "covid", "19", "vaccine", "</hashtag>"]
    assert tn.normalize("I am OK", VANILLA) == ["i", "am", "ok", "<allcaps>"]


def test_covid_mode_keeps_punctuation_and_hashtag_text():
    assert tn.normalize("#StayHome, mail a@b.com!", COVID) == ["stayhome", ",", "mail", "email", "!"]
    assert tn.normalize("don't panic", COVID) == ["don't", "panic"]


def test_custom_replacement_tokens():
    cfg = tn.NormalizationConfig(tn.Mode.COVID_BERT, user_token="@user", url_token="http")
    assert tn.normalize("@a see https://x.y", cfg) == ["@user", "see", "http"]


def test_strip_annotations_flag():
    cfg = tn.NormalizationConfig(keep_annotations=False)
    assert tn.normalize("#StayHome NOW soooo scared", cfg) == ["stay", "home", "now", "soo", "scared"]


def test_empty_after_normalization():
    with pytest.raises(EmptyAfterNormalization):
        tn.normalize(tn.Tweet("x", "@john https://t.co/abc !!!"), VANILLA)


@pytest.mark.parametrize(
    "tokens, text", [(["a", "b"], "a b"), ([], ""), (["twitteruser", "check"], "twitteruser check")]
)
def test_detokenize(tokens, text):
    assert tn.detokenize(tokens) == text


def _idempotent(text, config):
    try:
        first = tn.normalize(text, config)
    except EmptyAfterNormalization:
        return
    assert tn.normalize(tn.detokenize(first), config) == first


ALL_CONFIGS = [VANILLA, COVID, *CANON]


@pytest.mark.parametrize("config", ALL_CONFIGS, ids=lambda c: f"{c.mode.value}-{c.canonicalize_keywords}")
@pytest.mark.parametrize("text", CORPUS)
def test_idempotent_on_corpus(text, config):
    _idempotent(text, config)


tweetish = st.lists(
    st.one_of(
        st.sampled_from(
            ["NO", "no", "soooo", "f**k", "#StayHome", "#NoNoNo", "@bob", "http://x.co/a", "a@b.io",
             "5", "g", "five", "korona", "sars", "cov2", "<hashtag>", "<repeated>", "!!!", "'", "1234567",
             "COVID19", "Ünï", "😀", "...", "#FiveG", "—", "can't", "wuhan", "virus", "*"]
        ),
        st.text(alphabet="abcABC123#@*'.!-_ ", min_size=1, max_size=8),
    ),
    min_size=1,
    max_size=14,
).map(" ".join)


@settings(max_examples=400, deadline=None)
@given(text=tweetish, config=st.sampled_from(ALL_CONFIGS))
def test_idempotent_property(text, config):
    _idempotent(text, config)


@settings(max_examples=200, deadline=None)
@given(text=tweetish, config=st.sampled_from(ALL_CONFIGS))
def test_no_uppercase_outside_annotations(text, config):
    try:
        tokens = tn.normalize(text, config)
    except EmptyAfterNormalization:
        return
    assert all(t == t.lower() for t in tokens if t not in tn.ANNOTATIONS)
    assert all(t and not any(ch.isspace() for ch in t) for t in tokens)


@settings(max_examples=200, deadline=None)
@given(text=tweetish)
def test_covid_mode_token_count(text):
    if not text.strip():
        return
    tokens = tn.normalize(text, COVID)
    assert len(tokens) >= len(text.split())


VARIANTS = [("sars", "cov2"), ("wuhan", "virus"), ("ncov",), ("korona",), ("koronavirus",),
            ("five", "g"), ("fiveg",), ("5", "g")]


def _contains(tokens, phrase):
    n = len(phrase)
    return any(tuple(tokens[i : i + n]) == phrase for i in range(len(tokens) - n + 1))


@settings(max_examples=300, deadline=None)
@given(text=tweetish, config=st.sampled_from(CANON))
def test_canonicalization_removes_variants(text, config):
    try:
        tokens = tn.normalize(text, config)
    except EmptyAfterNormalization:
        return
    assert not any(_contains(tokens, v) for v in VARIANTS)


@pytest.mark.parametrize("text", CORPUS)
def test_canonical_corpus_has_no_variants(text):
    for config in CANON:
        tokens = tn.normalize(text, config)
        assert not any(_contains(tokens, v) for v in VARIANTS)


def test_tweet_validation():
    with pytest.raises(DataError):
        tn.Tweet("", "text")
    with pytest.raises(DataError):
        tn.Tweet("a", "   ")
    with pytest.raises(UnknownLabel):
        tn.Tweet("a", "text", 7)
    assert tn.Tweet("a", "t", 1).label is tn.Label.OTHER


def test_read_write_dataset(tmp_path):
    tweets = [tn.Tweet("1", "hello", tn.Label.CONSPIRACY), tn.Tweet("2", "ünï world")]
    path = tmp_path / "d.jsonl"
    tn.write_dataset(tweets, path)
    assert list(tn.read_dataset(path)) == tweets


def test_read_dataset_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"id": "1", "text": "ok"}) + "\n{not json\n")
    with pytest.raises(DataError, match=":2:"):
        list(tn.read_dataset(bad))
    dup = tmp_path / "dup.jsonl"
    dup.write_text('{"id": "1", "text": "a"}\n{"id": "1", "text": "b"}\n')
    with pytest.raises(DataError, match="duplicate"):
        list(tn.read_dataset(dup))
