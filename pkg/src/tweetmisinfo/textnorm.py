"""Rule-based tweet normalization.

Two modes are provided. ``Mode.VANILLA`` removes URLs, e-mails, phone
numbers and user mentions, strips punctuation and annotates hashtags,
all-caps, elongated, censored and repeated words with tokens such as
``<hashtag>``. ``Mode.COVID_BERT`` lower-cases and replaces mentions,
URLs and e-mails with placeholder words while keeping punctuation.

Normative patterns (both modes):

* URL: ``scheme://...``, ``www....`` or ``t.co/...`` up to the next whitespace.
* e-mail: ``local@domain.tld``.
* mention: ``@`` followed by word characters.
* phone (vanilla only): a run of 7 or more digits, optionally separated by
  single ``-``, ``.``, ``(`` or ``)`` characters, not touching a word.

Both modes are idempotent: ``normalize(detokenize(normalize(t)))`` equals
``normalize(t)``.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

from .errors import DataError, EmptyAfterNormalization, UnknownLabel


class Label(enum.IntEnum):
    CONSPIRACY = 0
    OTHER = 1
    NON_CONSPIRACY = 2


@dataclass(frozen=True)
class Tweet:
    id: str
    text: str
    label: Optional[Label] = None

    def __post_init__(self):
        if not self.id:
            raise DataError("tweet id must be non-empty")
        if not self.text.strip():
            raise DataError(f"tweet {self.id!r} has empty text")
        if self.label is not None and not isinstance(self.label, Label):
            object.__setattr__(self, "label", to_label(self.label))


def to_label(value) -> Label:
    try:
        return Label(int(value))
    except (ValueError, TypeError):
        raise UnknownLabel(f"unknown label {value!r}") from None


class Mode(str, enum.Enum):
    VANILLA = "vanilla"
    COVID_BERT = "covid-bert"


@dataclass(frozen=True)
class NormalizationConfig:
    mode: Mode = Mode.VANILLA
    canonicalize_keywords: bool = False
    keep_annotations: bool = True
    user_token: str = "twitteruser"
    url_token: str = "twitterurl"
    email_token: str = "email"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))


HASHTAG_OPEN = "<hashtag>"
HASHTAG_CLOSE = "</hashtag>"
ALLCAPS = "<allcaps>"
ELONGATED = "<elongated>"
REPEATED = "<repeated>"
CENSORED = "<censored>"
ANNOTATIONS = frozenset([HASHTAG_OPEN, HASHTAG_CLOSE, ALLCAPS, ELONGATED, REPEATED, CENSORED])

_URL = r"(?:[a-zA-Z][a-zA-Z0-9+.\-]*://\S+|\bwww\.\S+|\bt\.co/\S*)"
_EMAIL = r"[\w.+\-]+@[\w\-]+(?:\.[\w\-]+)+"
_MENTION = r"@\w+"
_HASHTAG = r"#\w+"
_PHONE = r"(?<![\w.])\+?\(?\d(?:[\-.()]?\d){6,}(?!\w)"
_ANNOTATION = "|".join(re.escape(a) for a in sorted(ANNOTATIONS, key=len, reverse=True))

_VANILLA_RE = re.compile(
    rf"(?P<url>{_URL})|(?P<email>{_EMAIL})|(?P<mention>{_MENTION})|(?P<hashtag>{_HASHTAG})"
    rf"|(?P<phone>{_PHONE})|(?P<annotation>{_ANNOTATION})|(?P<word>(?:[^\W_]|[*'’])+)"
)
_COVID_RE = re.compile(
    rf"(?P<url>{_URL})|(?P<email>{_EMAIL})|(?P<mention>{_MENTION})|(?P<hashtag>{_HASHTAG})"
    r"|(?P<word>\w+(?:['’]\w+)*)|(?P<punct>\S)"
)
_ELONGATION = re.compile(r"([^\W\d_])\1{2,}")

# variant token phrases -> canonical token
KEYWORD_VARIANTS: Tuple[Tuple[Tuple[str, ...], str], ...] = (
    (("sars", "cov", "2"), "coronavirus"),
    (("sars", "cov2"), "coronavirus"),
    (("sarscov2",), "coronavirus"),
    (("wuhan", "virus"), "coronavirus"),
    (("ncov",), "coronavirus"),
    (("koronavirus",), "coronavirus"),
    (("korona",), "coronavirus"),
    (("corona",), "coronavirus"),
    (("five", "g"), "5g"),
    (("fiveg",), "5g"),
    (("5", "g"), "5g"),
)


@dataclass
class _Group:
    """One surface word plus the annotations attached to it."""

    base: str
    annotations: List[str] = field(default_factory=list)
    passthrough: bool = False

    def tokens(self):
        return [self.base, *self.annotations]


def _split_hashtag(body: str) -> List[str]:
    # camel-case and letter/digit boundaries only
    parts = []
    for chunk in body.split("_"):
        current = ""
        for i, ch in enumerate(chunk):
            if current:
                prev = current[-1]
                nxt = chunk[i + 1] if i + 1 < len(chunk) else ""
                boundary = (
                    prev.isdigit() != ch.isdigit()
                    or (prev.islower() and ch.isupper())
                    or (prev.isupper() and ch.isupper() and nxt.islower())
                )
                if boundary:
                    parts.append(current)
                    current = ""
            current += ch
        if current:
            parts.append(current)
    return parts


def _clean_word(word: str) -> str:
    return "".join(ch for ch in word.lower() if ch.isalnum())


def _is_allcaps(word: str) -> bool:
    letters = [ch for ch in word if ch.isalpha()]
    return len(letters) >= 2 and all(ch.isupper() for ch in letters)


def _is_phone(word: str) -> bool:
    return word.isdigit() and len(word) >= 7


def _vanilla_word(raw: str, allow_allcaps: bool = True) -> Optional[_Group]:
    if "*" in raw:
        if any(ch.isalnum() for ch in raw):
            return _Group(CENSORED)
        return None
    word = _clean_word(raw)
    if not word or _is_phone(word):
        return None
    group = _Group(word)
    if allow_allcaps and _is_allcaps(raw):
        group.annotations.append(ALLCAPS)
    collapsed = _ELONGATION.sub(r"\1\1", word)
    if collapsed != word:
        group.base = collapsed
        group.annotations.append(ELONGATED)
    return group


def _vanilla_groups(text: str) -> List[_Group]:
    groups: List[_Group] = []
    for m in _VANILLA_RE.finditer(text):
        kind = m.lastgroup
        if kind in ("url", "email", "mention", "phone"):
            continue
        if kind == "annotation":
            groups.append(_Group(m.group(), passthrough=True))
        elif kind == "hashtag":
            inner = []
            for part in _split_hashtag(m.group()[1:]):
                g = _vanilla_word(part, allow_allcaps=False)
                if g is not None:
                    inner.append(g)
            if inner:
                groups.append(_Group(HASHTAG_OPEN, passthrough=True))
                groups.extend(inner)
                groups.append(_Group(HASHTAG_CLOSE, passthrough=True))
        else:
            g = _vanilla_word(m.group())
            if g is not None:
                groups.append(g)
    return groups


def _covid_groups(text: str, config: NormalizationConfig) -> List[_Group]:
    groups = []
    for m in _COVID_RE.finditer(text.lower()):
        kind = m.lastgroup
        if kind == "url":
            tok = config.url_token
        elif kind == "email":
            tok = config.email_token
        elif kind == "mention":
            tok = config.user_token
        elif kind == "hashtag":
            tok = m.group()[1:]
        else:
            tok = m.group()
        groups.append(_Group(tok))
    return groups


def _canonicalize(groups: List[_Group]) -> List[_Group]:
    out = []
    i = 0
    while i < len(groups):
        for phrase, canonical in KEYWORD_VARIANTS:
            window = groups[i : i + len(phrase)]
            if len(window) == len(phrase) and all(
                not g.passthrough and g.base == w for g, w in zip(window, phrase)
            ):
                merged = _Group(canonical)
                for g in window:
                    merged.annotations.extend(a for a in g.annotations if a not in merged.annotations)
                out.append(merged)
                i += len(phrase)
                break
        else:
            out.append(groups[i])
            i += 1
    return out


def _collapse_repeats(groups: List[_Group]) -> List[_Group]:
    out = []
    i = 0
    while i < len(groups):
        g = groups[i]
        j = i + 1
        if not g.passthrough:
            while j < len(groups) and not groups[j].passthrough and groups[j].base == g.base:
                j += 1
        if j - i >= 3:
            out.append(_Group(g.base, g.annotations + [REPEATED]))
        else:
            out.extend(groups[i:j])
        i = j
    return out


def normalize(tweet, config: NormalizationConfig = NormalizationConfig()) -> List[str]:
    """Normalize a tweet (or raw string) into a token list.

    Raises EmptyAfterNormalization when every token was removed.
    """
    text = tweet.text if isinstance(tweet, Tweet) else tweet
    if config.mode is Mode.VANILLA:
        groups = _vanilla_groups(text)
    else:
        groups = _covid_groups(text, config)
    if config.canonicalize_keywords:
        groups = _canonicalize(groups)
    if config.mode is Mode.VANILLA:
        groups = _collapse_repeats(groups)
    tokens = [tok for g in groups for tok in g.tokens()]
    if not config.keep_annotations:
        tokens = strip_annotations(tokens)
    if not tokens:
        ident = tweet.id if isinstance(tweet, Tweet) else text[:40]
        raise EmptyAfterNormalization(f"no tokens left after normalizing {ident!r}")
    return tokens


def strip_annotations(tokens: Sequence[str]) -> List[str]:
    return [t for t in tokens if t not in ANNOTATIONS]


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def read_dataset(path) -> Iterator[Tweet]:
    """Yield tweets from a JSON-lines file (``id``, ``text``, optional ``label``)."""
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tweet = Tweet(str(obj["id"]), obj["text"], obj.get("label"))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from None
            except (DataError, TypeError, AttributeError) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from None
            if tweet.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {tweet.id!r}")
            seen.add(tweet.id)
            yield tweet


def write_dataset(tweets: Iterable[Tweet], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tweets:
            obj = {"id": t.id, "text": t.text}
            if t.label is not None:
                obj["label"] = int(t.label)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
