"""Tweet text normalization.

Pipeline: tweet-aware tokenization, URL/mention placeholders, emoji
translated to :alias: tokens from a versioned table, remaining non-ASCII
stripped. Placeholders and alias tokens are "keywords": they carry no
augmentable lexical content.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

URL_PLACEHOLDER = "HTTPURL"
MENTION_PLACEHOLDER = "@USER"

ALIAS_TABLE_RESOURCE = "resources/emoji_aliases_v1.tsv"

# Alternation order matters: URLs before punctuation (keeps "://" intact),
# alias tokens before single-char fallback (keeps ":fire:" whole on re-entry).
_TOKEN_RE = re.compile(
    r"""https?://\S+
      | www\.\S+
      | @\w+
      | \#\w+
      | :[a-z0-9_+\-]+:
      | [A-Za-z0-9]+(?:['’\-][A-Za-z0-9]+)*
      | [^\x00-\x7F]+
      | [^\sA-Za-z0-9]
    """,
    re.VERBOSE,
)

_URL_RE = re.compile(r"(?:https?://|www\.)", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+\Z")
_ALIAS_RE = re.compile(r":[a-z0-9_+\-]+:\Z")
_NON_ASCII_RUN_RE = re.compile(r"[^\x00-\x7F]+\Z")


@dataclass(frozen=True)
class PreprocessedText:
    """Token sequence plus a per-token keyword flag."""

    tokens: tuple[str, ...]
    keyword_mask: tuple[bool, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.keyword_mask):
            raise ValueError("keyword_mask length must equal tokens length")

    @property
    def joined(self) -> str:
        return " ".join(self.tokens)

    def non_keyword_count(self) -> int:
        return sum(1 for flag in self.keyword_mask if not flag)


class AliasTable:
    """Emoji codepoint-sequence to :alias: mapping, greedy longest match."""

    def __init__(self, entries: dict[str, str]):
        self._entries = dict(entries)
        self._max_len = max((len(seq) for seq in entries), default=1)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, seq: str) -> bool:
        return seq in self._entries

    def lookup(self, seq: str) -> str | None:
        return self._entries.get(seq)

    def translate_run(self, run: str) -> list[str]:
        """Translate a run of non-ASCII characters into alias tokens.

        Longest known sequence wins at each position; characters that start
        no known sequence are dropped (they would be removed by the
        non-ASCII filter anyway).
        """
        out: list[str] = []
        i = 0
        while i < len(run):
            match = None
            for end in range(min(len(run), i + self._max_len), i, -1):
                alias = self._entries.get(run[i:end])
                if alias is not None:
                    match = (alias, end)
                    break
            if match is None:
                i += 1
            else:
                out.append(match[0])
                i = match[1]
        return out


def parse_alias_table(text: str) -> AliasTable:
    """Parse the table format: one `codepoint-sequence<TAB>:alias:` per line."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        try:
            seq, alias = line.split("\t")
        except ValueError:
            raise ValueError(f"alias table line {lineno}: expected two tab-separated fields")
        if not _ALIAS_RE.fullmatch(alias):
            raise ValueError(f"alias table line {lineno}: bad alias {alias!r}")
        entries[seq] = alias
    return AliasTable(entries)


_default_table: AliasTable | None = None


def default_alias_table() -> AliasTable:
    global _default_table
    if _default_table is None:
        text = resources.files("threadforge").joinpath(ALIAS_TABLE_RESOURCE).read_text("utf-8")
        _default_table = parse_alias_table(text)
    return _default_table


def is_keyword(token: str) -> bool:
    """True for the URL/mention placeholders and :alias:-shaped tokens.

    The alias pattern requires at least one non-digit name character so
    time-of-day fragments like ":45:" do not count.
    """
    if token in (URL_PLACEHOLDER, MENTION_PLACEHOLDER):
        return True
    return bool(_ALIAS_RE.fullmatch(token)) and not token[1:-1].isdigit()


def normalize_tweet(text: str, alias_table: AliasTable | None = None) -> PreprocessedText:
    """Normalize raw tweet text into tokens with a keyword mask.

    Steps, in order: tokenize; URL tokens -> HTTPURL; @mentions -> @USER;
    emoji -> :alias: tokens; remaining non-ASCII characters removed; empty
    tokens dropped.
    """
    table = alias_table if alias_table is not None else default_alias_table()
    tokens: list[str] = []
    mask: list[bool] = []
    for tok in _TOKEN_RE.findall(text):
        if _URL_RE.match(tok):
            tokens.append(URL_PLACEHOLDER)
            mask.append(True)
        elif _MENTION_RE.fullmatch(tok):
            tokens.append(MENTION_PLACEHOLDER)
            mask.append(True)
        elif is_keyword(tok):
            tokens.append(tok)
            mask.append(True)
        elif _NON_ASCII_RUN_RE.fullmatch(tok):
            for alias in table.translate_run(tok):
                tokens.append(alias)
                mask.append(True)
        else:
            cleaned = tok.encode("ascii", "ignore").decode("ascii")
            if cleaned:
                tokens.append(cleaned)
                mask.append(is_keyword(cleaned))
    return PreprocessedText(tuple(tokens), tuple(mask))
