"""Lossless language-family-aware tokenization of source code."""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
NUMBER_RE = re.compile(r"[0-9][0-9A-Za-z_.]*")
WS_RE = re.compile(r"\s+")
OPERATOR_CHARS = set("+-*/%=<>!&|^~?:@$\\")
_CAMEL_RE = re.compile(r"([a-z0-9])([A-Z])")

KIND_IDENTIFIER = "identifier"
KIND_KEYWORD = "keyword"
KIND_STRING = "string_lit"
KIND_CHAR = "char_lit"
KIND_NUMBER = "number"
KIND_COMMENT = "comment"
KIND_OPERATOR = "operator"
KIND_PUNCTUATION = "punctuation"
KIND_WHITESPACE = "whitespace"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class LexerProfile:
    """Per-language lexing rules: keywords, comments, string syntax."""

    language: str
    keywords: frozenset
    line_comments: tuple = ("//",)
    block_comments: tuple = (("/*", "*/"),)
    # (delimiter, kind); longest delimiters must come first
    string_delimiters: tuple = (('"', KIND_STRING), ("'", KIND_CHAR))
    escape_char: str | None = "\\"


_C_KEYWORDS = frozenset(
    """auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while""".split()
)

_CPP_KEYWORDS = _C_KEYWORDS | frozenset(
    """bool catch class delete explicit export false friend mutable namespace
    new noexcept nullptr operator private protected public template this throw
    true try typeid typename using virtual constexpr decltype""".split()
)

_CSHARP_KEYWORDS = frozenset(
    """abstract as base bool break byte case catch char checked class const
    continue decimal default delegate do double else enum event explicit
    extern false finally fixed float for foreach goto if implicit in int
    interface internal is lock long namespace new null object operator out
    override params private protected public readonly ref return sbyte sealed
    short sizeof stackalloc static string struct switch this throw true try
    typeof uint ulong unchecked unsafe ushort using var virtual void volatile
    while""".split()
)

_GO_KEYWORDS = frozenset(
    """break case chan const continue default defer else fallthrough for func
    go goto if import interface map package range return select struct switch
    type var""".split()
)

_JS_KEYWORDS = frozenset(
    """async await break case catch class const continue debugger default
    delete do else export extends false finally for function if import in
    instanceof let new null of return static super switch this throw true try
    typeof undefined var void while with yield""".split()
)

_RUBY_KEYWORDS = frozenset(
    """BEGIN END alias and begin break case class def defined? do else elsif
    end ensure false for if in module next nil not or redo rescue retry return
    self super then true undef unless until when while yield puts
    require attr_accessor""".split()
)

_RUST_KEYWORDS = frozenset(
    """as async await break const continue crate dyn else enum extern false fn
    for if impl in let loop match mod move mut pub ref return self Self static
    struct super trait true type unsafe use where while""".split()
)

_PYTHON_KEYWORDS = frozenset(
    """False None True and as assert async await break class continue def del
    elif else except finally for from global if import in is lambda nonlocal
    not or pass print raise return try while with yield self""".split()
)

BUILTIN_PROFILES: dict[str, LexerProfile] = {
    "c": LexerProfile("c", _C_KEYWORDS),
    "cpp": LexerProfile("cpp", _CPP_KEYWORDS),
    "csharp": LexerProfile("csharp", _CSHARP_KEYWORDS),
    "go": LexerProfile(
        "go",
        _GO_KEYWORDS,
        string_delimiters=(("`", KIND_STRING), ('"', KIND_STRING), ("'", KIND_CHAR)),
    ),
    "javascript": LexerProfile(
        "javascript",
        _JS_KEYWORDS,
        string_delimiters=(
            ("`", KIND_STRING),
            ('"', KIND_STRING),
            ("'", KIND_STRING),
        ),
    ),
    "ruby": LexerProfile(
        "ruby",
        _RUBY_KEYWORDS,
        line_comments=("#",),
        block_comments=(("=begin", "=end"),),
        string_delimiters=(('"', KIND_STRING), ("'", KIND_STRING)),
    ),
    "rust": LexerProfile("rust", _RUST_KEYWORDS),
    "python": LexerProfile(
        "python",
        _PYTHON_KEYWORDS,
        line_comments=("#",),
        block_comments=(),
        string_delimiters=(
            ('"""', KIND_STRING),
            ("'''", KIND_STRING),
            ('"', KIND_STRING),
            ("'", KIND_STRING),
        ),
    ),
    "generic": LexerProfile(
        "generic",
        frozenset(
            """if else for while do return break continue switch case function
            def class struct var let const static void int float true false
            null""".split()
        ),
        line_comments=("//", "#"),
        string_delimiters=(('"', KIND_STRING), ("'", KIND_STRING)),
    ),
}


def profile_for(language: str) -> LexerProfile:
    """Look up a built-in profile; unknown languages get the generic one."""
    return BUILTIN_PROFILES.get(language.lower(), BUILTIN_PROFILES["generic"])


def load_profile(path) -> LexerProfile:
    """Load a LexerProfile from a JSON file."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return LexerProfile(
        language=data["language"],
        keywords=frozenset(data.get("keywords", [])),
        line_comments=tuple(data.get("line_comments", ["//"])),
        block_comments=tuple(tuple(p) for p in data.get("block_comments", [])),
        string_delimiters=tuple(
            (d, KIND_STRING) for d in data.get("string_delimiters", ['"'])
        )
        or (('"', KIND_STRING),),
        escape_char=data.get("escape_char", "\\"),
    )


def lex(source: str, profile: LexerProfile) -> list[Token]:
    """Tokenize source losslessly: concatenated token texts equal the input."""
    tokens: list[Token] = []
    i = 0
    n = len(source)

    def emit(kind, end):
        nonlocal i
        tokens.append(Token(kind, source[i:end], i, end))
        i = end

    while i < n:
        ch = source[i]

        matched = False
        for marker in profile.line_comments:
            if source.startswith(marker, i):
                end = source.find("\n", i)
                emit(KIND_COMMENT, n if end == -1 else end)
                matched = True
                break
        if matched:
            continue

        for start, stop in profile.block_comments:
            if source.startswith(start, i):
                end = source.find(stop, i + len(start))
                if end == -1:
                    warnings.warn(f"unterminated block comment at byte {i}")
                    emit(KIND_COMMENT, n)
                else:
                    emit(KIND_COMMENT, end + len(stop))
                matched = True
                break
        if matched:
            continue

        for delim, kind in profile.string_delimiters:
            if source.startswith(delim, i):
                j = i + len(delim)
                closed = False
                while j < n:
                    if profile.escape_char and source[j] == profile.escape_char:
                        j += 2
                        continue
                    if source.startswith(delim, j):
                        j += len(delim)
                        closed = True
                        break
                    j += 1
                if not closed:
                    warnings.warn(f"unterminated string at byte {i}")
                    j = n
                emit(kind, min(j, n))
                matched = True
                break
        if matched:
            continue

        m = WS_RE.match(source, i)
        if m:
            emit(KIND_WHITESPACE, m.end())
            continue

        m = IDENT_RE.match(source, i)
        if m:
            kind = (
                KIND_KEYWORD if m.group() in profile.keywords else KIND_IDENTIFIER
            )
            emit(kind, m.end())
            continue

        m = NUMBER_RE.match(source, i)
        if m:
            emit(KIND_NUMBER, m.end())
            continue

        if ch in OPERATOR_CHARS:
            j = i
            while j < n and source[j] in OPERATOR_CHARS:
                # stop if an operator run would swallow a comment opener
                if any(
                    source.startswith(mk, j) for mk in profile.line_comments
                ) and j > i:
                    break
                if any(
                    source.startswith(s, j) for s, _ in profile.block_comments
                ) and j > i:
                    break
                j += 1
            emit(KIND_OPERATOR, j)
            continue

        emit(KIND_PUNCTUATION, i + 1)

    return tokens


def identifier_occurrences(tokens: list[Token]) -> dict[str, list[int]]:
    """Map each identifier name to the token indices where it occurs."""
    occ: dict[str, list[int]] = {}
    for idx, tok in enumerate(tokens):
        if tok.kind == KIND_IDENTIFIER:
            occ.setdefault(tok.text, []).append(idx)
    return occ


def split_subtokens(name: str) -> list[str]:
    """Split an identifier on underscores and camelCase humps, lowercased."""
    spaced = _CAMEL_RE.sub(r"\1 \2", name.replace("_", " "))
    return [p.lower() for p in spaced.split() if p]


def content_tokens(tokens: list[Token], subtokens: bool = True) -> list[str]:
    """Lowercased term stream for retrieval: no whitespace, comments,
    operators, or punctuation; identifiers contribute subtokens too."""
    out: list[str] = []
    for tok in tokens:
        if tok.kind in (
            KIND_WHITESPACE,
            KIND_COMMENT,
            KIND_OPERATOR,
            KIND_PUNCTUATION,
        ):
            continue
        text = tok.text.lower()
        out.append(text)
        if subtokens and tok.kind == KIND_IDENTIFIER:
            parts = split_subtokens(tok.text)
            if len(parts) > 1:
                out.extend(parts)
    return out
