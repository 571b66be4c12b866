"""Token dictionaries for dates and ages, and string <-> token conversion."""
from __future__ import annotations

import calendar
import re
from dataclasses import dataclass

MONTHS = (
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
)

# surface month names -> month number; English and Danish, full and abbreviated
MONTH_NAMES: dict[str, int] = {}
for _i, _m in enumerate(MONTHS, 1):
    MONTH_NAMES[_m.lower()] = _i
    MONTH_NAMES[_m[:3].lower()] = _i
MONTH_NAMES.update({"sept": 9})
for _i, _m in enumerate(
    ("januar", "februar", "marts", "april", "maj", "juni", "juli", "august", "september", "oktober", "november", "december"),
    1,
):
    MONTH_NAMES[_m] = _i
MONTH_NAMES.update({"okt": 10, "mrt": 3})

DATE_T = 11
AGE_T = 4

START, END, PAD = "<Start>", "<End>", "<Padding>"
DMS, MYS = "<DayMonthSeparator>", "<MonthYearSeparator>"
# other spellings of the marker tokens seen in the literature
ALIASES = {"<Stop>": END, "<Pad>": PAD}


class TokenizeError(ValueError):
    pass


@dataclass(frozen=True)
class Dictionary:
    kind: str
    tokens: tuple[str, ...]
    max_len: int

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token names must be unique")
        for t in (START, END, PAD):
            if t not in self.tokens:
                raise ValueError(f"dictionary lacks {t}")

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, name: str) -> int:
        return self.tokens.index(ALIASES.get(name, name))

    def name(self, i: int) -> str:
        return self.tokens[i]

    @property
    def start_id(self) -> int:
        return self.id(START)

    @property
    def end_id(self) -> int:
        return self.id(END)

    @property
    def pad_id(self) -> int:
        return self.id(PAD)


def date_dictionary() -> Dictionary:
    digits = tuple(f"<{d}>" for d in range(10))
    months = tuple(f"<{m}>" for m in MONTHS)
    return Dictionary("date", digits + months + (DMS, MYS, PAD, START, END), DATE_T)


def age_dictionary() -> Dictionary:
    digits = tuple(f"<{d}>" for d in range(10))
    return Dictionary("age", (START,) + digits + (END, PAD), AGE_T)


def dictionary(kind: str) -> Dictionary:
    if kind == "date":
        return date_dictionary()
    if kind == "age":
        return age_dictionary()
    raise ValueError(f"unknown dictionary {kind!r}")


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    kind: str

    def __post_init__(self):
        check_sequence(self.ids, dictionary(self.kind))

    def names(self) -> list[str]:
        d = dictionary(self.kind)
        return [d.name(i) for i in self.ids]

    def unpadded(self) -> "TokenSequence":
        pad = dictionary(self.kind).pad_id
        return TokenSequence(tuple(i for i in self.ids if i != pad), self.kind)

    def padded(self, T: int | None = None) -> tuple[int, ...]:
        d = dictionary(self.kind)
        T = d.max_len if T is None else T
        if len(self.ids) > T:
            raise ValueError("sequence longer than pad length")
        return self.ids + (d.pad_id,) * (T - len(self.ids))


def check_sequence(ids, d: Dictionary) -> None:
    """Raise ``TokenizeError`` unless ``ids`` is a well-formed sequence for ``d``."""
    ids = list(ids)
    if not ids or ids[0] != d.start_id:
        raise TokenizeError("sequence must begin with <Start>")
    if any(not 0 <= i < len(d) for i in ids):
        raise TokenizeError("token id out of range")
    if ids.count(d.end_id) != 1:
        raise TokenizeError("sequence must contain exactly one <End>")
    e = ids.index(d.end_id)
    if any(i != d.pad_id for i in ids[e + 1 :]) or d.pad_id in ids[:e]:
        raise TokenizeError("padding only allowed after <End>")
    if d.start_id in ids[1:]:
        raise TokenizeError("<Start> repeated")
    if len(ids) > d.max_len:
        raise TokenizeError(f"sequence length {len(ids)} exceeds T={d.max_len}")


@dataclass(frozen=True)
class CivilDate:
    day: int
    month: int
    year: str  # digits as written, 2 or 4 of them
    day_text: str = ""

    @property
    def ambiguous_century(self) -> bool:
        return len(self.year) == 2


_SEP = re.compile(r"[/\-.,\s]+")
_ORDINAL = re.compile(r"^(\d{1,2})(st|nd|rd|th)$", re.IGNORECASE)


def _valid_day(day: int, month: int, year: str) -> bool:
    if not 1 <= month <= 12 or day < 1:
        return False
    if len(year) == 4:
        return day <= calendar.monthrange(int(year), month)[1]
    # unknown century: only February is uncertain
    return day <= (29 if month == 2 else calendar.monthrange(2001, month)[1])


def parse_date(s: str, month_names: dict[str, int] | None = None) -> CivilDate:
    """Day-first parse of a written date; month may be numeric or a name."""
    names = MONTH_NAMES if month_names is None else month_names
    if not isinstance(s, str) or not s.strip():
        raise TokenizeError("empty date")
    parts = [p for p in _SEP.split(s.strip()) if p]
    if len(parts) != 3:
        raise TokenizeError(f"cannot parse date {s!r}")
    named = [i for i, p in enumerate(parts) if p.isalpha()]
    if len(named) > 1:
        raise TokenizeError(f"cannot parse date {s!r}")
    if named:
        k = named[0]
        month = names.get(parts[k].lower())
        if month is None:
            raise TokenizeError(f"unknown month name {parts[k]!r}")
        if k == 0:
            day_s, year_s = parts[1], parts[2]
        elif k == 1:
            day_s, year_s = parts[0], parts[2]
        else:
            raise TokenizeError(f"cannot parse date {s!r}")
    else:
        day_s, month_s, year_s = parts
        if not (month_s.isdigit() and 1 <= len(month_s) <= 2):
            raise TokenizeError(f"bad month in {s!r}")
        month = int(month_s)
    m = _ORDINAL.match(day_s)
    if m:
        day_s = m.group(1)
    if not (day_s.isdigit() and 1 <= len(day_s) <= 2):
        raise TokenizeError(f"bad day in {s!r}")
    if not (year_s.isdigit() and len(year_s) in (2, 4)):
        raise TokenizeError(f"year must have 2 or 4 digits in {s!r}")
    day = int(day_s)
    if not _valid_day(day, month, year_s):
        raise TokenizeError(f"day/month out of range in {s!r}")
    return CivilDate(day, month, year_s, day_s)


def date_tokens(cd: CivilDate) -> TokenSequence:
    d = date_dictionary()
    names = [START] + [f"<{c}>" for c in (cd.day_text or str(cd.day))]
    names += [DMS, f"<{MONTHS[cd.month - 1]}>", MYS] + [f"<{c}>" for c in cd.year] + [END]
    return TokenSequence(tuple(d.id(n) for n in names), "date")


def tokenize_date(s: str, month_names: dict[str, int] | None = None) -> TokenSequence:
    """Day digits and year digits are kept as written (no zero normalisation)."""
    return date_tokens(parse_date(s, month_names))


def tokenize_age(s: str, max_len: int = AGE_T) -> TokenSequence:
    if not isinstance(s, str):
        raise TokenizeError("age must be text")
    t = s.strip()
    if not t.isdigit() or not t.isascii():
        raise TokenizeError(f"age {s!r} is not a non-negative integer")
    if len(t) + 2 > max_len:
        raise TokenizeError(f"age {s!r} does not fit T={max_len}")
    d = age_dictionary()
    return TokenSequence(tuple([d.start_id] + [d.id(f"<{c}>") for c in t] + [d.end_id]), "age")


def tokenize(s: str, kind: str) -> TokenSequence:
    return tokenize_date(s) if kind == "date" else tokenize_age(s)


def _body(seq: TokenSequence) -> list[str]:
    names = seq.names()
    return names[1 : names.index(END)]


def sequence_to_date(seq: TokenSequence) -> CivilDate:
    if seq.kind != "date":
        raise TokenizeError("not a date sequence")
    body = _body(seq)
    try:
        i = body.index(DMS)
        j = body.index(MYS)
    except ValueError as exc:
        raise TokenizeError("date sequence lacks separators") from exc
    day, month, year = body[:i], body[i + 1 : j], body[j + 1 :]
    if len(month) != 1 or month[0].strip("<>") not in MONTHS:
        raise TokenizeError("date sequence needs exactly one month token")
    digits = lambda ts: "".join(t.strip("<>") for t in ts)
    day_s, year_s = digits(day), digits(year)
    if not (day_s.isdigit() and 1 <= len(day_s) <= 2 and year_s.isdigit() and len(year_s) in (2, 4)):
        raise TokenizeError("malformed day or year digits")
    m = MONTHS.index(month[0].strip("<>")) + 1
    if not _valid_day(int(day_s), m, year_s):
        raise TokenizeError("day/month out of range")
    return CivilDate(int(day_s), m, year_s, day_s)


def detokenize(seq: TokenSequence) -> str:
    """Canonical text: ``D-Month-Y`` for dates, the numeral for ages."""
    if seq.kind == "date":
        cd = sequence_to_date(seq)
        return f"{cd.day_text}-{MONTHS[cd.month - 1]}-{cd.year}"
    body = _body(seq)
    s = "".join(t.strip("<>") for t in body)
    if not s.isdigit():
        raise TokenizeError("malformed age sequence")
    return s


def _as_date(x) -> CivilDate:
    if isinstance(x, TokenSequence):
        return sequence_to_date(x)
    return parse_date(x)


def dates_equivalent(a, b) -> bool:
    """Same day, month and year; a 2-digit year never matches a 4-digit one."""
    x, y = _as_date(a), _as_date(b)
    if len(x.year) != len(y.year):
        return False
    return (x.day, x.month, int(x.year)) == (y.day, y.month, int(y.year))
