import hashlib
import random
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsrauth.canonical import (
    BIRTH_DATE,
    CATALOG,
    FAMILY_NAME,
    GIVEN_NAME,
    UNIQUE_ID,
    AttributeType,
    CanonicalValue,
    UnknownAttribute,
    UnparseableValue,
    attribute,
    canonicalize,
    commit,
    match_tag,
)


def test_family_name_trim_and_fold():
    assert canonicalize(FAMILY_NAME, "  MÜLLER ").text == "müller"


def test_dotted_date_is_day_first():
    assert canonicalize(BIRTH_DATE, "01.02.1990").text == "1990-02-01"


def test_impossible_date_rejected():
    with pytest.raises(UnparseableValue):
        canonicalize(BIRTH_DATE, "Feb 30 1990")


@pytest.mark.parametrize(
    "raw",
    ["1990-02-01", "01.02.1990", "1.2.1990", "01/02/1990", "February 1 1990", "Feb 1, 1990", "feb. 1 1990", " 01.02.1990 "],
)
def test_accepted_date_formats(raw):
    assert canonicalize(BIRTH_DATE, raw).text == "1990-02-01"


@pytest.mark.parametrize("raw", ["1990/02/01", "02-01-1990", "1 Feb 1990", "31.04.2001", "Febby 1 1990", "", "19900201"])
def test_rejected_date_formats(raw):
    with pytest.raises(UnparseableValue):
        canonicalize(BIRTH_DATE, raw)


@pytest.mark.parametrize(
    "raw,expected",
    [("007", "7"), ("1,234,567", "1234567"), ("1 000", "1000"), ("12.50", "12.5"), ("-0.00", "0"), ("+3", "3"), ("0.0700", "0.07")],
)
def test_numeric_normalization(raw, expected):
    assert canonicalize("eaa.customer_number", raw).text == expected


@pytest.mark.parametrize("raw", ["1,5", "1.000,50", "12ab", "1,0000"])
def test_numeric_rejects(raw):
    with pytest.raises(UnparseableValue):
        canonicalize("eaa.customer_number", raw)


def test_diacritics_preserved_and_composed():
    decomposed = "Müller"
    assert canonicalize(FAMILY_NAME, decomposed).text == "müller"
    assert canonicalize(FAMILY_NAME, "Muller").text != canonicalize(FAMILY_NAME, "Müller").text


def test_range_kind():
    assert canonicalize("derived.age_range", "30 – 39").text == "30-39"
    with pytest.raises(UnparseableValue):
        canonicalize("derived.age_range", "39-30")


def test_attribute_id_validation():
    with pytest.raises(ValueError):
        AttributeType("Pid.name", "text")
    with pytest.raises(ValueError):
        AttributeType("pid", "text")
    with pytest.raises(UnknownAttribute):
        attribute("pid.shoe_size")


def test_catalog_contains_mandatory_and_optional_pid():
    for a in ("pid.given_name", "pid.family_name", "pid.birth_date", "pid.unique_id", "pid.address", "pid.email", "pid.phone"):
        assert a in CATALOG


# Latin letters with and without diacritics; Turkish dotless i is excluded
# because its case mapping is locale-dependent.
LATIN = string.ascii_letters + "äöüÄÖÜßéèêÉÈÊçÇñÑåÅøØæÆłŁšŠžŽčČőŐ"
SPACES = [" ", "  ", "\t", "\n", " ", " "]


@st.composite
def name_like(draw):
    words = draw(st.lists(st.text(alphabet=LATIN + "-'", min_size=1, max_size=8), min_size=1, max_size=4))
    seps = [draw(st.sampled_from(SPACES)) for _ in words]
    lead, trail = draw(st.sampled_from(["", " ", "\t "])), draw(st.sampled_from(["", " ", "\n"]))
    return lead + "".join(w + s for w, s in zip(words, seps)).rstrip() + trail


@settings(max_examples=300)
@given(st.text())
def test_text_idempotent_on_arbitrary_unicode(raw):
    c = canonicalize(GIVEN_NAME, raw)
    assert canonicalize(GIVEN_NAME, c.text) == c


@settings(max_examples=300)
@given(name_like(), st.randoms(use_true_random=False))
def test_case_and_whitespace_equivalence(raw, rnd):
    flipped = "".join(ch.upper() if rnd.random() < 0.5 else ch.lower() for ch in raw)
    respaced = " \t".join(flipped.split())
    assert canonicalize(FAMILY_NAME, raw) == canonicalize(FAMILY_NAME, respaced)
    assert canonicalize(UNIQUE_ID, raw) == canonicalize(UNIQUE_ID, respaced)


@settings(max_examples=200)
@given(st.dates(), st.sampled_from(["iso", "dot", "slash", "named"]))
def test_date_round_trip(d, fmt):
    raw = {
        "iso": d.isoformat(),
        "dot": f"{d.day:02d}.{d.month:02d}.{d.year:04d}",
        "slash": f"{d.day}/{d.month}/{d.year:04d}",
        "named": f"{d.strftime('%B')} {d.day} {d.year:04d}",
    }[fmt]
    c = canonicalize(BIRTH_DATE, raw)
    assert c.text == d.isoformat()
    assert canonicalize(BIRTH_DATE, c.text) == c


@settings(max_examples=200)
@given(st.integers(min_value=-10**12, max_value=10**12), st.integers(min_value=0, max_value=4))
def test_numeric_idempotent(n, zeros):
    raw = ("-" if n < 0 else "") + "0" * zeros + str(abs(n))
    c = canonicalize("eaa.customer_number", raw)
    assert c.text == str(n)
    assert canonicalize("eaa.customer_number", c.text) == c


# -- commitments and tags -----------------------------------------------------


def _oracle_hash(prefix: bytes, attr_id: str, text: str) -> bytes:
    return hashlib.sha256(prefix + attr_id.encode() + b"\x00" + text.encode()).digest()


def test_commit_layout_matches_direct_hash():
    v = canonicalize(FAMILY_NAME, "Müller")
    salt = bytes(range(16))
    assert commit(FAMILY_NAME, v, salt).digest == _oracle_hash(salt, "pid.family_name", "müller")
    assert commit(FAMILY_NAME, v, salt) == commit(FAMILY_NAME, v, salt)


def test_commit_distinct_salts_and_values():
    rng = random.Random(1)
    values = {canonicalize(GIVEN_NAME, "".join(rng.choices(string.ascii_letters, k=rng.randint(1, 10)))) for _ in range(300)}
    digests = set()
    for v in values:
        s1, s2 = rng.randbytes(16), rng.randbytes(16)
        assert commit(GIVEN_NAME, v, s1).digest != commit(GIVEN_NAME, v, s2).digest
        digests.add(commit(GIVEN_NAME, v, bytes(16)).digest)
    assert len(digests) == len(values)


def test_commit_rejects_bad_salt():
    with pytest.raises(ValueError):
        commit(GIVEN_NAME, canonicalize(GIVEN_NAME, "x"), b"short")


def test_tag_nonce_scoped():
    rng = random.Random(2)
    for _ in range(200):
        v = canonicalize(GIVEN_NAME, "".join(rng.choices(string.ascii_letters, k=6)))
        n1, n2 = rng.randbytes(16), rng.randbytes(16)
        assert match_tag(n1, GIVEN_NAME, v) == match_tag(n1, GIVEN_NAME, v)
        assert match_tag(n1, GIVEN_NAME, v) != match_tag(n2, GIVEN_NAME, v)
        assert match_tag(n1, GIVEN_NAME, v).tag == _oracle_hash(n1, GIVEN_NAME.id, v.text)


def test_tag_equality_iff_canonical_equality_over_small_store():
    rng = random.Random(3)
    pool = ["Anna", "ANNA ", "anna", "Bert", "Bärbel", "bärbel", "Carl", "Dora", "dora ", "Emil"]
    store = [canonicalize(GIVEN_NAME, rng.choice(pool)) for _ in range(10)]
    nonce = rng.randbytes(16)
    for raw in pool:
        wallet_value = canonicalize(GIVEN_NAME, raw)
        wallet_tag = match_tag(nonce, GIVEN_NAME, wallet_value)
        for stored in store:
            same_tag = match_tag(nonce, GIVEN_NAME, stored) == wallet_tag
            assert same_tag == (stored.text == wallet_value.text)


def test_attr_binding_in_tag():
    n = bytes(16)
    v1 = CanonicalValue(GIVEN_NAME, "anna")
    assert match_tag(n, GIVEN_NAME, v1) != match_tag(n, FAMILY_NAME, CanonicalValue(FAMILY_NAME, "anna"))
