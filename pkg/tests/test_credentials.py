import hashlib
import random
import string
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsrauth.canonical import UnknownAttribute, canonicalize, commit
from dsrauth.credentials import (
    ACCEPT,
    DECLINE,
    AddAttr,
    Absent,
    CredentialBundle,
    Disclosure,
    ExpiredBundle,
    IssuerKey,
    IssuerState,
    MandatoryRemoval,
    MissingMandatoryAttribute,
    Mode,
    Presentation,
    RemoveAttr,
    Restrict,
    UnknownBundle,
    UnknownPerson,
    UseCase,
    build_presentation,
    check_expiration,
    fingerprint,
    issue_bundle,
    negotiate_catalog,
    verify_bundle,
    verify_presentation,
)
from dsrauth.encoding import b64d, b64e, canonical_json

from .conftest import NOW, PERSON, VALIDITY

MANDATORY = ["pid.given_name", "pid.family_name", "pid.birth_date", "pid.unique_id"]
REQ4 = ["pid.given_name", "pid.family_name", "pid.birth_date", "pid.address"]


class TestIssue:
    def test_mandatory_bundle_verifies_and_commitments_recompute(self, issuer_key, rng):
        b = issue_bundle(PERSON, MANDATORY, VALIDITY, issuer_key, rng.randbytes)
        assert verify_bundle(b, issuer_key.public_key)
        assert [c.attr.id for c in b.attributes] == sorted(MANDATORY)
        for c in b.attributes:
            # independent recomputation of the committed digest
            raw = hashlib.sha256(c.salt + c.attr.id.encode() + b"\x00" + c.value.text.encode()).digest()
            assert raw == c.commitment.digest
            assert c.restrictions == frozenset({UseCase.ANY})

    def test_missing_unique_id(self, issuer_key):
        with pytest.raises(MissingMandatoryAttribute):
            issue_bundle(PERSON, MANDATORY[:3], VALIDITY, issuer_key)

    def test_registry_lacking_selected_attr(self, issuer_key):
        rec = {k: v for k, v in PERSON.items() if k != "pid.phone"}
        with pytest.raises(MissingMandatoryAttribute):
            issue_bundle(rec, MANDATORY + ["pid.phone"], VALIDITY, issuer_key)

    def test_values_canonicalized(self, bundle):
        assert bundle.claim("pid.family_name").value.text == "mustermann"
        assert bundle.claim("pid.birth_date").value.text == "1991-08-12"

    def test_two_issuances_differ_only_in_salts(self, issuer_key, rng):
        b1 = issue_bundle(PERSON, MANDATORY, VALIDITY, issuer_key, rng.randbytes)
        b2 = issue_bundle(PERSON, MANDATORY, VALIDITY, issuer_key, rng.randbytes)
        for c1, c2 in zip(b1.attributes, b2.attributes):
            assert c1.value == c2.value
            assert c1.salt != c2.salt
            assert c1.commitment.digest != c2.commitment.digest

    def test_unparseable_propagates(self, issuer_key):
        rec = dict(PERSON, **{"pid.birth_date": "Feb 30 1990"})
        with pytest.raises(ValueError):
            issue_bundle(rec, MANDATORY, VALIDITY, issuer_key)

    def test_wire_round_trip(self, bundle, issuer_key):
        again = CredentialBundle.from_wire(bundle.to_wire())
        assert again == bundle
        assert verify_bundle(again, issuer_key.public_key)

    def test_tampered_bundle_fails(self, bundle, issuer_key):
        w = bundle.to_wire()
        w["claims"][0]["value"] = "mallory"
        assert not verify_bundle(CredentialBundle.from_wire(w), issuer_key.public_key)

    def test_wrong_key_fails(self, bundle):
        other = IssuerKey.from_seed("issuer-test", bytes(32))
        assert not verify_bundle(bundle, other.public_key)


class TestNegotiate:
    def test_restrict_address_to_dsr(self, bundle, issuer_key, nonce):
        b = negotiate_catalog(bundle, [Restrict("pid.address", frozenset({UseCase.DSR}))], issuer_key)
        assert b.bundle_id == bundle.bundle_id
        assert verify_bundle(b, issuer_key.public_key)
        for uc, present in [(UseCase.DSR, True), (UseCase.LOGIN, False), (UseCase.AGE_PROOF, False)]:
            p = build_presentation(b, ["pid.address"], Mode.CLEARTEXT, nonce, uc, NOW)
            assert isinstance(p.slots[0], Disclosure) is present

    def test_remove_mandatory(self, bundle, issuer_key):
        with pytest.raises(MandatoryRemoval):
            negotiate_catalog(bundle, [RemoveAttr("pid.unique_id")], issuer_key)

    def test_remove_optional(self, bundle, issuer_key):
        b = negotiate_catalog(bundle, [RemoveAttr("pid.phone")], issuer_key)
        assert b.claim("pid.phone") is None
        assert verify_bundle(b, issuer_key.public_key)

    def test_unknown_attr(self, bundle, issuer_key):
        with pytest.raises(UnknownAttribute):
            negotiate_catalog(bundle, [AddAttr("pid.shoe_size", "44")], issuer_key)
        with pytest.raises(UnknownAttribute):
            negotiate_catalog(bundle, [AddAttr("derived.age_range", "30-39")], issuer_key)

    def test_add_email_end_to_end(self, bundle, issuer_key, nonce):
        b = negotiate_catalog(bundle, [AddAttr("eaa.email", "a@b.example")], issuer_key)
        p = build_presentation(b, ["eaa.email"], Mode.CLEARTEXT, nonce, UseCase.DSR, NOW)
        assert p.slots[0].value.text == "a@b.example"
        again = Presentation.from_wire(p.to_wire())
        assert verify_presentation(again, issuer_key.public_key, NOW) == ACCEPT


class TestPresent:
    def test_full_cleartext(self, bundle, nonce):
        p = build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, NOW)
        assert len(p.disclosed) == 4
        assert not [s for s in p.slots if isinstance(s, Absent)]
        assert [s.attr.id for s in p.slots] == REQ4

    def test_restricted_slot_absent(self, bundle, issuer_key, nonce):
        b = negotiate_catalog(bundle, [Restrict("pid.address", frozenset({UseCase.LOGIN}))], issuer_key)
        p = build_presentation(b, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, NOW)
        assert isinstance(p.slots[3], Absent)
        assert len(p.disclosed) == 3

    def test_hashed_tags_recompute(self, bundle, nonce):
        p = build_presentation(bundle, REQ4, Mode.HASHED, nonce, UseCase.DSR, NOW)
        for d in p.disclosed:
            assert d.value is None
            text = bundle.claim(d.attr.id).value.text
            assert d.match_tag == hashlib.sha256(nonce + d.attr.id.encode() + b"\x00" + text.encode()).digest()
        assert "value" not in canonical_json(p.to_wire()).decode()

    def test_absent_when_bundle_lacks(self, bundle, nonce):
        p = build_presentation(bundle, ["eaa.health_insurance_id"], Mode.CLEARTEXT, nonce, UseCase.DSR, NOW)
        assert p.slots == (Absent("eaa.health_insurance_id"),)

    def test_expired(self, bundle, nonce):
        with pytest.raises(ExpiredBundle):
            build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, VALIDITY[1] + timedelta(seconds=1))
        with pytest.raises(ExpiredBundle):
            build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, VALIDITY[0] - timedelta(seconds=1))

    def test_no_bundle_id_in_presentation(self, bundle, nonce):
        for mode in Mode:
            body = canonical_json(build_presentation(bundle, REQ4, mode, nonce, UseCase.DSR, NOW).to_wire())
            assert b64e(bundle.bundle_id).encode() not in body
            assert bundle.bundle_id.hex().encode() not in body

    def test_withheld(self, bundle, nonce):
        p = build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, NOW, withheld={"pid.address"})
        assert isinstance(p.slots[3], Absent)


class TestVerify:
    def test_accept(self, bundle, issuer_key, nonce):
        p = build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, NOW)
        assert verify_presentation(p, issuer_key.public_key, NOW) == ACCEPT

    def test_expired_decline_is_byte_identical_to_tampered(self, bundle, issuer_key, nonce):
        p = build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, NOW)
        late = verify_presentation(p, issuer_key.public_key, VALIDITY[1] + timedelta(seconds=1))
        w = p.to_wire()
        salt = bytearray(b64d(w["claims"][0]["salt"]))
        salt[0] ^= 1
        w["claims"][0]["salt"] = b64e(bytes(salt))
        tampered = verify_presentation(Presentation.from_wire(w), issuer_key.public_key, NOW)
        assert late == tampered == DECLINE
        assert late.encode() == tampered.encode()

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_salt_bit_flip_declines(self, data):
        key = IssuerKey.from_seed("issuer-test", bytes(range(32)))
        rnd = random.Random(data.draw(st.integers(0, 2**32)))
        b = issue_bundle(PERSON, PERSON.keys(), VALIDITY, key, rnd.randbytes)
        p = build_presentation(b, REQ4, Mode.CLEARTEXT, rnd.randbytes(16), UseCase.DSR, NOW)
        w = p.to_wire()
        i = data.draw(st.integers(0, len(w["claims"]) - 1))
        bit = data.draw(st.integers(0, 127))
        salt = bytearray(b64d(w["claims"][i]["salt"]))
        salt[bit // 8] ^= 1 << (bit % 8)
        w["claims"][i]["salt"] = b64e(bytes(salt))
        assert verify_presentation(Presentation.from_wire(w), key.public_key, NOW) == DECLINE

    def test_hashed_with_revealed(self, bundle, issuer_key, nonce):
        p = build_presentation(bundle, REQ4, Mode.HASHED, nonce, UseCase.DSR, NOW)
        right = {"pid.family_name": "mustermann", "pid.birth_date": "1991-08-12"}
        assert verify_presentation(p, issuer_key.public_key, NOW, right) == ACCEPT
        assert verify_presentation(p, issuer_key.public_key, NOW, {"pid.family_name": "musterfrau"}) == DECLINE
        assert verify_presentation(p, issuer_key.public_key, NOW, {"pid.unique_id": "x"}) == DECLINE

    def test_foreign_commitment_declines(self, bundle, issuer_key, nonce, rng):
        # a self-made claim whose commitment is not in the signed digest list
        p = build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, NOW)
        v = canonicalize("pid.given_name", "Mallory")
        salt = rng.randbytes(16)
        forged = Disclosure(v.attr, salt, commit(v.attr, v, salt).digest, value=v)
        p2 = Presentation(p.mode, p.nonce, p.issuer_id, p.valid_from, p.valid_until,
                          (forged,) + p.slots[1:], p.signature, p.digests)
        assert verify_presentation(p2, issuer_key.public_key, NOW) == DECLINE

    def test_strict_decoding(self, bundle, nonce):
        w = build_presentation(bundle, REQ4, Mode.CLEARTEXT, nonce, UseCase.DSR, NOW).to_wire()
        w["bundle_id"] = "x"
        with pytest.raises(ValueError):
            Presentation.from_wire(w)


def _random_value(rng):
    return "".join(rng.choices(string.ascii_lowercase, k=12))


def test_minimality_no_unrequested_values_leak(issuer_key):
    rng = random.Random(99)
    attrs = ["pid.given_name", "pid.family_name", "pid.unique_id", "pid.address", "pid.email", "pid.phone", "pid.nationality"]
    for _ in range(200):
        rec = {a: _random_value(rng) for a in attrs}
        rec["pid.birth_date"] = f"{rng.randint(1940, 2005)}-0{rng.randint(1, 9)}-1{rng.randint(0, 9)}"
        b = issue_bundle(rec, rec.keys(), VALIDITY, issuer_key, rng.randbytes)
        requested = rng.sample(sorted(rec), rng.randint(0, len(rec)))
        for mode in Mode:
            body = canonical_json(build_presentation(b, requested, mode, rng.randbytes(16), UseCase.DSR, NOW).to_wire()).decode()
            for a in rec:
                if a not in requested or mode is Mode.HASHED:
                    assert b.claim(a).value.text not in body


def test_restriction_enforcement_property(issuer_key):
    rng = random.Random(5)
    for _ in range(50):
        b = issue_bundle(PERSON, PERSON.keys(), VALIDITY, issuer_key, rng.randbytes)
        attr = rng.choice(sorted(PERSON))
        allowed = frozenset(rng.sample([UseCase.DSR, UseCase.LOGIN, UseCase.AGE_PROOF], rng.randint(1, 2)))
        b = negotiate_catalog(b, [Restrict(attr, allowed)], issuer_key)
        for uc in (UseCase.DSR, UseCase.LOGIN, UseCase.AGE_PROOF):
            p = build_presentation(b, sorted(PERSON), Mode.CLEARTEXT, rng.randbytes(16), uc, NOW)
            slot = next(s for s in p.slots if (s.attr if isinstance(s, Absent) else s.attr.id) == attr)
            assert isinstance(slot, Absent) == (uc not in allowed)


class TestExpiration:
    def test_lifecycle(self, issuer_key, rng):
        state = IssuerState(issuer_key, registry={"p1": PERSON})
        b = state.issue("p1", MANDATORY, VALIDITY, rng.randbytes)
        st_ = check_expiration(b.bundle_id, NOW, state)
        assert st_.state == "valid" and st_.valid_until == VALIDITY[1]
        state.revoke(b64e(b.bundle_id), NOW)
        assert check_expiration(b.bundle_id, NOW, state).state == "expired"
        assert check_expiration(rng.randbytes(16), NOW, state).state == "unknown"

    def test_revoke_idempotent_and_unknown(self, issuer_key, rng):
        state = IssuerState(issuer_key, registry={"p1": PERSON})
        b = state.issue("p1", MANDATORY, VALIDITY, rng.randbytes)
        state.revoke(b64e(b.bundle_id), NOW)
        state.revoke(b64e(b.bundle_id), NOW + timedelta(days=1))
        assert state.issued[b64e(b.bundle_id)].valid_until < NOW
        with pytest.raises(UnknownBundle):
            state.revoke("nope", NOW)

    def test_unknown_person(self, issuer_key):
        with pytest.raises(UnknownPerson):
            IssuerState(issuer_key).issue("ghost", MANDATORY, VALIDITY)

    def test_repeated_issuance_both_valid(self, issuer_key, rng):
        state = IssuerState(issuer_key, registry={"p1": PERSON})
        b1 = state.issue("p1", MANDATORY, VALIDITY, rng.randbytes)
        b2 = state.issue("p1", MANDATORY, VALIDITY, rng.randbytes)
        assert check_expiration(b1.bundle_id, NOW, state).valid
        assert check_expiration(b2.bundle_id, NOW, state).valid

    def test_negotiation_supersedes_old_signature(self, issuer_key, rng):
        state = IssuerState(issuer_key, registry={"p1": PERSON})
        b = state.issue("p1", PERSON.keys(), VALIDITY, rng.randbytes)
        b2 = state.negotiate(b, [RemoveAttr("pid.phone")], rng.randbytes)
        assert state.check_signature(fingerprint(b2.signature), NOW).valid
        assert state.check_signature(fingerprint(b.signature), NOW).state == "expired"
        assert state.check_signature("00" * 32, NOW).state == "unknown"

    def test_state_round_trip(self, issuer_key, rng):
        state = IssuerState(issuer_key, registry={"p1": PERSON})
        b = state.issue("p1", MANDATORY, VALIDITY, rng.randbytes)
        again = IssuerState.from_json(state.to_json(), issuer_key)
        assert again.check(b64e(b.bundle_id), NOW) == state.check(b64e(b.bundle_id), NOW)
