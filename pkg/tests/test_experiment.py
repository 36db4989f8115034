import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobilefbe.core import CipherId, KdfMode, Node, Platform, Policy, Usage
from mobilefbe.errors import ChallengeError
from mobilefbe.experiment import (
    ADVERSARIES,
    ConstantAdversary,
    ContentRepetitionAdversary,
    GameConfig,
    MalleabilityAdversary,
    TrivialAdversary,
    V1KeyRecoveryAdversary,
    estimate_advantage,
    play,
    run_experiment,
)
from mobilefbe.fsenc import EncryptedNode
from mobilefbe.keywrap import WRAP_CIPHER

DE = Policy(WRAP_CIPHER, Usage.DEVICE_DATA_AFTER_BOOT)


class Scripted:
    """Adversary driven by two callables, for poking at the oracles."""

    def __init__(self, stage1, stage2=lambda o, s, e: 0):
        self.s1, self.s2 = stage1, stage2

    def stage1(self, oracles):
        return self.s1(oracles)

    def stage2(self, oracles, state, enode):
        return self.s2(oracles, state, enode)


def _handle(o):
    return o.unwrap(*o.wrap(DE))


def test_wrap_unwrap_reveal_bookkeeping():
    seen = {}

    def s1(o):
        outs = [o.wrap(DE) for _ in range(3)]
        seen["lwrap"] = len(o._state.l_wrap)
        kids = [o.unwrap(*x) for x in outs]
        seen["kids"] = kids
        seen["revealed"] = o.reveal(kids[0])
        seen["recorded"] = o._state.l_wrap[0].k
        seen["bad_usage"] = o.wrap(Policy(WRAP_CIPHER, Usage.FILE_PROTECTION_COMPLETE))
        seen["no_token"] = o.wrap(Policy(WRAP_CIPHER, Usage.USER_DATA_AFTER_AUTH))
        return Node.file(b"a" * 32), Node.file(b"b" * 32), kids[1], None

    run_experiment(Scripted(s1), 0, 1)
    assert seen["lwrap"] == 3
    assert len(set(seen["kids"])) == 3
    assert seen["revealed"] == seen["recorded"]
    assert seen["bad_usage"] is None and seen["no_token"] is None


def test_tampered_wrap_gives_bottom_and_no_handle():
    seen = {}

    def s1(o):
        phi, bpol = o.wrap(DE)
        from mobilefbe.core import WrappedKey

        bad = WrappedKey(phi.ct[:-1] + bytes([phi.ct[-1] ^ 1]), 1)
        seen["kid"] = o.unwrap(bad, bpol)
        seen["size"] = len(o._state.ring)
        return Node.file(b"a"), Node.file(b"b"), o.unwrap(phi, bpol), None

    run_experiment(Scripted(s1), 0, 2)
    assert seen == {"kid": None, "size": 0}


def test_restrictions_on_challenge_handle():
    seen = {}

    def s1(o):
        kid = _handle(o)
        f = Node.file(b"q" * 48)
        seen["own"] = o.enc(kid, f)
        return Node.file(b"a" * 48), Node.file(b"b" * 48), kid, kid

    def s2(o, kid, enode):
        seen["reveal"] = o.reveal(kid)
        seen["dec_challenge"] = o.dec(kid, enode)
        seen["dec_own"] = o.dec(kid, seen["own"])
        other = _handle(o)
        seen["other_ok"] = o.dec(other, o.enc(other, Node.file(b"z" * 20)))
        return 0

    run_experiment(Scripted(s1, s2), 1, 3)
    assert seen["reveal"] is None
    assert seen["dec_challenge"] is None
    assert seen["dec_own"] is None
    assert seen["other_ok"].content == b"z" * 20


@pytest.mark.parametrize(
    "f0, f1, why",
    [
        (Node.file(b"a" * 10), Node.file(b"b" * 11), "equal length"),
        (Node.directory(), Node.file(b""), "files"),
        (Node.file(b"a", meta=bytes(16)), Node.file(b"b"), "nonce"),
    ],
)
def test_ill_formed_challenges_rejected(f0, f1, why):
    def s1(o):
        return f0, f1, _handle(o), None

    with pytest.raises(ChallengeError, match=why):
        run_experiment(Scripted(s1), 0, 4)


def test_revealed_or_dead_challenge_handle_rejected():
    def revealed(o):
        kid = _handle(o)
        o.reveal(kid)
        return Node.file(b"a"), Node.file(b"b"), kid, None

    with pytest.raises(ChallengeError, match="revealed"):
        run_experiment(Scripted(revealed), 0, 5)
    with pytest.raises(ChallengeError, match="live"):
        run_experiment(Scripted(lambda o: (Node.file(b"a"), Node.file(b"b"), 99, None)), 0, 5)


def test_oracles_do_not_mutate_caller_nodes():
    def s1(o):
        kid = _handle(o)
        f = Node.file(b"x" * 20)
        o.enc(kid, f)
        assert f.meta is None
        return f, Node.file(b"y" * 20), kid, None

    run_experiment(Scripted(s1), 0, 6)


def test_identical_seeds_give_identical_transcripts():
    a = play(ContentRepetitionAdversary(), 1, "t")
    b = play(ContentRepetitionAdversary(), 1, "t")
    c = play(ContentRepetitionAdversary(), 1, "u")
    assert a.transcript == b.transcript
    assert a.transcript != c.transcript
    idx, name, arg, res = a.transcript[0].split()
    assert (idx, name) == ("0", "wrap") and len(arg) == len(res) == 64


def test_constant_adversary():
    assert all(run_experiment(ConstantAdversary(), b, s) == 0 for b in (0, 1) for s in range(5))
    assert estimate_advantage(ConstantAdversary, 20) == 0.0


def test_trivial_adversary_scores_exactly_zero():
    assert estimate_advantage(TrivialAdversary, 300, seed=11) == 0.0


def test_negative_controls_are_detected():
    assert estimate_advantage(ContentRepetitionAdversary, 50) == 0.0
    assert estimate_advantage(ContentRepetitionAdversary, 50, cfg=GameConfig(constant_nonce=True)) == 1.0


def test_v1_key_recovery_needs_shared_keys():
    v1 = GameConfig(mode=KdfMode.V1)
    assert estimate_advantage(V1KeyRecoveryAdversary, 50, cfg=v1) == 0.0
    assert estimate_advantage(V1KeyRecoveryAdversary, 50, cfg=GameConfig(mode=KdfMode.V1, share_keys=True)) == 1.0


def test_unauthenticated_content_cipher_is_malleable():
    # documents that XTS content encryption does not provide IND-CCA
    assert estimate_advantage(MalleabilityAdversary, 50) == 1.0


def test_ios_variant_runs():
    cfg = GameConfig(platform=Platform.IOS)
    assert estimate_advantage(ContentRepetitionAdversary, 20, cfg=cfg) == 0.0


@pytest.mark.parametrize("name", sorted(ADVERSARIES))
@pytest.mark.parametrize("cipher", [CipherId.AES_256_XTS, CipherId.AES_128_CBC_ESSIV])
def test_every_adversary_runs(name, cipher):
    assert 0.0 <= estimate_advantage(ADVERSARIES[name], 5, cfg=GameConfig(cipher=cipher)) <= 1.0


@settings(max_examples=40, deadline=None)
@given(ops=st.lists(st.tuples(st.sampled_from(["wrap", "reveal", "enc", "dec", "dec_star", "reveal_star"]), st.integers(0, 5)), max_size=25), seed=st.integers(0, 2**16))
def test_forbidden_queries_always_bottom(ops, seed):
    """Random query sequences never get a non-bottom answer from a forbidden query."""
    violations = []

    def s1(o):
        kid = _handle(o)
        return Node.file(b"a" * 32), Node.file(b"b" * 32), kid, kid

    def s2(o, kid_star, challenge):
        kids = [kid_star]
        outputs = [challenge]
        r = random.Random(seed)
        for op, i in ops:
            if op == "wrap":
                kids.append(_handle(o))
            elif op == "reveal":
                o.reveal(kids[i % len(kids)])
            elif op == "reveal_star":
                if o.reveal(kid_star) is not None:
                    violations.append("reveal")
            elif op == "enc":
                e = o.enc(kids[i % len(kids)], Node.file(r.randbytes(32)))
                if e is not None:
                    outputs.append(e)
            elif op == "dec":
                o.dec(kids[i % len(kids)], outputs[i % len(outputs)])
            elif op == "dec_star":
                e = outputs[i % len(outputs)]
                forbidden = e == challenge or e.fingerprint() in o._state.enc_outputs.get(kid_star, set())
                if forbidden and o.dec(kid_star, e) is not None:
                    violations.append("dec")
        return 0

    run_experiment(Scripted(s1, s2), seed % 2, seed)
    assert violations == []


def test_encrypted_node_fingerprint_is_stable():
    e = EncryptedNode(bytes(16), Node.file().node_type, b"x" * 16, (), 1, 0, 16)
    assert e.fingerprint() == EncryptedNode(bytes(16), e.node_type, b"x" * 16, (), 1, 0, 16).fingerprint()
