import pytest
from hypothesis import given, strategies as st

from replicant.kvstore import Command, CommandResult, KVStore, Kind


def test_put_then_get():
    s = KVStore()
    assert s.execute(Command.put(b"k", b"v")) == CommandResult(True)
    assert s.execute(Command.get(b"k")) == CommandResult(True, b"v")


def test_get_and_del_missing_are_not_ok():
    s = KVStore()
    assert s.execute(Command.get(b"absent")) == CommandResult(False)
    assert s.execute(Command.delete(b"absent")) == CommandResult(False)


def test_put_upserts():
    s = KVStore()
    s.execute(Command.put(b"k", b"v1"))
    s.execute(Command.put(b"k", b"v2"))
    assert s.execute(Command.get(b"k")).value == b"v2"


def test_size():
    s = KVStore()
    assert s.size() == 0
    s.execute(Command.put(b"k1", b"a"))
    s.execute(Command.put(b"k2", b"b"))
    s.execute(Command.delete(b"k1"))
    assert s.size() == 1
    for i in range(50):
        s.execute(Command.put(b"n%d" % i, b"x"))
    assert s.size() == 51


@pytest.mark.parametrize("bad", [
    lambda: Command(Kind.PUT, b"k", None),
    lambda: Command(Kind.GET, b"k", b"v"),
    lambda: Command(Kind.DEL, b"k", b""),
    lambda: Command(Kind.GET, b"", None),
])
def test_command_invariants(bad):
    with pytest.raises(ValueError):
        bad()


def test_empty_value_is_a_valid_put():
    s = KVStore()
    s.execute(Command.put(b"k", b""))
    assert s.execute(Command.get(b"k")) == CommandResult(True, b"")


commands = st.one_of(
    st.builds(Command.get, st.sampled_from([b"a", b"b", b"c"])),
    st.builds(Command.delete, st.sampled_from([b"a", b"b", b"c"])),
    st.builds(Command.put, st.sampled_from([b"a", b"b", b"c"]), st.binary(max_size=8)),
)


@given(st.lists(commands, max_size=40))
def test_replay_is_deterministic(seq):
    a, b = KVStore(), KVStore()
    ra = [a.execute(c) for c in seq]
    rb = [b.execute(c) for c in seq]
    assert ra == rb and a.items() == b.items()


@given(st.lists(commands, max_size=20), st.sampled_from([b"a", b"b", b"z"]))
def test_get_never_mutates(seq, key):
    s = KVStore()
    for c in seq:
        s.execute(c)
    before = dict(s.items())
    s.execute(Command.get(key))
    assert s.items() == before
