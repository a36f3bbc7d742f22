"""Hypothesis strategies for peer messages."""

from hypothesis import strategies as st

from replicant.kvstore import Command
from replicant.replog import Instance, InstanceState
from replicant.transport import OK, REJECT, MsgType, PeerMessage

keys = st.binary(min_size=1, max_size=16)
commands = st.one_of(
    st.builds(Command.get, keys), st.builds(Command.delete, keys),
    st.builds(Command.put, keys, st.binary(max_size=32)))
instances = st.builds(Instance, st.integers(0, 2**40), st.integers(1, 2**40),
                      st.integers(0, 2**31), commands, st.sampled_from(list(InstanceState)))
opt_int = st.none() | st.integers(0, 2**40)
messages = st.builds(
    PeerMessage, st.sampled_from(list(MsgType)), st.integers(0, 2**40), st.integers(0, 255),
    ballot=opt_int, index=opt_int, client_id=opt_int, command=st.none() | commands,
    instances=st.none() | st.lists(instances, max_size=4).map(tuple),
    last_executed=opt_int, global_last_executed=opt_int,
    status=st.none() | st.sampled_from([OK, REJECT]))
