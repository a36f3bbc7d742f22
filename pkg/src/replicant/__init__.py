"""Replicant: a MultiPaxos-replicated in-memory key-value store.

The package holds the replicated store itself (``kvstore``, ``replog``,
``multipaxos``, ``transport``, ``server``), a deterministic simulator that
drives the same protocol code over a virtual network (``replicant.sim``), and
an open-loop YCSB-style load generator (``replicant.loadgen``).
"""

__version__ = "0.1.0"
