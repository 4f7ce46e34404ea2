"""Distributed handshaking for Reo circuits.

Modules: ``automata`` (ACA and timed ACA algebra), ``circuit`` (circuit
text format and regions), ``semantics`` (reference constraint automata),
``handshake`` (per-primitive timed templates and their composition),
``sim`` (discrete-event simulator), ``verify`` (refinement and
correct-implementation checks) and ``cli``.
"""

__version__ = "0.1.0"
