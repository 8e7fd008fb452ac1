"""Permutation-invariant and -equivariant agent networks for cooperative
multi-agent Q-learning, with a deterministic micro-battle environment,
VDN/QMIX learners, and a small experiment CLI."""

__version__ = "0.1.0"
