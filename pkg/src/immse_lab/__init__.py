"""Simulation lab for I-MMSE identities under feedback and memory."""
