"""Deterministic simulator for distributed LLM serving mechanisms.

Covers swarm chain routing (shortest path and NSGA-II), iteration-level
scheduling, paged KV-cache management, debt-ledger distributed KV memory and
exact block-wise attention kernels.
"""

__version__ = "0.1.0"
