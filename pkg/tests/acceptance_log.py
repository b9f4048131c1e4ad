"""Shared store for acceptance verdict lines, printed by the conftest hook."""
LINES: list[str] = []
