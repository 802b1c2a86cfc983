"""Asynchronous fast-slow whole-body control stack at desk scale."""

__version__ = "0.1.0"
