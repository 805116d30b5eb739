"""Bundled example models, data and inits files."""

from pathlib import Path

DIR = Path(__file__).resolve().parent


def path(name):
    return DIR / name


def read(name):
    return path(name).read_text(encoding="utf-8")
