"""Prompt templates, loaded from plain text so wording can be tuned without
code edits. Fields are marked {name} and substituted literally by fill(),
which leaves JSON braces in the surrounding text untouched; single-line
templates are stripped of the trailing newline."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load(name: str) -> str:
    text = resources.files(__package__).joinpath(f"{name}.txt").read_text()
    return text.rstrip("\n") if text.count("\n") <= 1 else text


def fill(name: str, **fields) -> str:
    text = load(name)
    for key, value in fields.items():
        text = text.replace("{" + key + "}", str(value))
    return text
