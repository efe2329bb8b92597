"""Access to the bundled data files (catalogs, policy, corpus, templates, tasks)."""

from __future__ import annotations

from importlib.resources import files

from .catalog import ApiCatalog, ingest_catalog
from .verify import Policy, load_policy

BUNDLED_CATALOG_NAMES = ("shop", "forum", "repo")


def data_text(relpath: str) -> str:
    return (files("planexec") / "data" / relpath).read_text(encoding="utf-8")


def bundled_catalogs() -> list[ApiCatalog]:
    return [ingest_catalog(data_text(f"catalogs/{name}.json")) for name in BUNDLED_CATALOG_NAMES]


def bundled_policy() -> Policy:
    return load_policy(data_text("policies/default.json"))


def bundled_corpus_text() -> str:
    return data_text("attacks/corpus.json")


def bundled_templates_text() -> str:
    return data_text("planner/templates.json")
