"""Desk-scale simulator for a 1/6-scale rover convoy and its PX4 parameter set."""

from importlib import resources

__version__ = "0.1.0"


def schema_text(name: str) -> str:
    """Contents of a bundled JSON schema (``metrics`` or ``sweep``)."""
    return resources.files(__name__).joinpath("schemas", f"{name}.schema.json").read_text()
