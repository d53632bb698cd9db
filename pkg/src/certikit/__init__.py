"""certikit: certification and runtime-safety toolkit for learned dynamics and controllers."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1
