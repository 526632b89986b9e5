"""Serve a filesystem document root as an OAI-PMH 2.0 repository."""

__version__ = "0.1.0"

SERVER_TOKEN = f"fsoai/{__version__}"
