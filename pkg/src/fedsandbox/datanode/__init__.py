"""Per-site data node: notes, patients and annotation stores over HTTP."""

from .client import DataNodeClient, DataNodeError, SiteUnavailable, export_bundle, gold_store_id, ingest_bundle
from .service import DataNodeConfig, create_app
from .store import DataNodeStore, FileJournal, MemoryJournal, Page

__all__ = [
    "DataNodeClient",
    "DataNodeConfig",
    "DataNodeError",
    "DataNodeStore",
    "FileJournal",
    "MemoryJournal",
    "Page",
    "SiteUnavailable",
    "create_app",
    "export_bundle",
    "gold_store_id",
    "ingest_bundle",
]
