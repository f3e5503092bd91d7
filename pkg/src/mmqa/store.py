"""Content-addressed artifact store for generated images.

Bytes are written once under ``objects/<hh>/<hash>`` where the name is the
SHA-256 of the content; a JSONL sidecar index records media type and size.
Writes are append-only, so concurrent producers can share a store.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class StoredArtifact:
    ref: str
    media_type: str
    size: int


class ArtifactStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._objects = self.root / "objects"
        self._index_path = self.root / "index.jsonl"
        self._objects.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index: dict[str, StoredArtifact] = {}
        if self._index_path.exists():
            with self._index_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    self._index[row["ref"]] = StoredArtifact(row["ref"], row["media_type"], row["size"])

    def _object_path(self, ref: str) -> Path:
        return self._objects / ref[:2] / ref

    def put(self, data: bytes, media_type: str = "application/octet-stream") -> str:
        """Store bytes and return their content hash; idempotent for equal content."""
        ref = content_hash(data)
        with self._lock:
            if ref in self._index:
                return ref
            path = self._object_path(ref)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
            artifact = StoredArtifact(ref=ref, media_type=media_type, size=len(data))
            with self._index_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"ref": ref, "media_type": media_type, "size": len(data)}) + "\n")
            self._index[ref] = artifact
        return ref

    def exists(self, ref: str) -> bool:
        return ref in self._index and self._object_path(ref).exists()

    def get(self, ref: str) -> bytes:
        if not self.exists(ref):
            raise KeyError(f"artifact {ref!r} not found in store at {self.root}")
        return self._object_path(ref).read_bytes()

    def media_type(self, ref: str) -> str:
        try:
            return self._index[ref].media_type
        except KeyError:
            raise KeyError(f"artifact {ref!r} not found in store at {self.root}") from None
