"""Content-addressed storage for payloads too large to inline."""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from .errors import DigestMismatch, UnknownDigest

BLOB_KEY = "$blob"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class BlobRef:
    digest: str
    byte_length: int
    media_type: str | None = None

    def to_json(self) -> dict:
        body: dict[str, Any] = {"digest": self.digest, "byte_length": self.byte_length}
        if self.media_type is not None:
            body["media_type"] = self.media_type
        return {BLOB_KEY: body}

    @classmethod
    def from_json(cls, obj: dict) -> "BlobRef":
        body = obj[BLOB_KEY]
        return cls(body["digest"], int(body["byte_length"]), body.get("media_type"))


def is_blob_ref(value: Any) -> bool:
    return (
        isinstance(value, dict)
        and len(value) == 1
        and isinstance(value.get(BLOB_KEY), dict)
        and isinstance(value[BLOB_KEY].get("digest"), str)
    )


def iter_blob_refs(value: Any) -> Iterator[BlobRef]:
    """Yield every blob reference nested anywhere inside a JSON value."""
    if isinstance(value, dict):
        if is_blob_ref(value):
            try:
                yield BlobRef.from_json(value)
            except (KeyError, TypeError, ValueError):
                yield BlobRef(value[BLOB_KEY]["digest"], -1)
            return
        for v in value.values():
            yield from iter_blob_refs(v)
    elif isinstance(value, list):
        for v in value:
            yield from iter_blob_refs(v)


class MemoryBlobStore:
    """Blob store held in a dict; used for cards built in memory."""

    def __init__(self, blobs: dict[str, bytes] | None = None):
        self._blobs: dict[str, bytes] = dict(blobs or {})

    def put(self, data: bytes, media_type: str | None = None) -> BlobRef:
        digest = sha256_hex(data)
        self._blobs.setdefault(digest, bytes(data))
        return BlobRef(digest, len(data), media_type)

    def get(self, ref: BlobRef | str) -> bytes:
        digest = ref if isinstance(ref, str) else ref.digest
        try:
            data = self._blobs[digest]
        except KeyError:
            raise UnknownDigest(digest) from None
        if sha256_hex(data) != digest:
            raise DigestMismatch(f"blob {digest} does not hash to its name")
        return data

    def digests(self) -> list[str]:
        return sorted(self._blobs)

    def __contains__(self, digest: object) -> bool:
        return digest in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)


class DirectoryBlobStore:
    """Blobs stored as ``<root>/<sha256 hex>`` files.

    Puts write to a temporary file and rename it onto the digest name, so
    concurrent writers storing the same bytes race harmlessly.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def put(self, data: bytes, media_type: str | None = None) -> BlobRef:
        digest = sha256_hex(data)
        target = self.root / digest
        if not target.exists():
            self.root.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return BlobRef(digest, len(data), media_type)

    def get(self, ref: BlobRef | str) -> bytes:
        digest = ref if isinstance(ref, str) else ref.digest
        path = self.root / digest
        if not path.is_file():
            raise UnknownDigest(digest)
        data = path.read_bytes()
        if sha256_hex(data) != digest:
            raise DigestMismatch(f"blob file {path} does not hash to its name")
        return data

    def digests(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_file() and not p.name.startswith("."))

    def __contains__(self, digest: object) -> bool:
        return isinstance(digest, str) and (self.root / digest).is_file()

    def __len__(self) -> int:
        return len(self.digests())


def put_blob(store, data: bytes, media_type: str | None = None) -> BlobRef:
    return store.put(data, media_type)


def get_blob(store, ref: BlobRef) -> bytes:
    return store.get(ref)
