"""Reading and writing card bundles on a directory or zip carrier.

Layout, identical in both carriers::

    manifest.json
    events.jsonl nodes.jsonl edges.jsonl annotations.jsonl mutations.jsonl
    blobs/<sha256 hex>

The manifest is written last, so an interrupted write never leaves a
bundle whose hashes check out.
"""

from __future__ import annotations

import hashlib
import io
import os
import shutil
import tempfile
import zipfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

from . import jsontext
from .blobs import DirectoryBlobStore, MemoryBlobStore, is_blob_ref, sha256_hex
from .errors import (
    ConformanceError,
    InvariantViolation,
    IoFailure,
    MissingStream,
    OversizedInlinePayload,
    HashMismatch,
    UnsupportedMajorVersion,
)
from .model import (
    INLINE_CAP,
    STREAM_NAMES,
    SUPPORTED_MAJOR,
    AnnotationRow,
    CardBundle,
    EventRow,
    LazyStream,
    Manifest,
    parse_row,
    serialize_row,
)

MANIFEST_NAME = "manifest.json"
BLOB_DIR = "blobs"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def stream_file(stream: str) -> str:
    return f"{stream}.jsonl"


@dataclass(frozen=True)
class Carrier:
    kind: str  # "directory" | "zip"
    path: Path

    def __post_init__(self):
        if self.kind not in ("directory", "zip"):
            raise ValueError(f"unknown carrier kind {self.kind!r}")
        object.__setattr__(self, "path", Path(self.path))

    @classmethod
    def for_path(cls, path: str | os.PathLike) -> "Carrier":
        path = Path(path)
        if path.suffix == ".zip" or (path.is_file() and zipfile.is_zipfile(path)):
            return cls("zip", path)
        return cls("directory", path)


def as_carrier(target) -> Carrier:
    return target if isinstance(target, Carrier) else Carrier.for_path(target)


# ---------------------------------------------------------------------------
# raw access to carrier contents


class Source:
    """Byte-level access to the artefacts of a bundle on some carrier."""

    def read(self, name: str) -> bytes | None:
        raise NotImplementedError

    def names(self) -> list[str]:
        raise NotImplementedError

    def blob_names(self) -> list[str]:
        prefix = BLOB_DIR + "/"
        return sorted(n[len(prefix):] for n in self.names() if n.startswith(prefix) and len(n) > len(prefix))

    def close(self) -> None:
        pass


class DirectorySource(Source):
    def __init__(self, root: Path):
        self.root = root

    def read(self, name: str) -> bytes | None:
        path = self.root / name
        return path.read_bytes() if path.is_file() else None

    def names(self) -> list[str]:
        out = []
        for path in sorted(self.root.rglob("*")):
            if path.is_file():
                out.append(path.relative_to(self.root).as_posix())
            elif path.is_dir():
                out.append(path.relative_to(self.root).as_posix() + "/")
        return out

    def iter_lines(self, name: str) -> Iterator[str]:
        with open(self.root / name, "rb") as fh:
            for raw in fh:
                yield _decode_line(name, raw)


class ZipSource(Source):
    def __init__(self, path: Path):
        try:
            self._zip = zipfile.ZipFile(path)
        except (OSError, zipfile.BadZipFile) as exc:
            raise IoFailure(f"cannot open zip carrier {path}: {exc}") from exc
        self._names = set(self._zip.namelist())

    def read(self, name: str) -> bytes | None:
        if name not in self._names:
            return None
        return self._zip.read(name)

    def names(self) -> list[str]:
        return sorted(self._names)

    def close(self) -> None:
        self._zip.close()


def open_source(carrier: Carrier) -> Source:
    carrier = as_carrier(carrier)
    if carrier.kind == "zip":
        if not carrier.path.is_file():
            raise IoFailure(f"zip carrier {carrier.path} does not exist")
        return ZipSource(carrier.path)
    if not carrier.path.is_dir():
        raise IoFailure(f"bundle directory {carrier.path} does not exist")
    return DirectorySource(carrier.path)


def _decode_line(name: str, raw: bytes) -> str:
    if raw.endswith(b"\n"):
        raw = raw[:-1]
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        from .errors import MalformedRecord

        raise MalformedRecord(name, f"invalid UTF-8: {exc}") from None


def split_lines(data: bytes) -> list[bytes]:
    """Split stream bytes into lines; a trailing newline does not add a row."""
    if not data:
        return []
    lines = data.split(b"\n")
    if lines[-1] == b"":
        lines.pop()
    return lines


# ---------------------------------------------------------------------------
# writing


def _offload_payload(payload: dict, blobs, cap: int) -> dict:
    payload = dict(payload)
    while len(jsontext.dumps(payload).encode("utf-8")) > cap:
        candidates = [
            (len(jsontext.dumps(v).encode("utf-8")), k)
            for k, v in payload.items()
            if not is_blob_ref(v)
        ]
        if not candidates:
            break
        _, key = max(candidates)
        value = payload[key]
        if isinstance(value, str):
            ref = blobs.put(value.encode("utf-8"), "text/plain; charset=utf-8")
        else:
            ref = blobs.put(jsontext.dumps(value).encode("utf-8"), "application/json")
        payload[key] = ref.to_json()
    return payload


def _prepare_rows(card: CardBundle, blobs: MemoryBlobStore, offload: bool, cap: int):
    """Serialize every stream, enforcing the inline cap on payloads; offloads go to ``blobs``."""
    encoded: dict[str, bytes] = {}
    for stream in STREAM_NAMES:
        buf = io.BytesIO()
        for row in card.rows(stream):
            if isinstance(row, (EventRow, AnnotationRow)):
                size = len(jsontext.dumps(row.payload).encode("utf-8"))
                if size > cap:
                    if not offload:
                        ident = row.event_id if isinstance(row, EventRow) else f"{row.namespace}:{row.target_id}"
                        raise OversizedInlinePayload(ident, size, cap)
                    row = replace(row, payload=_offload_payload(row.payload, blobs, cap))
            buf.write(serialize_row(row).encode("utf-8"))
            buf.write(b"\n")
        encoded[stream] = buf.getvalue()
    return encoded


def _zip_entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.create_system = 3
    if name.endswith("/"):
        info.external_attr = (0o40755 << 16) | 0x10
        info.compress_type = zipfile.ZIP_STORED
    else:
        info.external_attr = 0o100644 << 16
        info.compress_type = zipfile.ZIP_DEFLATED
    return info


def _write_zip(path: Path, entries: list[tuple[str, bytes]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".zip")
    os.close(fd)
    try:
        with zipfile.ZipFile(tmp, "w") as zf:
            for name, data in entries:
                zf.writestr(_zip_entry(name), data, compresslevel=6 if not name.endswith("/") else None)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_directory(root: Path, streams: dict[str, bytes], blobs: dict[str, bytes], manifest: bytes) -> None:
    root.mkdir(parents=True, exist_ok=True)
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        manifest_path.unlink()
    for stream in STREAM_NAMES:
        (root / stream_file(stream)).write_bytes(streams[stream])
    blob_dir = root / BLOB_DIR
    blob_dir.mkdir(exist_ok=True)
    store = DirectoryBlobStore(blob_dir)
    for digest, data in blobs.items():
        if digest not in store:
            store.put(data)
    for stale in set(store.digests()) - set(blobs):
        (blob_dir / stale).unlink()
    tmp = root / (MANIFEST_NAME + ".tmp")
    tmp.write_bytes(manifest)
    os.replace(tmp, manifest_path)


def write_bundle(
    card: CardBundle,
    carrier,
    *,
    offload: bool = False,
    inline_cap: int = INLINE_CAP,
    check: bool = True,
) -> Manifest:
    """Write ``card`` to ``carrier`` and return the manifest as written.

    With ``offload`` set, payloads above ``inline_cap`` are moved into the
    blob store and replaced by references; otherwise they are an error.
    ``check`` runs the cross-row invariants before anything touches disk.
    """
    carrier = as_carrier(carrier)
    if check:
        from .validate import check_card  # validate imports this module

        problems = check_card(card)
        if problems:
            first = problems[0]
            raise InvariantViolation(f"{first.code} in {first.stream}: {first.message}")
    # offloading adds blobs; keep them off the caller's store
    blobs = MemoryBlobStore({d: card.blobs.get(d) for d in card.blobs.digests()})
    streams = _prepare_rows(card, blobs, offload, inline_cap)
    blob_bytes = {d: blobs.get(d) for d in blobs.digests()}
    manifest = replace(
        card.manifest,
        stream_hashes={s: sha256_hex(streams[s]) for s in STREAM_NAMES},
        blob_index=tuple(sorted(blob_bytes)),
    )
    manifest_bytes = manifest.to_text().encode("utf-8")
    try:
        if carrier.kind == "zip":
            entries = [(stream_file(s), streams[s]) for s in STREAM_NAMES]
            entries.append((BLOB_DIR + "/", b""))
            entries.extend((f"{BLOB_DIR}/{d}", blob_bytes[d]) for d in sorted(blob_bytes))
            entries.append((MANIFEST_NAME, manifest_bytes))
            _write_zip(carrier.path, entries)
        else:
            _write_directory(carrier.path, streams, blob_bytes, manifest_bytes)
    except OSError as exc:
        raise IoFailure(f"writing {carrier.path}: {exc}") from exc
    return manifest


# ---------------------------------------------------------------------------
# reading


def read_manifest(source: Source) -> Manifest:
    raw = source.read(MANIFEST_NAME)
    if raw is None:
        raise IoFailure("bundle has no manifest.json")
    try:
        manifest = Manifest.from_text(raw.decode("utf-8"))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConformanceError(f"malformed manifest.json: {exc}") from exc
    if manifest.format_version.major != SUPPORTED_MAJOR:
        raise UnsupportedMajorVersion(manifest.format_version.major, SUPPORTED_MAJOR)
    return manifest


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_bundle(carrier, mode: str = "eager", *, verify: bool = True) -> CardBundle:
    """Load a bundle. ``mode`` is ``"eager"`` (rows in lists) or ``"lazy"``.

    Stream hashes are checked against the manifest unless ``verify`` is off.
    """
    if mode not in ("eager", "lazy"):
        raise ValueError(f"mode must be 'eager' or 'lazy', not {mode!r}")
    carrier = as_carrier(carrier)
    source = open_source(carrier)
    try:
        manifest = read_manifest(source)
        streams: dict = {}
        for stream in STREAM_NAMES:
            name = stream_file(stream)
            expected = manifest.stream_hashes.get(stream)
            if mode == "lazy" and isinstance(source, DirectorySource):
                path = source.root / name
                if not path.is_file():
                    if expected is not None:
                        raise MissingStream(stream)
                    streams[stream] = []
                    continue
                if verify and expected is not None and _hash_file(path) != expected:
                    raise HashMismatch(stream)
                streams[stream] = LazyStream(stream, lambda n=name, s=source: s.iter_lines(n))
                continue
            data = source.read(name)
            if data is None:
                if expected is not None:
                    raise MissingStream(stream)
                streams[stream] = []
                continue
            if verify and expected is not None and sha256_hex(data) != expected:
                raise HashMismatch(stream)
            lines = [_decode_line(name, raw) for raw in split_lines(data)]
            if mode == "lazy":
                streams[stream] = LazyStream(stream, lambda ls=lines: iter(ls))
            else:
                streams[stream] = [parse_row(stream, line) for line in lines]
        if isinstance(source, DirectorySource):
            blobs = DirectoryBlobStore(source.root / BLOB_DIR)
        else:
            blobs = MemoryBlobStore({d: source.read(f"{BLOB_DIR}/{d}") for d in source.blob_names()})
    except OSError as exc:
        raise IoFailure(f"reading {carrier.path}: {exc}") from exc
    finally:
        source.close()
    return CardBundle(manifest, streams, blobs)


# ---------------------------------------------------------------------------
# carrier conversion


def convert(src, dst) -> None:
    """Copy a bundle between carriers byte-for-byte (pack/unpack)."""
    src, dst = as_carrier(src), as_carrier(dst)
    source = open_source(src)
    try:
        if source.read(MANIFEST_NAME) is None:
            raise IoFailure(f"{src.path} has no manifest.json")
        entries = []
        for stream in STREAM_NAMES:
            data = source.read(stream_file(stream))
            if data is not None:
                entries.append((stream_file(stream), data))
        blob_names = source.blob_names()
        blob_entries = [(f"{BLOB_DIR}/{d}", source.read(f"{BLOB_DIR}/{d}")) for d in blob_names]
        manifest = source.read(MANIFEST_NAME)
    finally:
        source.close()
    try:
        if dst.kind == "zip":
            _write_zip(dst.path, entries + [(BLOB_DIR + "/", b"")] + blob_entries + [(MANIFEST_NAME, manifest)])
        else:
            root = dst.path
            if root.exists():
                shutil.rmtree(root)
            root.mkdir(parents=True)
            for name, data in entries + blob_entries:
                (root / name).parent.mkdir(parents=True, exist_ok=True)
                (root / name).write_bytes(data)
            (root / BLOB_DIR).mkdir(exist_ok=True)
            (root / MANIFEST_NAME).write_bytes(manifest)
    except OSError as exc:
        raise IoFailure(f"writing {dst.path}: {exc}") from exc
