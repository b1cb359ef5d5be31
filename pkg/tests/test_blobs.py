from __future__ import annotations

import hashlib

import pytest

from rollout_cards.blobs import BlobRef, DirectoryBlobStore, MemoryBlobStore, is_blob_ref, iter_blob_refs, sha256_hex
from rollout_cards.errors import UnknownDigest


@pytest.mark.parametrize("store_kind", ["memory", "directory"])
def test_put_get_is_content_addressed(tmp_path, store_kind):
    store = MemoryBlobStore() if store_kind == "memory" else DirectoryBlobStore(tmp_path / "blobs")
    ref = store.put(b"hello", "text/plain")
    assert ref.digest == hashlib.sha256(b"hello").hexdigest()
    assert ref.byte_length == 5
    assert store.get(ref) == b"hello"
    assert store.put(b"hello").digest == ref.digest
    assert len(store) == 1
    assert ref.digest in store


def test_unknown_digest():
    with pytest.raises(UnknownDigest):
        MemoryBlobStore().get(sha256_hex(b"absent"))


def test_ref_round_trip_and_discovery():
    ref = BlobRef(sha256_hex(b"x"), 1, "text/plain")
    doc = ref.to_json()
    assert is_blob_ref(doc)
    assert BlobRef.from_json(doc) == ref
    nested = {"a": [1, {"b": doc}], "c": doc}
    assert [r.digest for r in iter_blob_refs(nested)] == [ref.digest, ref.digest]
