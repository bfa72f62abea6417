"""Seeded random generator of valid SyncDocuments for round-trip properties."""

import random
from datetime import datetime, timedelta, timezone

from sitemapsync.model import (
    CapabilityKind,
    ChangeKind,
    ResourceEntry,
    ResourceMetadata,
    SyncDocument,
)

_PATH_POOL = [
    "res1",
    "res2.pdf",
    "a/b/c.txt",
    "r%C3%A9sum%C3%A9.txt",
    "data?q=1&page=2",
    "with%20space.bin",
    "deep/er/still/x.tar.gz",
    "x'quote\"d",
    "<angle>&amp",
]

_MIME_POOL = ["text/plain", "application/pdf", 'weird/"type"', "application/octet-stream"]


def random_document(rng: random.Random) -> SyncDocument:
    capability = rng.choice(list(CapabilityKind))
    base = rng.choice(["http://example.com/", "https://mirror.example.org/data/"])
    modified = datetime(2013, 1, 1, tzinfo=timezone.utc) + timedelta(
        seconds=rng.randrange(0, 10_000_000)
    )
    n = rng.choice([0, 1, 2, rng.randrange(3, 30)])
    entries = []
    if capability.is_index:
        names = rng.sample(range(1000), n)
        for i in names:
            entries.append(
                ResourceEntry(
                    uri=f"{base}list-{i}.xml",
                    lastmod=modified if rng.random() < 0.5 else None,
                    metadata=ResourceMetadata(
                        length=rng.randrange(0, 10**9) if rng.random() < 0.3 else None
                    ),
                )
            )
        return SyncDocument(capability, modified, entries)

    is_changelist = capability == CapabilityKind.CHANGELIST
    uris = [base + rng.choice(_PATH_POOL) + f"-{i}" for i in range(n)]
    if is_changelist and n > 1 and rng.random() < 0.5:
        uris[rng.randrange(1, n)] = uris[0]  # repeated URI: multiple events
    lastmod = modified - timedelta(seconds=rng.randrange(0, 100_000))
    for uri in uris:
        meta = ResourceMetadata()
        if is_changelist:
            meta.change = rng.choice(list(ChangeKind))
        if rng.random() < 0.6:
            meta.digests["md5"] = "%032x" % rng.getrandbits(128)
        if rng.random() < 0.3:
            meta.digests["sha-256"] = "%064x" % rng.getrandbits(256)
        if rng.random() < 0.5:
            meta.length = rng.randrange(0, 10**9)
        if rng.random() < 0.4:
            meta.mime_type = rng.choice(_MIME_POOL)
        # change lists must be lastmod-ordered; ties are fine
        if is_changelist:
            if rng.random() < 0.7:
                lastmod = lastmod + timedelta(seconds=rng.randrange(0, 1000))
            entry_lastmod = lastmod
        else:
            entry_lastmod = lastmod if rng.random() < 0.7 else None
        entries.append(ResourceEntry(uri=uri, lastmod=entry_lastmod, metadata=meta))
    if not is_changelist:
        # snapshot documents must not repeat URIs; the pool suffix makes them unique
        assert len({e.uri for e in entries}) == len(entries)
    return SyncDocument(capability, modified, entries)
