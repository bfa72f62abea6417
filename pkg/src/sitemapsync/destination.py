"""Destination engine: baseline synchronization, incremental synchronization, audit.

A destination keeps a local store directory plus a JSON state file recording,
per source URI, the relative local path, lastmod, and digest it holds. All
file writes go through a temp file in the store root followed by an atomic
rename, so a killed run never leaves a partial file at a final path.
Infrastructure entries in the store (lock, state, temp files) all start with
``.resync`` and are invisible to synchronization and audit.
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote, unquote

from .atomic import atomic_write_bytes
from .codec import parse_document
from .digests import DEFAULT_ALGORITHM, SUPPORTED_ALGORITHMS, hash_file
from .model import (
    AuditReport,
    CapabilityKind,
    ChangeKind,
    DestinationState,
    ResourceEntry,
    StateRecord,
    SyncReport,
    ValidationError,
    format_w3c_datetime,
    parse_w3c_datetime,
)
from .transport import DigestMismatchError, TransportError, download_to, fetch

logger = logging.getLogger(__name__)

LOCK_FILE_NAME = ".resync.lock"
STATE_FILE_NAME = ".resync.state.json"
_INFRA_PREFIX = ".resync"

STATE_FORMAT_VERSION = 1


@dataclass
class SyncPolicy:
    """Knobs governing how a destination applies source changes."""

    apply_deletes: bool = True
    max_parallel_transfers: int = 4
    verify_digests: bool = True
    # When False, a change entry older than the locally recorded lastmod is
    # skipped (last writer wins); when True the entry is applied anyway.
    stale_wins: bool = False

    def validate(self) -> None:
        if self.max_parallel_transfers < 1:
            raise ValueError("max_parallel_transfers must be >= 1")


class SyncError(Exception):
    """Destination-side operation failed."""


class BaselineRequiredError(SyncError):
    """Incremental synchronization attempted before any completed baseline."""


class StateError(SyncError):
    """State file is corrupt or structurally invalid (never silently reset)."""


class StoreLockedError(SyncError):
    """Another synchronization run holds the store lock."""


class PathMappingError(SyncError):
    """URI cannot be mapped to a safe, unique local path."""


# --- state persistence -----------------------------------------------------

def load_state(path: Path) -> DestinationState:
    """Load destination state; a missing file yields a fresh empty state."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        return DestinationState()
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StateError(f"corrupt state file {path}: {exc}") from None
    if not isinstance(data, dict) or data.get("format_version") != STATE_FORMAT_VERSION:
        raise StateError(f"state file {path} has unsupported format_version")
    try:
        records = {}
        for uri, rec in data["records"].items():
            records[uri] = StateRecord(
                local_path=rec["local_path"],
                lastmod=parse_w3c_datetime(rec["lastmod"]),
                digest=rec["digest"],
            )
        state = DestinationState(
            source_id=data["source_id"],
            records=records,
            last_sync=(
                parse_w3c_datetime(data["last_sync"]) if data["last_sync"] is not None else None
            ),
        )
        state.validate()
    except (KeyError, TypeError, AttributeError, ValidationError) as exc:
        raise StateError(f"state file {path} is structurally invalid: {exc}") from None
    return state


def save_state(state: DestinationState, path: Path) -> None:
    """Atomically persist state as key-sorted JSON."""
    state.validate()
    data = {
        "format_version": STATE_FORMAT_VERSION,
        "source_id": state.source_id,
        "last_sync": format_w3c_datetime(state.last_sync) if state.last_sync else None,
        "records": {
            uri: {
                "local_path": rec.local_path,
                "lastmod": format_w3c_datetime(rec.lastmod),
                "digest": rec.digest,
            }
            for uri, rec in state.records.items()
        },
    }
    atomic_write_bytes(Path(path), json.dumps(data, sort_keys=True, indent=2).encode("utf-8"))


# --- URI <-> local path mapping ---------------------------------------------

def common_uri_prefix(uris: list[str]) -> str:
    """Longest common URI prefix, truncated to a whole path segment boundary."""
    if not uris:
        raise PathMappingError("cannot derive a path mapping from an empty URI set")
    prefix = os.path.commonprefix(uris)
    cut = prefix.rfind("/")
    if cut < 0:
        raise PathMappingError(f"URIs share no common prefix: {uris[0]!r} ...")
    prefix = prefix[: cut + 1]
    # Must keep at least scheme://authority/.
    scheme_end = prefix.find("://")
    if scheme_end < 0 or "/" not in prefix[scheme_end + 3 :]:
        raise PathMappingError(f"URIs share no common authority: {uris[0]!r} ...")
    return prefix


def local_path_for_uri(uri: str, prefix: str) -> str:
    """Map a URI under ``prefix`` to a safe relative path (segments decoded)."""
    if not uri.startswith(prefix) or len(uri) == len(prefix):
        raise PathMappingError(f"URI {uri!r} is outside the mapping prefix {prefix!r}")
    segments = []
    for raw in uri[len(prefix) :].split("/"):
        seg = unquote(raw)
        if seg in ("", ".", "..") or "/" in seg or "\\" in seg or "\x00" in seg:
            raise PathMappingError(f"URI {uri!r} maps to an unsafe path segment {seg!r}")
        segments.append(seg)
    return "/".join(segments)


def uri_for_local_path(rel_path: str, prefix: str) -> str:
    return prefix + "/".join(quote(seg, safe="") for seg in rel_path.split("/"))


def _mapping_prefix(state: DestinationState, listed_uris: list[str]) -> str:
    # Recorded URIs participate so the prefix stays stable across runs that
    # see only a subset of the tree (change lists).
    return common_uri_prefix(sorted(set(listed_uris) | set(state.records)))


def _path_for(state: DestinationState, uri: str, prefix: str) -> str:
    rec = state.records.get(uri)
    if rec is not None:
        return rec.local_path
    return local_path_for_uri(uri, prefix)


# --- shared helpers ----------------------------------------------------------

@contextmanager
def _store_lock(store_dir: Path):
    """One sync run per store at a time; the flock dies with the process."""
    store_dir.mkdir(parents=True, exist_ok=True)
    lock_path = store_dir / LOCK_FILE_NAME
    fd = os.open(lock_path, os.O_CREAT | os.O_RDWR, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            raise StoreLockedError(f"another sync run holds {lock_path}") from None
        os.ftruncate(fd, 0)
        os.write(fd, f"{os.getpid()}\n".encode())
        yield
    finally:
        os.close(fd)


def _fetch_entries(
    document_uri: str, expect_entry_capability: CapabilityKind, *, timeout: float, backoff
) -> tuple:
    """Fetch a list document, following an index to its members if needed.

    Returns (modified, entries). For change lists, entries from multiple
    members are merged in lastmod order (stable).
    """
    root = parse_document(fetch(document_uri, timeout=timeout, backoff=backoff).body)
    if root.capability == expect_entry_capability:
        return root.modified, list(root.entries)
    expected_index = (
        CapabilityKind.RESOURCELIST_INDEX
        if expect_entry_capability == CapabilityKind.RESOURCELIST
        else CapabilityKind.CHANGELIST_INDEX
    )
    if root.capability != expected_index:
        raise SyncError(
            f"{document_uri} has capability {root.capability.value}, "
            f"expected {expect_entry_capability.value} or {expected_index.value}"
        )
    entries: list[ResourceEntry] = []
    for member in root.entries:
        doc = parse_document(fetch(member.uri, timeout=timeout, backoff=backoff).body)
        if doc.capability != expect_entry_capability:
            raise SyncError(
                f"index member {member.uri} has capability {doc.capability.value}"
            )
        entries.extend(doc.entries)
    if expect_entry_capability == CapabilityKind.RESOURCELIST:
        seen = set()
        for entry in entries:
            if entry.uri in seen:
                raise SyncError(f"URI {entry.uri} listed by more than one index member")
            seen.add(entry.uri)
    else:
        entries.sort(key=lambda e: e.lastmod)  # stable: ties keep member order
    return root.modified, entries


def _store_files(store_dir: Path):
    """Relative paths of synchronized files, skipping .resync infrastructure."""
    for dirpath, dirnames, filenames in os.walk(store_dir):
        dirnames[:] = sorted(d for d in dirnames if not d.startswith(_INFRA_PREFIX))
        for name in sorted(filenames):
            if name.startswith(_INFRA_PREFIX):
                continue
            yield (Path(dirpath) / name).relative_to(store_dir).as_posix()


def _prune_empty_dirs(store_dir: Path) -> None:
    for dirpath, dirnames, filenames in os.walk(store_dir, topdown=False):
        path = Path(dirpath)
        if path != store_dir and not dirnames and not filenames:
            try:
                path.rmdir()
            except OSError:
                pass


def _pick_listed_digest(entry: ResourceEntry) -> tuple[str, str] | None:
    """Strongest usable digest from a list entry: first supported algorithm."""
    for algo in sorted(entry.metadata.digests):
        if algo in SUPPORTED_ALGORITHMS:
            return algo, entry.metadata.digests[algo]
    return None


def _download_resource(
    uri: str, final_path: Path, store_dir: Path, expected: str | None, *, timeout, backoff
) -> tuple[int, str]:
    """Download to a temp file in the store root, verify, atomically rename.

    A digest mismatch is retried once before failing.
    """
    attempts = 2 if expected is not None else 1
    for attempt in range(attempts):
        fd, tmp = tempfile.mkstemp(dir=store_dir, prefix=_INFRA_PREFIX + ".tmp-")
        os.close(fd)
        tmp_path = Path(tmp)
        try:
            length, digest = download_to(
                uri, tmp_path, expected, timeout=timeout, backoff=backoff
            )
        except DigestMismatchError:
            tmp_path.unlink(missing_ok=True)
            if attempt + 1 < attempts:
                logger.warning("digest mismatch for %s, retrying once", uri)
                continue
            raise
        except BaseException:
            tmp_path.unlink(missing_ok=True)
            raise
        final_path.parent.mkdir(parents=True, exist_ok=True)
        os.replace(tmp_path, final_path)
        return length, digest
    raise AssertionError("unreachable")


# --- baseline ----------------------------------------------------------------

def baseline_sync(
    resource_list_uri: str,
    store_dir: Path,
    state: DestinationState,
    policy: SyncPolicy | None = None,
    *,
    state_path: Path | None = None,
    timeout: float = 30.0,
    backoff: tuple[float, ...] = (1.0, 2.0),
) -> SyncReport:
    """Align the store with the source's full resource list.

    Resources already present with a matching digest are skipped without
    transfer. Local files not in the list are deleted when the policy says
    so. ``state.last_sync`` advances to the list's modified instant only if
    nothing failed; successful transfers are recorded either way.
    """
    policy = policy or SyncPolicy()
    store_dir = Path(store_dir)
    report = SyncReport()
    with _store_lock(store_dir):
        try:
            modified, entries = _fetch_entries(
                resource_list_uri, CapabilityKind.RESOURCELIST, timeout=timeout, backoff=backoff
            )
            state.source_id = resource_list_uri

            path_map: dict[str, str] = {}
            if entries:
                prefix = _mapping_prefix(state, [e.uri for e in entries])
                for entry in entries:
                    path_map[entry.uri] = _path_for(state, entry.uri, prefix)
                _reject_collisions(path_map)

            to_download: list[ResourceEntry] = []
            for entry in entries:
                rel = path_map[entry.uri]
                local = store_dir / rel
                lastmod = entry.lastmod or modified
                listed = _pick_listed_digest(entry)
                if local.is_file():
                    if listed is not None:
                        algo, expected_hex = listed
                        actual = hash_file(local, (algo,))[algo]
                        if actual == expected_hex:
                            report.skipped += 1
                            state.records[entry.uri] = StateRecord(
                                rel, lastmod, f"{algo}:{actual}"
                            )
                            continue
                    else:
                        length = entry.metadata.length
                        if length is None or local.stat().st_size == length:
                            report.skipped += 1
                            digest = hash_file(local, (DEFAULT_ALGORITHM,))[DEFAULT_ALGORITHM]
                            state.records[entry.uri] = StateRecord(
                                rel, lastmod, f"{DEFAULT_ALGORITHM}:{digest}"
                            )
                            continue
                to_download.append(entry)

            def work(entry: ResourceEntry):
                rel = path_map[entry.uri]
                expected = None
                listed = _pick_listed_digest(entry)
                if policy.verify_digests and listed is not None:
                    expected = f"{listed[0]}:{listed[1]}"
                return _download_resource(
                    entry.uri, store_dir / rel, store_dir, expected,
                    timeout=timeout, backoff=backoff,
                )

            with ThreadPoolExecutor(max_workers=policy.max_parallel_transfers) as pool:
                futures = {pool.submit(work, e): e for e in to_download}
                for future in as_completed(futures):
                    entry = futures[future]
                    try:
                        length, digest = future.result()
                    except (TransportError, OSError) as exc:
                        report.failures.append((entry.uri, str(exc)))
                        report.failed += 1
                        continue
                    was_known = entry.uri in state.records
                    state.records[entry.uri] = StateRecord(
                        path_map[entry.uri], entry.lastmod or modified, digest
                    )
                    report.bytes_transferred += length
                    if was_known:
                        report.updated += 1
                    else:
                        report.created += 1

            listed_paths = set(path_map.values())
            listed_uris = set(path_map)
            for rel in list(_store_files(store_dir)):
                if rel in listed_paths:
                    continue
                if policy.apply_deletes:
                    (store_dir / rel).unlink(missing_ok=True)
                    report.deleted += 1
                else:
                    logger.warning("extraneous local file kept (no-delete policy): %s", rel)
            for uri in list(state.records):
                if uri not in listed_uris and policy.apply_deletes:
                    del state.records[uri]
            _prune_empty_dirs(store_dir)

            if report.failed == 0:
                state.last_sync = modified
            return report
        finally:
            if state_path is not None:
                save_state(state, state_path)


def _reject_collisions(path_map: dict[str, str]) -> None:
    by_path: dict[str, str] = {}
    for uri, rel in path_map.items():
        other = by_path.get(rel)
        if other is not None:
            raise PathMappingError(f"URIs {other!r} and {uri!r} both map to {rel!r}")
        by_path[rel] = uri


# --- incremental -------------------------------------------------------------

def incremental_sync(
    changelist_uri: str,
    store_dir: Path,
    state: DestinationState,
    policy: SyncPolicy | None = None,
    *,
    state_path: Path | None = None,
    timeout: float = 30.0,
    backoff: tuple[float, ...] = (1.0, 2.0),
) -> SyncReport:
    """Apply a change list: download created/updated entries, remove deleted.

    Entries with lastmod <= last_sync are already reflected and are filtered
    out before any counting. Remaining entries are applied in lastmod order;
    within one run, multiple events for the same URI coalesce onto the final
    event (the source only serves the latest representation), while every
    entry still counts toward the report under its own change kind.
    """
    if state.last_sync is None:
        raise BaselineRequiredError("incremental sync requires a completed baseline")
    policy = policy or SyncPolicy()
    store_dir = Path(store_dir)
    report = SyncReport()
    with _store_lock(store_dir):
        try:
            modified, entries = _fetch_entries(
                changelist_uri, CapabilityKind.CHANGELIST, timeout=timeout, backoff=backoff
            )
            pending = [e for e in entries if e.lastmod > state.last_sync]
            if not pending:
                return report

            prefix = _mapping_prefix(state, [e.uri for e in pending])
            groups: dict[str, list[ResourceEntry]] = {}
            for entry in pending:
                groups.setdefault(entry.uri, []).append(entry)
            path_map = {uri: _path_for(state, uri, prefix) for uri in groups}
            _reject_collisions(path_map)

            def apply_group(uri: str):
                """Returns (action, length, digest); action drives record upkeep."""
                group = groups[uri]
                final = group[-1]
                rel = path_map[uri]
                local = store_dir / rel
                if final.metadata.change == ChangeKind.DELETED:
                    if not policy.apply_deletes:
                        return "suppressed", 0, None
                    local.unlink(missing_ok=True)
                    return "deleted", 0, None
                record = state.records.get(uri)
                if (
                    record is not None
                    and final.lastmod < record.lastmod
                    and not policy.stale_wins
                ):
                    return "stale", 0, None
                expected = None
                listed = _pick_listed_digest(final)
                if policy.verify_digests and listed is not None:
                    expected = f"{listed[0]}:{listed[1]}"
                length, digest = _download_resource(
                    uri, local, store_dir, expected, timeout=timeout, backoff=backoff
                )
                return "stored", length, digest

            with ThreadPoolExecutor(max_workers=policy.max_parallel_transfers) as pool:
                futures = {pool.submit(apply_group, uri): uri for uri in groups}
                for future in as_completed(futures):
                    uri = futures[future]
                    group = groups[uri]
                    try:
                        action, length, digest = future.result()
                    except (TransportError, OSError, PathMappingError) as exc:
                        report.failures.append((uri, str(exc)))
                        report.failed += 1
                        continue
                    if action in ("stale", "suppressed"):
                        report.skipped += len(group)
                        continue
                    final = group[-1]
                    if action == "deleted":
                        state.records.pop(uri, None)
                    else:
                        state.records[uri] = StateRecord(path_map[uri], final.lastmod, digest)
                        report.bytes_transferred += length
                    for entry in group:
                        kind = entry.metadata.change
                        if kind == ChangeKind.CREATED:
                            report.created += 1
                        elif kind == ChangeKind.UPDATED:
                            report.updated += 1
                        elif kind == ChangeKind.DELETED:
                            report.deleted += 1

            _prune_empty_dirs(store_dir)
            if report.failed == 0 and modified > state.last_sync:
                state.last_sync = modified
            return report
        finally:
            if state_path is not None:
                save_state(state, state_path)


# --- audit --------------------------------------------------------------------

def audit(
    resource_list_uri: str,
    store_dir: Path,
    state: DestinationState,
    policy: SyncPolicy | None = None,
    *,
    timeout: float = 30.0,
    backoff: tuple[float, ...] = (1.0, 2.0),
) -> AuditReport:
    """Read-only comparison of the store against the source's resource list.

    Per listed URI the strongest available evidence decides: digest
    (recomputed over local bytes), then length, then lastmod; a list without
    any metadata can only surface missing/extraneous. No resource bodies are
    transferred and nothing is mutated.
    """
    store_dir = Path(store_dir)
    _, entries = _fetch_entries(
        resource_list_uri, CapabilityKind.RESOURCELIST, timeout=timeout, backoff=backoff
    )
    report = AuditReport()
    listed_uris = [e.uri for e in entries]
    prefix = None
    if listed_uris or state.records:
        prefix = _mapping_prefix(state, listed_uris)

    warned_no_evidence = False
    checked_paths: set[str] = set()
    for entry in entries:
        try:
            rel = _path_for(state, entry.uri, prefix)
        except PathMappingError:
            report.missing.append(entry.uri)
            continue
        checked_paths.add(rel)
        local = store_dir / rel
        if not local.is_file():
            report.missing.append(entry.uri)
            continue
        listed = _pick_listed_digest(entry)
        record = state.records.get(entry.uri)
        if listed is not None:
            algo, expected_hex = listed
            if hash_file(local, (algo,))[algo] != expected_hex:
                report.stale.append(entry.uri)
                continue
        elif entry.metadata.length is not None:
            if local.stat().st_size != entry.metadata.length:
                report.stale.append(entry.uri)
                continue
        elif entry.lastmod is not None and record is not None:
            if record.lastmod != entry.lastmod:
                report.stale.append(entry.uri)
                continue
        else:
            if not warned_no_evidence:
                logger.warning(
                    "resource list carries no digests/length/lastmod; "
                    "audit can only detect missing and extraneous resources"
                )
                warned_no_evidence = True
        report.in_sync += 1

    listed_set = set(listed_uris)
    for uri in state.records:
        if uri not in listed_set:
            report.extraneous.append(uri)
    recorded_paths = {rec.local_path for rec in state.records.values()}
    for rel in _store_files(store_dir):
        if rel in recorded_paths or rel in checked_paths:
            continue
        uri = uri_for_local_path(rel, prefix) if prefix else rel
        report.extraneous.append(uri)
    return report
