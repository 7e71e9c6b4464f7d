"""Persistent store of per-clip consensus features, queried by time window.

A bank holds, for every (video, clip-time) it was built over, the list of
consensus features of that clip's retained actors (possibly empty).  Lookup
is by binary search over per-video sorted times.  The file format is binary
and bit-exact on round-trip:

    magic "MRLB" | u32 version | u32 dim | u32 omega
    u32 hash_len | config-hash bytes | u32 entry_count
    entries sorted by (video_id, time):
        u32 vid_len | vid utf-8 | i64 time | u32 n_features | n*dim float32 LE
    index: entry_count * u64 byte offset of each entry
    footer: u64 byte offset of the index

All floats little-endian float32.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, ValidationError

MAGIC = b"MRLB"
VERSION = 1


@dataclass
class BankEntry:
    video_id: str
    clip_time_s: int
    features: list[np.ndarray] = field(default_factory=list)


class RelationBank:
    """Write-once feature bank; immutable once built, any number of readers."""

    def __init__(self, dim: int, omega: int, config_hash: str = ""):
        if dim < 1:
            raise DimensionError(f"bank feature width must be >= 1, got {dim}")
        if omega < 0:
            raise ValidationError(f"bank window radius must be >= 0, got {omega}")
        self.dim = int(dim)
        self.omega = int(omega)
        self.config_hash = config_hash
        self._entries: dict[tuple[str, int], BankEntry] = {}
        self._times: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def videos(self) -> list[str]:
        return sorted(self._times)

    def times(self, video_id: str) -> list[int]:
        if video_id not in self._times:
            raise DataError(f"video {video_id!r} not present in bank")
        return list(self._times[video_id])

    def add_entry(self, entry: BankEntry):
        key = (entry.video_id, int(entry.clip_time_s))
        if key in self._entries:
            raise DataError(f"duplicate bank entry for {key}")
        feats = []
        for f in entry.features:
            arr = np.ascontiguousarray(f, dtype=np.float32)
            if arr.shape != (self.dim,):
                raise DimensionError(
                    f"bank feature shape {arr.shape} != ({self.dim},)"
                )
            feats.append(arr)
        entry = BankEntry(entry.video_id, int(entry.clip_time_s), feats)
        self._entries[key] = entry
        times = self._times.setdefault(entry.video_id, [])
        bisect.insort(times, entry.clip_time_s)

    def entry(self, video_id: str, t: int) -> BankEntry:
        key = (video_id, int(t))
        if key not in self._entries:
            raise DataError(f"no bank entry for {key}")
        return self._entries[key]

    def query_window(self, video_id: str, t: int, omega: int | None = None):
        """All features with clip time in [t-omega, t+omega], tagged with their
        signed offset, ordered by time then stored feature order.  Video
        boundaries truncate the window."""
        if video_id not in self._times:
            raise DataError(f"video {video_id!r} not present in bank")
        w = self.omega if omega is None else int(omega)
        if w < 0:
            raise ValidationError(f"window radius must be >= 0, got {w}")
        times = self._times[video_id]
        lo = bisect.bisect_left(times, t - w)
        hi = bisect.bisect_right(times, t + w)
        out = []
        for time in times[lo:hi]:
            for f in self._entries[(video_id, time)].features:
                out.append((time - t, f))
        return out

    # -- serialization -----------------------------------------------------

    def save(self, path):
        hash_bytes = self.config_hash.encode("utf-8")
        keys = sorted(self._entries)
        blob = bytearray()
        blob += MAGIC
        blob += struct.pack("<III", VERSION, self.dim, self.omega)
        blob += struct.pack("<I", len(hash_bytes)) + hash_bytes
        blob += struct.pack("<I", len(keys))
        offsets = []
        for key in keys:
            e = self._entries[key]
            offsets.append(len(blob))
            vid = e.video_id.encode("utf-8")
            blob += struct.pack("<I", len(vid)) + vid
            blob += struct.pack("<q", e.clip_time_s)
            blob += struct.pack("<I", len(e.features))
            for f in e.features:
                blob += f.astype("<f4", copy=False).tobytes()
        index_offset = len(blob)
        for off in offsets:
            blob += struct.pack("<Q", off)
        blob += struct.pack("<Q", index_offset)
        with open(path, "wb") as fh:
            fh.write(bytes(blob))

    @classmethod
    def load(cls, path) -> "RelationBank":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 24 or blob[:4] != MAGIC:
            raise DataError(f"not a relation-bank file: {path}")
        version, dim, omega = struct.unpack_from("<III", blob, 4)
        if version != VERSION:
            raise DataError(f"unsupported bank version {version}")
        pos = 16
        (hash_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        config_hash = blob[pos:pos + hash_len].decode("utf-8")
        pos += hash_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        (index_offset,) = struct.unpack_from("<Q", blob, len(blob) - 8)
        offsets = struct.unpack_from(f"<{count}Q", blob, index_offset)
        bank = cls(dim, omega, config_hash)
        for off in offsets:
            if off != pos:
                raise DataError(f"corrupt bank index: offset {off} != {pos}")
            (vid_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            vid = blob[pos:pos + vid_len].decode("utf-8")
            pos += vid_len
            (time,) = struct.unpack_from("<q", blob, pos)
            pos += 8
            (n_feat,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            feats = []
            for _ in range(n_feat):
                arr = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos).copy()
                feats.append(arr)
                pos += 4 * dim
            bank.add_entry(BankEntry(vid, time, feats))
        return bank
