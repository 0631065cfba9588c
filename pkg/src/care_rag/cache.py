"""On-disk content-addressed store for completion results.

Layout: ``{root}/{digest[:2]}/{digest}.json`` holding
``{request, text, usage, created_at}``. Writes go to a temporary file in the
same directory and are renamed into place, so concurrent writers never leave
a torn entry behind.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any


@dataclass
class CacheStats:
    entries: int
    bytes: int
    temp_files: int

    def to_dict(self) -> dict[str, int]:
        return {"entries": self.entries, "bytes": self.bytes, "temp_files": self.temp_files}


class DiskCache:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def path_for(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, digest: str) -> dict[str, Any] | None:
        path = self.path_for(digest)
        try:
            with open(path, encoding="utf-8") as fh:
                entry = json.load(fh)
        except FileNotFoundError:
            return None
        except (json.JSONDecodeError, UnicodeDecodeError):
            # A corrupt entry is treated as a miss and overwritten on the next put.
            return None
        if not isinstance(entry, dict) or not isinstance(entry.get("text"), str):
            return None
        return entry

    def put(self, digest: str, request: dict[str, Any], text: str, usage: dict | None) -> Path:
        path = self.path_for(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        body = {
            "request": request,
            "text": text,
            "usage": usage,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(body, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    def __contains__(self, digest: str) -> bool:
        return self.get(digest) is not None

    def _walk(self):
        if not self.root.is_dir():
            return
        for sub in sorted(self.root.iterdir()):
            if sub.is_dir():
                yield from sorted(sub.glob("*.json"))

    def stats(self) -> CacheStats:
        entries = size = temps = 0
        for path in self._walk():
            if path.name.startswith(".tmp-"):
                temps += 1
                continue
            entries += 1
            size += path.stat().st_size
        return CacheStats(entries=entries, bytes=size, temp_files=temps)

    def gc(self, older_than_days: float | None = None) -> int:
        """Delete stale temp files, unreadable entries and, optionally, old entries.

        Returns the number of files removed.
        """
        removed = 0
        cutoff = None if older_than_days is None else time.time() - older_than_days * 86400
        for path in list(self._walk()):
            if path.name.startswith(".tmp-"):
                path.unlink(missing_ok=True)
                removed += 1
                continue
            digest = path.stem
            if self.get(digest) is None or (cutoff is not None and path.stat().st_mtime < cutoff):
                path.unlink(missing_ok=True)
                removed += 1
        for sub in list(self.root.iterdir()) if self.root.is_dir() else []:
            if sub.is_dir() and not any(sub.iterdir()):
                sub.rmdir()
        return removed
