"""Per-experiment workspace: artifact files, a hashed manifest, a lock file.

Manifest entries use workspace-relative paths and sha256 content hashes, so
two runs of the same seeded command chain produce byte-identical manifests.
Train logs carry wall-clock times and are deliberately left out.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .errors import SecatError, ValidationError


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class WorkspaceLock:
    def __init__(self, root: Path):
        self.path = root / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise SecatError(
                f"workspace locked by another command: {self.path} exists"
            ) from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


class Workspace:
    MANIFEST = "manifest.json"

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._entries: dict[str, dict] = {}
        mp = self.root / self.MANIFEST
        if mp.exists():
            data = json.loads(mp.read_text(encoding="utf-8"))
            self._entries = {e["name"]: e for e in data["entries"]}

    def lock(self) -> WorkspaceLock:
        return WorkspaceLock(self.root)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def record(self, name: str, rel: str) -> None:
        """Hash a produced artifact and record it under `name`."""
        p = self.root / rel
        if not p.exists():
            raise ValidationError(f"cannot record missing artifact {rel}")
        self._entries[name] = {"name": name, "path": rel, "sha256": sha256_file(p)}
        self._save()

    def resolve(self, name: str, what: str | None = None) -> Path:
        """Path of a recorded artifact, verifying its hash on read."""
        if name not in self._entries:
            raise SecatError(f"missing {what or name}: no {name!r} in manifest")
        e = self._entries[name]
        p = self.root / e["path"]
        if not p.exists():
            raise SecatError(f"missing {what or name}: {p} not found")
        if sha256_file(p) != e["sha256"]:
            raise SecatError(f"artifact {name!r} failed hash verification: {p}")
        return p

    def has(self, name: str) -> bool:
        return name in self._entries

    def manifest_bytes(self) -> bytes:
        entries = [self._entries[k] for k in sorted(self._entries)]
        return (json.dumps({"entries": entries}, sort_keys=True, indent=2) + "\n").encode()

    def _save(self) -> None:
        (self.root / self.MANIFEST).write_bytes(self.manifest_bytes())
