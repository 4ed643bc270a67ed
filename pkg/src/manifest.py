import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger

MANIFEST_NAME = "manifest.json"


class ManifestError(Exception):
    """Custom exception for missing or tampered artefacts."""

    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Index of every file a run wrote, with checksums; saved after all outputs."""

    def __init__(self, out_dir: str | Path, run: Optional[dict] = None):
        self.out_dir = Path(out_dir)
        self.run = dict(run or {})
        self.entries: Dict[str, dict] = {}

    def add(self, path: str | Path, parameters: Optional[dict] = None) -> str:
        path = Path(path)
        relative = path.resolve().relative_to(self.out_dir.resolve()).as_posix()
        self.entries[relative] = {
            "path": relative,
            "sha256": sha256_file(path),
            "bytes": path.stat().st_size,
            "parameters": dict(parameters or {}),
        }
        logger.debug(f"Manifest entry {relative}")
        return relative

    def save(self) -> Path:
        target = self.out_dir / MANIFEST_NAME
        data = {
            "run": self.run,
            "files": [self.entries[k] for k in sorted(self.entries)],
        }
        try:
            with open(target, "w", encoding="utf-8", newline="\n") as f:
                json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
                f.write("\n")
        except Exception as e:
            raise ManifestError(f"Failed to save manifest: {e}")
        logger.info(f"Wrote {target} ({len(self.entries)} files)")
        return target

    @classmethod
    def load(cls, out_dir: str | Path) -> "Manifest":
        out_dir = Path(out_dir)
        source = out_dir / MANIFEST_NAME
        try:
            with open(source, "r", encoding="utf-8") as f:
                data = json.load(f)
        except Exception as e:
            raise ManifestError(f"Could not load {source}: {e}")
        manifest = cls(out_dir, data.get("run"))
        for entry in data.get("files", []):
            manifest.entries[entry["path"]] = entry
        return manifest

    def verify(self) -> List[str]:
        """Relative paths whose content no longer matches the recorded checksum."""
        bad = []
        for relative, entry in self.entries.items():
            path = self.out_dir / relative
            if not path.exists() or sha256_file(path) != entry["sha256"]:
                bad.append(relative)
        if bad:
            logger.warning(f"{len(bad)} artefact(s) failed the checksum: {bad}")
        return bad

    def find(self, suffix: str) -> List[str]:
        return sorted(k for k in self.entries if k.endswith(suffix))

    def read_csv(self, relative: str) -> List[dict]:
        if relative not in self.entries:
            raise ManifestError(f"{relative} is not listed in the manifest")
        path = self.out_dir / relative
        if sha256_file(path) != self.entries[relative]["sha256"]:
            raise ManifestError(f"{relative} does not match its manifest checksum")
        with open(path, "r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))
