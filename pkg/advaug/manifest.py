"""
Run manifests: what a command was asked to do and what it wrote.

A manifest echoes the command name, its positional arguments and every
option, plus the sha256 of each input and output file. Replaying it
re-runs the command with the same arguments and compares output hashes.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from django.utils.timezone import now

from advaug.errors import FormatError
from advaug.util import read_json, sha256_file, write_json

MANIFEST_FORMAT = "advaug-manifest"
MANIFEST_VERSION = 1


@dataclass
class RunManifest:
    command: str
    args: list = field(default_factory=list)
    options: dict = field(default_factory=dict)
    seed: Optional[int] = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    fingerprints: dict = field(default_factory=dict)
    started: str = ""
    seconds: float = 0.0

    def add_input(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path):
        self.outputs[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "command": self.command,
            "args": self.args,
            "options": self.options,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "fingerprints": self.fingerprints,
            "wall_clock": {"started": self.started, "seconds": self.seconds},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunManifest":
        if payload.get("version") != MANIFEST_VERSION:
            version = payload.get("version")
            raise FormatError(f"unsupported manifest version {version!r}")
        try:
            clock = payload.get("wall_clock", {})
            return cls(
                command=payload["command"],
                args=list(payload["args"]),
                options=dict(payload["options"]),
                seed=payload.get("seed"),
                inputs=dict(payload["inputs"]),
                outputs=dict(payload["outputs"]),
                fingerprints=dict(payload.get("fingerprints", {})),
                started=clock.get("started", ""),
                seconds=float(clock.get("seconds", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest: {exc!r}")

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_dict(read_json(path, MANIFEST_FORMAT))

    def start_clock(self):
        self.started = now().isoformat()

    def mismatches(self) -> list[str]:
        """Outputs whose current hash differs from the recorded one."""
        found = []
        for path, expected in sorted(self.outputs.items()):
            if not Path(path).exists():
                found.append(f"{path}: missing")
                continue
            actual = sha256_file(path)
            if actual != expected:
                found.append(f"{path}: {expected[:12]} != {actual[:12]}")
        return found


def default_manifest_path(first_output) -> Path:
    out = Path(first_output)
    return out.with_name(f"{out.name}.manifest.json")
