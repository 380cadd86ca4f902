"""Session captures: raw handshake frames plus non-secret annotations.

The file format is line-oriented text.  Frame lines are ``c2s <hex>`` or
``s2c <hex>`` in wire order; annotation lines are ``# key: value`` and
carry only non-secret verdicts (negotiated algorithms, whether the chain
was accepted, the authentication outcome).  Secret keys, session keys, and
credential plaintext never enter a capture, so transcript dumps can show
everything they contain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import QshError
from .frames import Frame, frame_decode, frame_encode
from .primitives import sha256

_DIRECTIONS = ("c2s", "s2c")
_PREVIEW_LEN = 16


class CaptureError(QshError):
    pass


@dataclass(frozen=True)
class CaptureEntry:
    direction: str
    data: bytes

    def __post_init__(self) -> None:
        if self.direction not in _DIRECTIONS:
            raise CaptureError(f"direction must be one of {_DIRECTIONS}")


@dataclass
class SessionCapture:
    entries: list[CaptureEntry] = field(default_factory=list)
    annotations: list[tuple[str, str]] = field(default_factory=list)

    def record(self, direction: str, frame: Frame | bytes) -> None:
        data = frame if isinstance(frame, bytes) else frame_encode(frame)
        self.entries.append(CaptureEntry(direction, data))

    def annotate(self, key: str, value: str) -> None:
        self.annotations.append((key, value))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(f"{entry.direction} {entry.data.hex()}\n")
            for key, value in self.annotations:
                fh.write(f"# {key}: {value}\n")

    @classmethod
    def load(cls, path) -> "SessionCapture":
        capture = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if ":" not in body:
                        raise CaptureError(f"{path}: line {line_no}: malformed annotation")
                    key, value = body.split(":", 1)
                    capture.annotate(key.strip(), value.strip())
                    continue
                parts = line.split()
                if len(parts) != 2 or parts[0] not in _DIRECTIONS:
                    raise CaptureError(f"{path}: line {line_no}: malformed frame line")
                try:
                    data = bytes.fromhex(parts[1])
                except ValueError:
                    raise CaptureError(f"{path}: line {line_no}: bad hex") from None
                capture.record(parts[0], data)
        return capture

    @property
    def raw_frames(self) -> bytes:
        return b"".join(entry.data for entry in self.entries)


def render_dump(capture: SessionCapture) -> str:
    """Human-readable transcript: per-frame TLV breakdown with the running
    hash after each frame, followed by the recorded verdict lines."""
    lines = []
    running = bytearray()
    for number, entry in enumerate(capture.entries, start=1):
        running += entry.data
        try:
            frame = frame_decode(entry.data)
        except QshError as exc:
            lines.append(
                f"frame {number} {entry.direction} UNDECODABLE "
                f"{len(entry.data)} bytes ({exc})"
            )
            continue
        lines.append(
            f"frame {number} {entry.direction} {frame.type_name} {len(entry.data)} bytes"
        )
        for field_id, value in sorted(frame.fields().items()):
            preview = value[:_PREVIEW_LEN].hex()
            suffix = "..." if len(value) > _PREVIEW_LEN else ""
            lines.append(f"  field {field_id:#04x} len {len(value)} {preview}{suffix}")
        lines.append(f"  running-hash {sha256(bytes(running)).hex()}")
    lines.append("verdicts:")
    if capture.annotations:
        for key, value in capture.annotations:
            lines.append(f"  {key}: {value}")
    else:
        lines.append("  (none recorded)")
    return "\n".join(lines) + "\n"
