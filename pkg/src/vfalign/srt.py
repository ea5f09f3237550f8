"""SubRip (SRT) export and a small parser used for round-trip checks."""

from __future__ import annotations

import math
import re

TIMESTAMP_RE = re.compile(
    r"(\d{2,}):(\d{2}):(\d{2}),(\d{3})\s*-->\s*(\d{2,}):(\d{2}):(\d{2}),(\d{3})")


def frame_to_ms(frame: float, fps: float) -> int:
    """Millisecond timestamp of a frame index, rounded half up."""
    return int(math.floor(frame * 1000.0 / fps + 0.5))


def format_timestamp(ms: int) -> str:
    if ms < 0:
        raise ValueError("timestamps must be non-negative")
    h, rem = divmod(ms, 3_600_000)
    m, rem = divmod(rem, 60_000)
    s, milli = divmod(rem, 1000)
    return f"{h:02d}:{m:02d}:{s:02d},{milli:03d}"


def segments_to_srt(segments, fps: float, drop_sil: bool = False,
                    sil_token: str = "<sil>") -> str:
    """Render (token, start_frame, end_frame) records as SRT cues.

    A segment covering frames [i, j] spans i*1000/fps to (j+1)*1000/fps ms.
    Cue numbers stay consecutive after silence cues are dropped.
    """
    blocks = []
    cue = 1
    for rec in segments:
        if isinstance(rec, dict):
            token, start, end = rec["token"], rec["start_frame"], \
                rec["end_frame"]
        else:
            token, start, end = rec
        if drop_sil and token == sil_token:
            continue
        t0 = format_timestamp(frame_to_ms(start, fps))
        t1 = format_timestamp(frame_to_ms(end + 1, fps))
        blocks.append(f"{cue}\n{t0} --> {t1}\n{token}\n")
        cue += 1
    return "\n".join(blocks)


def parse_srt(text: str) -> list[tuple[int, int, str]]:
    """Read cues back as (start_ms, end_ms, text)."""
    cues = []
    for block in re.split(r"\n\s*\n", text.strip()):
        lines = [ln for ln in block.splitlines() if ln.strip()]
        if not lines:
            continue
        if re.fullmatch(r"\d+", lines[0].strip()):
            lines = lines[1:]
        if not lines:
            continue
        m = TIMESTAMP_RE.match(lines[0])
        if not m:
            raise ValueError(f"bad SRT timing line: {lines[0]!r}")
        vals = [int(x) for x in m.groups()]
        start = ((vals[0] * 60 + vals[1]) * 60 + vals[2]) * 1000 + vals[3]
        end = ((vals[4] * 60 + vals[5]) * 60 + vals[6]) * 1000 + vals[7]
        cues.append((start, end, "\n".join(lines[1:])))
    return cues
