"""Event-stream parsing and binning into sparse two-polarity count frames.

Events are kept as parallel numpy columns (x, y, t, p) rather than one
object per event; a 10^5-event clip is then a handful of arrays and binning
is a single ``np.unique`` over packed cell keys.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"EVT1"
HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "u1")])
assert RECORD_DTYPE.itemsize == 13

SENSOR_WIDTH = 1280
SENSOR_HEIGHT = 800

POSITIVE = 0
NEGATIVE = 1


class ParseError(ValueError):
    """Malformed event payload; ``offset`` is a byte offset (binary) or line number (csv)."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at {offset})")
        self.offset = offset


class EventValidationError(ValueError):
    pass


@dataclass(frozen=True)
class EventStream:
    """Time-ordered events from one sensor.

    ``p`` holds +1 / -1. Columns are read-only views; build a new stream to
    change anything.
    """

    width: int
    height: int
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        cols = {}
        for name, dtype in (("x", np.int64), ("y", np.int64), ("t", np.uint64), ("p", np.int8)):
            a = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            a.setflags(write=False)
            cols[name] = a
            object.__setattr__(self, name, a)
        n = len(cols["x"])
        if any(len(c) != n for c in cols.values()):
            raise EventValidationError("event columns have different lengths")
        if n:
            if cols["x"].min() < 0 or cols["x"].max() >= self.width:
                raise EventValidationError(f"x outside sensor width {self.width}")
            if cols["y"].min() < 0 or cols["y"].max() >= self.height:
                raise EventValidationError(f"y outside sensor height {self.height}")
            if not np.all(np.abs(cols["p"]) == 1):
                raise EventValidationError("polarity must be +1 or -1")
            if np.any(np.diff(cols["t"].astype(np.int64)) < 0):
                raise EventValidationError("timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_arrays(cls, width, height, x, y, t, p) -> "EventStream":
        """Build a stream from possibly unsorted columns (stable sort on t)."""
        t = np.asarray(t, dtype=np.uint64)
        order = np.argsort(t, kind="stable")
        return cls(width, height, np.asarray(x)[order], np.asarray(y)[order], t[order], np.asarray(p)[order])

    @classmethod
    def empty(cls, width=SENSOR_WIDTH, height=SENSOR_HEIGHT) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(width, height, z, z, z, z)


def parse_events(data: bytes, format: str = "binary_v1", *, width: int = SENSOR_WIDTH,
                 height: int = SENSOR_HEIGHT) -> EventStream:
    """Parse an event file payload.

    ``width``/``height`` are only used for csv, whose header carries no
    sensor geometry; binary_v1 reads them from its header.
    """
    if format == "binary_v1":
        return _parse_binary(data)
    if format == "csv":
        return _parse_csv(data, width, height)
    raise ValueError(f"unknown event format {format!r}")


def _parse_binary(data: bytes) -> EventStream:
    if len(data) < HEADER.size:
        raise ParseError("truncated header", len(data))
    magic, width, height, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    body = len(data) - HEADER.size
    expected = count * RECORD_DTYPE.itemsize
    if body != expected:
        if body < expected:  # start of the first incomplete record
            off = HEADER.size + (body // RECORD_DTYPE.itemsize) * RECORD_DTYPE.itemsize
        else:  # first trailing byte
            off = HEADER.size + expected
        raise ParseError(f"payload has {body} bytes, header declares {count} records", off)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    bad_p = np.flatnonzero(rec["p"] > 1)
    if bad_p.size:
        i = int(bad_p[0])
        raise ParseError(f"polarity byte {rec['p'][i]} not in {{0, 1}}",
                         HEADER.size + i * RECORD_DTYPE.itemsize + 12)
    _check_bounds(rec["x"], rec["y"], width, height,
                  lambda i: HEADER.size + i * RECORD_DTYPE.itemsize)
    p = np.where(rec["p"] == 1, 1, -1)
    return EventStream.from_arrays(width, height, rec["x"], rec["y"], rec["t"], p)


def _parse_csv(data: bytes, width: int, height: int) -> EventStream:
    lines = data.decode("ascii").splitlines()
    if not lines or lines[0].strip().replace(" ", "") != "x,y,t,p":
        raise ParseError("missing csv header 'x,y,t,p'", 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 4:
                raise ValueError
            x, y, t, p = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"malformed record {line!r}", lineno) from None
        if p not in (1, -1) or x < 0 or y < 0 or t < 0:
            raise ParseError(f"malformed record {line!r}", lineno)
        rows.append((x, y, t, p, lineno))
    if not rows:
        return EventStream.empty(width, height)
    arr = np.array(rows, dtype=np.int64)
    _check_bounds(arr[:, 0], arr[:, 1], width, height, lambda i: int(arr[i, 4]))
    return EventStream.from_arrays(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def _check_bounds(x, y, width, height, where):
    bad = np.flatnonzero((x >= width) | (y >= height))
    if bad.size:
        i = int(bad[0])
        raise EventValidationError(
            f"event ({x[i]}, {y[i]}) outside {width}x{height} sensor at {where(i)}")


def encode_events(stream: EventStream, format: str = "binary_v1") -> bytes:
    """Serialize a stream; inverse of :func:`parse_events`."""
    if format == "binary_v1":
        rec = np.empty(len(stream), dtype=RECORD_DTYPE)
        rec["x"] = stream.x
        rec["y"] = stream.y
        rec["t"] = stream.t
        rec["p"] = (stream.p > 0).astype(np.uint8)
        return HEADER.pack(MAGIC, stream.width, stream.height, len(stream)) + rec.tobytes()
    if format == "csv":
        buf = io.StringIO()
        buf.write("x,y,t,p\n")
        for row in zip(stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist()):
            buf.write("%d,%d,%d,%d\n" % row)
        return buf.getvalue().encode("ascii")
    raise ValueError(f"unknown event format {format!r}")


def read_events(path) -> EventStream:
    """Load an event file, picking the format from the magic bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_events(data, "binary_v1" if data[:4] == MAGIC else "csv")


@dataclass(frozen=True)
class BinningConfig:
    """Crop / pooling / window settings. Defaults: central 600x600 of a
    1280x800 sensor pooled 6x6 to 100x100, 40 ms windows."""

    crop_origin: tuple[int, int] = (340, 100)
    crop_size: tuple[int, int] = (600, 600)
    window_us: int = 40_000
    out_resolution: tuple[int, int] = (100, 100)
    count_clip: int = 255

    def __post_init__(self):
        cw, ch = self.crop_size
        ow, oh = self.out_resolution
        if min(cw, ch, ow, oh) <= 0 or self.crop_origin[0] < 0 or self.crop_origin[1] < 0:
            raise ValueError("crop and output sizes must be positive")
        if cw % ow or ch % oh:
            raise ValueError(f"crop {self.crop_size} not divisible by output {self.out_resolution}")
        if self.window_us <= 0:
            raise ValueError("window_us must be positive")
        if self.count_clip < 1:
            raise ValueError("count_clip must be >= 1")

    @property
    def pool(self) -> tuple[int, int]:
        return self.crop_size[0] // self.out_resolution[0], self.crop_size[1] // self.out_resolution[1]

    def check_sensor(self, width: int, height: int) -> None:
        x0, y0 = self.crop_origin
        if x0 + self.crop_size[0] > width or y0 + self.crop_size[1] > height:
            raise ValueError(f"crop {self.crop_origin}+{self.crop_size} exceeds {width}x{height} sensor")

    def with_window(self, window_us: int) -> "BinningConfig":
        return BinningConfig(self.crop_origin, self.crop_size, window_us, self.out_resolution, self.count_clip)


@dataclass(frozen=True)
class SparseFrame:
    """Nonzero cells of one window, sorted by (channel, row, col)."""

    index: int
    channel: np.ndarray
    row: np.ndarray
    col: np.ndarray
    count: np.ndarray
    out_resolution: tuple[int, int]

    def __len__(self) -> int:
        return len(self.count)

    def dense(self) -> np.ndarray:
        w, h = self.out_resolution
        out = np.zeros((2, h, w), dtype=np.int64)
        out[self.channel, self.row, self.col] = self.count
        return out

    def flat_indices(self) -> np.ndarray:
        """Row-major indices into a (2, H, W) array."""
        w, h = self.out_resolution
        return (self.channel.astype(np.int64) * h + self.row) * w + self.col


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple[SparseFrame, ...]
    config: BinningConfig
    t_start: int
    t_end: int

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i) -> SparseFrame:
        return self.frames[i]

    def dense(self) -> np.ndarray:
        w, h = self.config.out_resolution
        out = np.zeros((len(self.frames), 2, h, w), dtype=np.int64)
        for k, f in enumerate(self.frames):
            out[k, f.channel, f.row, f.col] = f.count
        return out

    @property
    def nnz(self) -> int:
        return sum(len(f) for f in self.frames)


def bin_to_frames(stream: EventStream, cfg: BinningConfig, *, t_start: int | None = None,
                  t_end: int | None = None) -> FrameSequence:
    """Bin events into per-window, per-polarity count histograms.

    Without explicit bounds the sequence starts at the first timestamp rounded
    down to a window multiple and ends just after the last event. Events outside
    ``[t_start, t_end)`` or outside the crop are dropped. ``count_clip`` may be
    ``math.inf`` to disable saturation.
    """
    cfg.check_sensor(stream.width, stream.height)
    w_us = int(cfg.window_us)
    if t_start is None:
        t_start = (int(stream.t[0]) // w_us) * w_us if len(stream) else 0
    if t_end is None:
        t_end = int(stream.t[-1]) + 1 if len(stream) else t_start
    if t_end < t_start:
        raise ValueError("t_end before t_start")
    n_frames = -(-(t_end - t_start) // w_us)

    x0, y0 = cfg.crop_origin
    cw, ch = cfg.crop_size
    ow, oh = cfg.out_resolution
    px, py = cfg.pool

    t = stream.t.astype(np.int64)
    keep = ((stream.x >= x0) & (stream.x < x0 + cw) & (stream.y >= y0) & (stream.y < y0 + ch)
            & (t >= t_start) & (t < t_end))
    frame = (t[keep] - t_start) // w_us
    chan = (stream.p[keep] < 0).astype(np.int64)
    row = (stream.y[keep] - y0) // py
    col = (stream.x[keep] - x0) // px
    cells = 2 * oh * ow
    key = frame * cells + (chan * oh + row) * ow + col
    uniq, counts = np.unique(key, return_counts=True)
    if math.isfinite(cfg.count_clip):
        counts = np.minimum(counts, int(cfg.count_clip))

    fidx, rem = np.divmod(uniq, cells)
    c, rem = np.divmod(rem, oh * ow)
    r, q = np.divmod(rem, ow)
    bounds = np.searchsorted(fidx, np.arange(n_frames + 1))
    frames = tuple(
        SparseFrame(k, c[a:b], r[a:b], q[a:b], counts[a:b], cfg.out_resolution)
        for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))
    )
    return FrameSequence(frames, cfg, int(t_start), int(t_end))


def sparsity(frames: FrameSequence) -> float:
    """Fraction of zero cells over all frames and both polarities."""
    if len(frames) == 0:
        raise ValueError("sparsity of an empty frame sequence is undefined")
    w, h = frames.config.out_resolution
    return 1.0 - frames.nnz / (len(frames) * 2 * w * h)


def frames_to_text(frames: FrameSequence) -> str:
    """Cache format: ``#`` metadata lines, then one csv row per nonzero cell."""
    cfg = frames.config
    out = io.StringIO()
    out.write("# clane-frames v1\n")
    out.write(f"# crop_origin={cfg.crop_origin[0]},{cfg.crop_origin[1]}\n")
    out.write(f"# crop_size={cfg.crop_size[0]},{cfg.crop_size[1]}\n")
    out.write(f"# out_resolution={cfg.out_resolution[0]},{cfg.out_resolution[1]}\n")
    out.write(f"# window_us={cfg.window_us}\n")
    out.write(f"# count_clip={cfg.count_clip}\n")
    out.write(f"# t_start={frames.t_start}\n# t_end={frames.t_end}\n")
    out.write("frame,channel,row,col,count\n")
    for f in frames.frames:
        for row in zip(f.channel.tolist(), f.row.tolist(), f.col.tolist(), f.count.tolist()):
            out.write("%d,%d,%d,%d,%d\n" % ((f.index,) + row))
    return out.getvalue()


def frames_from_text(text: str) -> FrameSequence:
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                meta[k] = v
        elif line and not line.startswith("frame"):
            body.append(line)

    def pair(key):
        a, b = meta[key].split(",")
        return int(a), int(b)

    clip = float(meta["count_clip"])
    cfg = BinningConfig(pair("crop_origin"), pair("crop_size"), int(meta["window_us"]),
                        pair("out_resolution"), int(clip) if math.isfinite(clip) else clip)
    t_start, t_end = int(meta["t_start"]), int(meta["t_end"])
    n_frames = -(-(t_end - t_start) // cfg.window_us)
    rows = np.array([list(map(int, ln.split(","))) for ln in body], dtype=np.int64).reshape(-1, 5)
    bounds = np.searchsorted(rows[:, 0], np.arange(n_frames + 1))
    frames = tuple(
        SparseFrame(k, rows[a:b, 1], rows[a:b, 2], rows[a:b, 3], rows[a:b, 4], cfg.out_resolution)
        for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))
    )
    return FrameSequence(frames, cfg, t_start, t_end)
