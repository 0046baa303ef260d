"""File formats: GSBD-FIELD v1, GSBD-CRACK v1, key=value configs, PPM dumps.

Field samples are written with 17 significant digits so that save/load
round-trips are bit exact.
"""

from __future__ import annotations

import numpy as np

from .cracks import FacetSet
from .errors import ParseError, VersionMismatch
from .grids import Grid, ScalarField, VectorField

FIELD_MAGIC = "GSBD-FIELD"
CRACK_MAGIC = "GSBD-CRACK"
VERSION = "v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_field(path, field) -> None:
    """Write a node field: ASCII header then row-major samples."""
    g = field.grid
    samples = field.samples
    comps = 1 if samples.ndim == g.dim else samples.shape[-1]
    lines = [
        f"{FIELD_MAGIC} {VERSION}",
        f"dim {g.dim}",
        "origin " + " ".join(_fmt(v) for v in g.origin),
        f"spacing {_fmt(g.spacing)}",
        "counts " + " ".join(str(c) for c in g.counts),
        f"components {comps}",
    ]
    flat = samples.reshape(-1, comps)
    lines.extend(" ".join(_fmt(v) for v in row) for row in flat)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path):
    """Read a GSBD-FIELD file; returns a VectorField or ScalarField.

    Raises
    ------
    ParseError, VersionMismatch
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty field file", line=1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != FIELD_MAGIC:
        raise ParseError(f"expected '{FIELD_MAGIC} {VERSION}' header", line=1)
    if head[1] != VERSION:
        raise VersionMismatch(f"unsupported field version {head[1]!r}")
    header = {}
    idx = 1
    for key in ("dim", "origin", "spacing", "counts", "components"):
        if idx >= len(lines):
            raise ParseError(f"missing header line {key!r}", line=idx + 1)
        parts = lines[idx].split()
        if not parts or parts[0] != key:
            raise ParseError(f"expected header line {key!r}", line=idx + 1)
        header[key] = parts[1:]
        idx += 1
    try:
        dim = int(header["dim"][0])
        origin = np.array([float(v) for v in header["origin"]])
        spacing = float(header["spacing"][0])
        counts = tuple(int(v) for v in header["counts"])
        comps = int(header["components"][0])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed header: {exc}", line=idx) from None
    grid = Grid(origin, spacing, counts)
    n_nodes = grid.n_nodes
    data = []
    for ln in range(idx, len(lines)):
        if not lines[ln].strip():
            continue
        vals = lines[ln].split()
        if len(vals) != comps:
            raise ParseError(
                f"expected {comps} components, got {len(vals)}", line=ln + 1
            )
        try:
            data.append([float(v) for v in vals])
        except ValueError as exc:
            raise ParseError(str(exc), line=ln + 1) from None
    if len(data) != n_nodes:
        raise ParseError(
            f"expected {n_nodes} sample rows, got {len(data)}", line=len(lines)
        )
    arr = np.asarray(data)
    if comps == 1 and dim == 1:
        return VectorField(grid, arr.reshape(grid.node_shape + (1,)))
    if comps == dim:
        return VectorField(grid, arr.reshape(grid.node_shape + (dim,)))
    if comps == 1:
        return ScalarField(grid, arr.reshape(grid.node_shape))
    raise ParseError(f"unsupported component count {comps} for dim {dim}", line=6)


def save_crack(path, facets: FacetSet) -> None:
    lines = [f"{CRACK_MAGIC} {VERSION}", f"dim {facets.dim}"]
    for i in range(len(facets)):
        amp = facets.amplitudes[i]
        tail = f" {_fmt(amp)}" if np.isfinite(amp) else ""
        if facets.dim == 1:
            lines.append(f"{_fmt(facets.p0[i, 0])}{tail}")
        else:
            p0, p1 = facets.p0[i], facets.p1[i]
            lines.append(
                f"{_fmt(p0[0])} {_fmt(p0[1])} {_fmt(p1[0])} {_fmt(p1[1])}{tail}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_crack(path, grid: Grid | None = None) -> FacetSet:
    """Read a GSBD-CRACK file: one facet per line, optional amplitude.

    Raises
    ------
    ParseError, VersionMismatch
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty crack file", line=1)
    head = lines[0].split()
    if len(head) != 2 or head[0] != CRACK_MAGIC:
        raise ParseError(f"expected '{CRACK_MAGIC} {VERSION}' header", line=1)
    if head[1] != VERSION:
        raise VersionMismatch(f"unsupported crack version {head[1]!r}")
    if len(lines) < 2 or not lines[1].startswith("dim "):
        raise ParseError("expected 'dim' header line", line=2)
    dim = int(lines[1].split()[1])
    segs, pts, amps = [], [], []
    for ln in range(2, len(lines)):
        raw = lines[ln].strip()
        if not raw:
            continue
        vals = raw.split()
        try:
            nums = [float(v) for v in vals]
        except ValueError as exc:
            raise ParseError(str(exc), line=ln + 1) from None
        if dim == 1:
            if len(nums) not in (1, 2):
                raise ParseError("1D facets take 'x [amplitude]'", line=ln + 1)
            pts.append(nums[0])
            amps.append(nums[1] if len(nums) == 2 else np.nan)
        else:
            if len(nums) not in (4, 5):
                raise ParseError(
                    "2D facets take 'x0 y0 x1 y1 [amplitude]'", line=ln + 1
                )
            if abs(nums[0] - nums[2]) < 1e-12 and abs(nums[1] - nums[3]) < 1e-12:
                raise ParseError(
                    f"facet ({nums[0]:g}, {nums[1]:g})-({nums[2]:g}, {nums[3]:g}) "
                    "has zero length",
                    line=ln + 1,
                )
            segs.append(nums[:4])
            amps.append(nums[4] if len(nums) == 5 else np.nan)
    try:
        if dim == 1:
            return FacetSet.from_points(pts, amps, grid=grid)
        return FacetSet.from_segments(segs, amps, grid=grid)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def parse_config(path) -> dict:
    """Line-oriented ``key = value`` configuration; '#' starts a comment.

    Raises
    ------
    ParseError
    """
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}", line=ln)
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ParseError("empty key", line=ln)
            out[key] = value.strip()
    return out


def parse_schedule(text: str):
    """Parse ``eps:eta,eps:eta,...`` into a list of pairs."""
    levels = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            e, n = item.split(":", 1)
            levels.append((float(e), float(n)))
        else:
            e = float(item)
            levels.append((e, e**2))
    return levels


def save_ppm(path, field: ScalarField, lo: float = 0.0, hi: float = 1.0) -> None:
    """Grayscale ASCII PPM (P2) heatmap of a 2D scalar field."""
    if field.grid.dim != 2:
        raise ValueError("PPM output needs a 2D field")
    s = field.samples
    span = hi - lo if hi > lo else 1.0
    gray = np.clip((s - lo) / span, 0.0, 1.0)
    img = np.rint(gray * 255).astype(int)
    # image rows run top to bottom: flip the y axis, x runs along columns
    img = img.T[::-1, :]
    lines = [f"P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in img)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
