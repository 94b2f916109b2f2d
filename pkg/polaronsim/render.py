from __future__ import annotations

import math
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFont

Color = Tuple[int, int, int]

LIGHT_GREY:   Color = (68, 68, 68)
DARK_GREY:    Color = (48, 48, 48)
GRID_OUTLINE: Color = (110, 110, 110)
TEXT_COLOR:   Color = (230, 230, 230)
TRACE_COLOR:  Color = (247, 227, 101)


def sheet_cells(count: int, width: int, height: int, padding: int = 8) -> List[Tuple[int, int, int, int]]:
    """
    (x, y, w, h) of `count` equal cells filling a width x height sheet row
    by row, with the column count chosen so cells come out roughly square.
    """
    if count <= 0:
        return []
    cols = min(count, max(1, round(math.sqrt(count * width / height))))
    rows = math.ceil(count / cols)
    cell_w = max(1, (width - padding * (cols + 1)) // cols)
    cell_h = max(1, (height - padding * (rows + 1)) // rows)
    return [(padding + c * (cell_w + padding), padding + r * (cell_h + padding), cell_w, cell_h)
            for r, c in (divmod(i, cols) for i in range(count))]


def _heat(values: np.ndarray) -> np.ndarray:
    # black -> trace yellow
    peak = float(np.max(values)) if values.size else 0.0
    level = np.clip(values / peak, 0.0, 1.0) if peak > 0 else np.zeros_like(values)
    return (level[..., None] * np.array(TRACE_COLOR, dtype=float)).astype(np.uint8)


def density_carpet(
    times:       Sequence[float],
    densities:   np.ndarray,
    output_path: str | Path,
    width:       int = 800,
    height:      int = 600,
    title:       str = "",
    font_size:   int = 16,
) -> Path:
    """
    Space-time density map: x runs left to right, time top to bottom.
    """
    densities = np.asarray(densities, dtype=float)
    if densities.ndim != 2 or densities.shape[0] != len(times):
        raise ValueError("densities must be shaped (len(times), n_points)")
    image = Image.fromarray(_heat(densities)).resize((width, height), Image.Resampling.NEAREST)
    if title:
        draw = ImageDraw.Draw(image)
        label = f"{title}  t = {times[0]:.4g} .. {times[-1]:.4g}"
        draw.text((8, 8), label, font=ImageFont.load_default(size=font_size), fill=TEXT_COLOR)
    output = Path(output_path)
    output.parent.mkdir(parents=True, exist_ok=True)
    image.save(output)
    return output


def shot_contact_sheet(
    intensities: Sequence[np.ndarray],
    labels:      Sequence[str],
    output_path: str | Path,
    width:       int = 1280,
    height:      int = 720,
    padding:     int = 8,
    font_size:   int = 14,
) -> Path:
    """
    Single-shot profiles, one trace per cell in alternating shades, all
    drawn on a shared intensity scale.
    """
    if not intensities:
        raise ValueError("Cannot render an empty set of shots.")
    if len(labels) != len(intensities):
        raise ValueError("one label per shot is required")
    cells = sheet_cells(len(intensities), width, height, padding)
    peak = max(float(np.max(trace)) for trace in intensities) or 1.0

    font = ImageFont.load_default(size=font_size)
    image = Image.new("RGB", (width, height), DARK_GREY)
    draw = ImageDraw.Draw(image)
    for idx, (trace, label, (x, y, cell_w, cell_h)) in enumerate(zip(intensities, labels, cells)):
        fill = LIGHT_GREY if idx % 2 == 0 else DARK_GREY
        draw.rectangle([x, y, x + cell_w - 1, y + cell_h - 1], fill=fill, outline=GRID_OUTLINE)

        trace = np.asarray(trace, dtype=float)
        xs = x + np.linspace(0, cell_w - 1, len(trace))
        ys = y + (cell_h - 1) * (1.0 - trace / peak)
        draw.line(list(zip(xs.tolist(), ys.tolist())), fill=TRACE_COLOR, width=1)
        draw.text((x + 4, y + 4), label, font=font, fill=TEXT_COLOR)

    output = Path(output_path)
    output.parent.mkdir(parents=True, exist_ok=True)
    image.save(output)
    return output
