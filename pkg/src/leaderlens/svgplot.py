"""Minimal deterministic SVG scenes: primitives, ticks, palettes.

No plotting dependency.  Every helper formats floats through the same
6-significant-digit rule and appends elements in call order, so one input
always renders to one byte sequence; the report pipeline relies on that.
"""

import math
from xml.sax.saxutils import escape

CATEGORY_PALETTE = (
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
    "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd", "#a05d56", "#6b8e23",
)


def fnum(x: float) -> str:
    """Stable coordinate formatting; normalizes the negative-zero case."""
    s = f"{float(x):.6g}"
    return "0" if s in ("-0", "-0.0") else s


def color_for(index: int) -> str:
    return CATEGORY_PALETTE[index % len(CATEGORY_PALETTE)]


def diverging_color(value: float) -> str:
    """Blue (-1) -> near-white (0) -> red (+1), clipped."""
    v = max(-1.0, min(1.0, float(value)))
    lo, mid, hi = (0x21, 0x66, 0xAC), (0xF7, 0xF7, 0xF7), (0xB2, 0x18, 0x2B)
    a, b, t = (mid, hi, v) if v >= 0 else (mid, lo, -v)
    rgb = tuple(round(a[i] + (b[i] - a[i]) * t) for i in range(3))
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def nice_ticks(lo: float, hi: float, target: int = 5) -> list:
    """Round tick positions on a 1-2-5 grid covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi < lo:
        lo, hi = hi, lo
    if hi == lo:
        return [lo]
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    value = first
    while value <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(value) < 1e-12 * step else value)
        value += step
    return ticks


class Frame:
    """Affine map from data space to pixel space inside fixed margins.

    SVG y grows downward; the frame flips it so larger data values sit
    higher.
    """

    def __init__(self, x_range, y_range, width, height,
                 margin=(50.0, 15.0, 40.0, 55.0)):  # top right bottom left
        self.width = float(width)
        self.height = float(height)
        self.top, self.right, self.bottom, self.left = (float(m) for m in margin)
        x0, x1 = (float(v) for v in x_range)
        y0, y1 = (float(v) for v in y_range)
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1

    @property
    def inner_width(self) -> float:
        return self.width - self.left - self.right

    @property
    def inner_height(self) -> float:
        return self.height - self.top - self.bottom

    def px(self, x: float) -> float:
        return self.left + (float(x) - self.x0) / (self.x1 - self.x0) * self.inner_width

    def py(self, y: float) -> float:
        return self.top + (self.y1 - float(y)) / (self.y1 - self.y0) * self.inner_height


class Svg:
    """Element-order-preserving SVG document builder."""

    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self._parts = []

    def rect(self, x, y, w, h, fill, stroke=None, opacity=None):
        attrs = f'x="{fnum(x)}" y="{fnum(y)}" width="{fnum(w)}" height="{fnum(h)}" fill="{fill}"'
        if stroke:
            attrs += f' stroke="{stroke}"'
        if opacity is not None:
            attrs += f' fill-opacity="{fnum(opacity)}"'
        self._parts.append(f"<rect {attrs}/>")

    def line(self, x1, y1, x2, y2, stroke="#333333", width=1.0):
        self._parts.append(
            f'<line x1="{fnum(x1)}" y1="{fnum(y1)}" x2="{fnum(x2)}" '
            f'y2="{fnum(y2)}" stroke="{stroke}" stroke-width="{fnum(width)}"/>')

    def polyline(self, points, stroke, width=1.5):
        pts = " ".join(f"{fnum(x)},{fnum(y)}" for x, y in points)
        self._parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
            f'stroke-width="{fnum(width)}"/>')

    def polygon(self, points, fill, opacity=1.0):
        pts = " ".join(f"{fnum(x)},{fnum(y)}" for x, y in points)
        self._parts.append(
            f'<polygon points="{pts}" fill="{fill}" '
            f'fill-opacity="{fnum(opacity)}" stroke="none"/>')

    def circle(self, cx, cy, r, fill, opacity=None):
        attrs = f'cx="{fnum(cx)}" cy="{fnum(cy)}" r="{fnum(r)}" fill="{fill}"'
        if opacity is not None:
            attrs += f' fill-opacity="{fnum(opacity)}"'
        self._parts.append(f"<circle {attrs}/>")

    def text(self, x, y, content, size=11.0, anchor="start", fill="#222222",
             rotate=None):
        transform = ""
        if rotate is not None:
            transform = f' transform="rotate({fnum(rotate)} {fnum(x)} {fnum(y)})"'
        self._parts.append(
            f'<text x="{fnum(x)}" y="{fnum(y)}" font-size="{fnum(size)}" '
            f'font-family="sans-serif" text-anchor="{anchor}" '
            f'fill="{fill}"{transform}>{escape(str(content))}</text>')

    def axes(self, frame: Frame, x_label="", y_label="", x_ticks=None,
             y_ticks=None):
        """Left + bottom axis lines with ticks and numeric labels."""
        x_ticks = nice_ticks(frame.x0, frame.x1) if x_ticks is None else x_ticks
        y_ticks = nice_ticks(frame.y0, frame.y1) if y_ticks is None else y_ticks
        bottom = frame.top + frame.inner_height
        self.line(frame.left, bottom, frame.left + frame.inner_width, bottom)
        self.line(frame.left, frame.top, frame.left, bottom)
        for t in x_ticks:
            x = frame.px(t)
            self.line(x, bottom, x, bottom + 4.0)
            self.text(x, bottom + 16.0, fnum(t), size=10.0, anchor="middle")
        for t in y_ticks:
            y = frame.py(t)
            self.line(frame.left - 4.0, y, frame.left, y)
            self.text(frame.left - 7.0, y + 3.5, fnum(t), size=10.0,
                      anchor="end")
        if x_label:
            self.text(frame.left + frame.inner_width / 2.0, bottom + 32.0,
                      x_label, anchor="middle")
        if y_label:
            self.text(14.0, frame.top + frame.inner_height / 2.0, y_label,
                      anchor="middle", rotate=-90.0)

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{fnum(self.width)}" '
            f'height="{fnum(self.height)}" '
            f'viewBox="0 0 {fnum(self.width)} {fnum(self.height)}">\n'
            f'<rect x="0" y="0" width="{fnum(self.width)}" '
            f'height="{fnum(self.height)}" fill="#ffffff"/>\n')
        return head + "\n".join(self._parts) + "\n</svg>\n"
