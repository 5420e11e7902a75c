"""Minimal hand-written SVG chart of estimated against true link flows.

Links without detectors are placed along the x-axis in ascending order of
true flow; the truth is drawn as a line and the estimates as dots. Coordinates
are printed with fixed precision so the file is byte-stable.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 720, 400
MARGIN = 50


def _f(x: float) -> str:
    return f"{x:.2f}"


def flow_plot_svg(per_link, title: str = "Estimated vs ground-truth link flows") -> str:
    """``per_link`` holds ``(link_id, true, estimated, is_detector)`` rows."""
    rows = sorted(((t, l, e) for l, t, e, det in per_link if not det), key=lambda r: (r[0], r[1]))
    top = max([max(t, e) for t, _, e in rows] + [1.0]) * 1.05
    w, h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    n = len(rows)

    def x(i):
        return MARGIN + (w * (i + 0.5) / n if n else 0.0)

    def y(v):
        return HEIGHT - MARGIN - h * v / top

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for k in range(5):
        v = top * k / 4
        out.append(f'<text x="{MARGIN - 6}" y="{_f(y(v) + 4)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{v:.0f}</text>')
    if n:
        pts = " ".join(f"{_f(x(i))},{_f(y(t))}" for i, (t, _, _) in enumerate(rows))
        out.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1.5"/>')
        for i, (t, link_id, e) in enumerate(rows):
            out.append(f'<circle cx="{_f(x(i))}" cy="{_f(y(e))}" r="3" fill="crimson">'
                       f"<title>link {escape(str(link_id))}</title></circle>")
            out.append(f'<text x="{_f(x(i))}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" '
                       f'font-family="sans-serif" font-size="9">{escape(str(link_id))}</text>')
    out.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="11">unobserved links, ascending true flow</text>')
    out.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN - 8}" text-anchor="end" font-family="sans-serif" '
               f'font-size="11">line: ground truth, dots: estimate</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_flow_plot(per_link, path, title: str | None = None) -> None:
    text = flow_plot_svg(per_link) if title is None else flow_plot_svg(per_link, title)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
