"""Hand-written SVG line plots of MI profiles with concept and event markers."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .mi import MIProfile

WIDTH, HEIGHT = 640, 320
MARGIN = 48
_CONCEPT_COLOR = "#d62728"
_EVENT_COLOR = "#2ca02c"


def _f(x: float) -> str:
    return f"{x:.2f}"


def plot_profile(
    profile: MIProfile,
    concept_means: list[float] | None = None,
    marks: dict[str, float] | None = None,
    title: str = "",
    T: int | None = None,
) -> str:
    """SVG text: one polyline for the profile, a solid marker per concept, a dashed one per event.

    Output bytes depend only on the arguments.
    """
    times = np.asarray(profile.times, dtype=np.float64)
    values = np.asarray(profile.values, dtype=np.float64)
    if times.size == 0:
        raise ValueError("profile is empty")
    x_lo = 0.0
    x_hi = float(T - 1) if T is not None else float(times.max())
    x_hi = max(x_hi, x_lo + 1.0)
    y_lo = min(0.0, float(values.min()))
    y_hi = float(values.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(t: float) -> float:
        return MARGIN + (t - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v: float) -> float:
        return HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line class="axis" x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line class="axis" x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">normalized time</text>',
        f'<text x="14" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {HEIGHT / 2:.0f})">MI (nats)</text>',
        f'<text x="{MARGIN - 4}" y="{_f(sy(y_hi))}" text-anchor="end" font-size="10">{y_hi:.3g}</text>',
        f'<text x="{MARGIN - 4}" y="{_f(sy(y_lo))}" text-anchor="end" font-size="10">{y_lo:.3g}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" font-size="10">{x_lo:.0f}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" font-size="10">{x_hi:.0f}</text>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    points = " ".join(f"{_f(sx(t))},{_f(sy(v))}" for t, v in zip(times, values))
    out.append(f'<polyline class="profile" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{points}"/>')
    for k, m in enumerate(concept_means or []):
        x = _f(sx(float(m)))
        out.append(
            f'<line class="concept" data-concept="{k}" x1="{x}" y1="{MARGIN}" x2="{x}" y2="{HEIGHT - MARGIN}" '
            f'stroke="{_CONCEPT_COLOR}" stroke-width="1.5"/>'
        )
    for label, m in sorted((marks or {}).items(), key=lambda kv: (kv[1], kv[0])):
        x = _f(sx(float(m)))
        out.append(
            f'<line class="event" data-event="{escape(label)}" x1="{x}" y1="{MARGIN}" x2="{x}" y2="{HEIGHT - MARGIN}" '
            f'stroke="{_EVENT_COLOR}" stroke-dasharray="4 3"/>'
        )
        out.append(f'<text x="{x}" y="{MARGIN - 4}" text-anchor="middle" font-size="10" fill="{_EVENT_COLOR}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
