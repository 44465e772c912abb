"""Static SVG figures: dendrogram, per-cluster event/points panels, boxplots.

All drawing functions take plain data (trees, dicts loaded from the JSON
artifacts) and return SVG text. Coordinates are written with fixed precision
so output is byte-for-byte reproducible.
"""

from __future__ import annotations

import string
from html import escape

import numpy as np

from .flagging import standardize

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
MARKERS = ("circle", "square", "triangle", "diamond", "cross")
FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _f(x):
    return f"{x:.2f}"


class _Canvas:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = []

    def add(self, element):
        self.parts.append(element)

    def line(self, x1, y1, x2, y2, stroke="#000", width=1.0, extra=""):
        self.add(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{width}"{extra}/>'
        )

    def rect(self, x, y, w, h, fill, extra=""):
        self.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"{extra}/>')

    def text(self, x, y, s, size=10, anchor="middle", extra=""):
        self.add(
            f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" {FONT}{extra}>'
            f"{escape(str(s))}</text>"
        )

    def render(self):
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">'
        )
        return "\n".join([head, f'<rect width="100%" height="100%" fill="#fff"/>'] + self.parts + ["</svg>"]) + "\n"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 1e-9, step)]


def _fmt_tick(v):
    return f"{v:.4g}"


def cluster_letters(k):
    letters = string.ascii_uppercase
    return [letters[i] if i < 26 else letters[i // 26 - 1] + letters[i % 26] for i in range(k)]


def render_dendrogram(tree, k_lowest=6, title=None):
    """Rectangular dendrogram with merge height on the y axis.

    The ``k_lowest`` lowest nodes are labelled A, B, C, ... in ascending
    height order.
    """
    n = tree.n_leaves
    order = tree.leaf_order()
    left, right, top, bottom = 60.0, 20.0, 40.0, 90.0
    width = max(400, int(left + right + 14 * n))
    height = 420
    plot_h = height - top - bottom
    canvas = _Canvas(width, height)
    max_h = max((nd.height for nd in tree.nodes), default=0.0) or 1.0
    step = (width - left - right) / max(n, 1)

    xs = {leaf: left + step * (pos + 0.5) for pos, leaf in enumerate(order)}

    def y_of(h):
        return top + plot_h * (1.0 - h / max_h)

    if title:
        canvas.text(width / 2, 20, title, size=13)
    canvas.line(left - 8, top, left - 8, top + plot_h)
    for v in _ticks(0.0, max_h):
        y = y_of(v)
        canvas.line(left - 12, y, left - 8, y)
        canvas.text(left - 14, y + 3, _fmt_tick(v), size=9, anchor="end")
    canvas.text(14, top + plot_h / 2, "dissimilarity", size=10,
                extra=f' transform="rotate(-90 14 {_f(top + plot_h / 2)})"')

    for nd in tree.nodes:
        xl, xr = xs[nd.left], xs[nd.right]
        yl, yr = y_of(tree.height(nd.left)), y_of(tree.height(nd.right))
        y = y_of(nd.height)
        xs[nd.id] = (xl + xr) / 2
        canvas.add(
            f'<path class="bracket" data-node="{nd.id}" data-height="{nd.height!r}" '
            f'd="M{_f(xl)},{_f(yl)} V{_f(y)} H{_f(xr)} V{_f(yr)}" fill="none" stroke="#333" stroke-width="1"/>'
        )

    k = min(k_lowest, n - 1)
    if k > 0:
        ranked = sorted(tree.nodes, key=lambda nd: (nd.height, nd.id))[:k]
        for letter, nd in zip(cluster_letters(k), ranked):
            canvas.text(xs[nd.id], y_of(nd.height) - 4, letter, size=11,
                        extra=f' class="node-label" data-node="{nd.id}" fill="#c0392b"')

    base = top + plot_h + 8
    for leaf in order:
        x = xs[leaf]
        canvas.text(x, base, tree.ids[leaf], size=8, anchor="end",
                    extra=f' class="leaf" transform="rotate(-90 {_f(x)} {_f(base)})"')
    return canvas.render()


def cluster_panel_data(cohort, clusters, catalog, letters=None):
    """Plain-data description of each cluster panel (also the JSON artifact)."""
    by_id = {exam.student_id: exam for exam in cohort}
    letters = letters or cluster_letters(len(clusters))
    out = []
    for letter, cl in zip(letters, clusters):
        members = []
        for sid in cl.members:
            exam = by_id[sid]
            members.append({
                "id": sid,
                "events": [[ev.subtask_id, float(ev.timestamp)] for ev in exam.events],
                "points": [float(exam.points.get(t, 0.0)) for t in catalog.ids],
            })
        out.append({
            "label": letter,
            "node": int(cl.node_id),
            "height": float(cl.height),
            "left": list(cl.left),
            "right": list(cl.right),
            "members": members,
        })
    return {
        "subtasks": catalog.ids,
        "max_points": [s.max_points for s in catalog.subtasks],
        "duration_minutes": catalog.n_intervals,
        "clusters": out,
    }


def _marker(kind, x, y, color, sid):
    attrs = f'class="mark" data-student="{escape(sid)}"'
    r = 3.2
    if kind == "circle":
        return f'<circle {attrs} cx="{_f(x)}" cy="{_f(y)}" r="{r}" fill="none" stroke="{color}"/>'
    if kind == "square":
        return f'<rect {attrs} x="{_f(x - r)}" y="{_f(y - r)}" width="{_f(2 * r)}" height="{_f(2 * r)}" fill="none" stroke="{color}"/>'
    if kind == "triangle":
        pts = f"{_f(x)},{_f(y - r)} {_f(x - r)},{_f(y + r)} {_f(x + r)},{_f(y + r)}"
    elif kind == "diamond":
        pts = f"{_f(x)},{_f(y - r)} {_f(x + r)},{_f(y)} {_f(x)},{_f(y + r)} {_f(x - r)},{_f(y)}"
    else:
        return (f'<path {attrs} d="M{_f(x - r)},{_f(y - r)} L{_f(x + r)},{_f(y + r)} '
                f'M{_f(x - r)},{_f(y + r)} L{_f(x + r)},{_f(y - r)}" stroke="{color}"/>')
    return f'<polygon {attrs} points="{pts}" fill="none" stroke="{color}"/>'


def render_cluster_panel(panel, subtasks, max_points, duration_minutes):
    """One cluster: points-per-subtask bars above, submissions over clock time below."""
    members = panel["members"]
    n_sub = len(subtasks)
    width, height = 640, 520
    left, right = 60.0, 20.0
    bar_top, bar_h = 50.0, 130.0
    sc_top = bar_top + bar_h + 40.0
    sc_h = height - sc_top - 50.0
    plot_w = width - left - right
    canvas = _Canvas(width, height)
    canvas.text(width / 2, 22, f"Cluster {panel['label']} (height {panel['height']:.3f})", size=13)

    # bar chart: one group per subtask, one bar per member
    top_pts = max(max_points) if max_points else 1.0
    group_w = plot_w / max(n_sub, 1)
    bar_w = group_w * 0.8 / max(len(members), 1)
    canvas.line(left, bar_top + bar_h, left + plot_w, bar_top + bar_h)
    canvas.text(left - 30, bar_top + bar_h / 2, "points", size=9)
    for j in range(n_sub):
        canvas.text(left + group_w * (j + 0.5), bar_top + bar_h + 12, subtasks[j], size=8)
        for s, member in enumerate(members):
            value = member["points"][j]
            h = bar_h * value / top_pts if top_pts > 0 else 0.0
            x = left + group_w * j + group_w * 0.1 + bar_w * s
            canvas.rect(x, bar_top + bar_h - h, bar_w, h, PALETTE[s % len(PALETTE)],
                        extra=f' class="bar" data-student="{escape(member["id"])}" data-subtask="{escape(subtasks[j])}"')

    # scatter: clock time (minutes) against subtask position
    t_max = duration_minutes * 60.0
    all_t = [t for m in members for _, t in m["events"]]
    if all_t:
        t_max = max(t_max, max(all_t))
    index = {sid: k for k, sid in enumerate(subtasks)}
    canvas.line(left, sc_top + sc_h, left + plot_w, sc_top + sc_h)
    canvas.line(left, sc_top, left, sc_top + sc_h)
    row_h = sc_h / max(n_sub, 1)
    for j, sid in enumerate(subtasks):
        y = sc_top + row_h * (j + 0.5)
        canvas.text(left - 6, y + 3, sid, size=8, anchor="end")
        canvas.line(left, y, left + plot_w, y, stroke="#eee", width=0.5)
    for v in _ticks(0.0, t_max / 60.0, 7):
        x = left + plot_w * v * 60.0 / t_max
        canvas.line(x, sc_top + sc_h, x, sc_top + sc_h + 4)
        canvas.text(x, sc_top + sc_h + 15, _fmt_tick(v), size=9)
    canvas.text(left + plot_w / 2, height - 12, "clock time (minutes)", size=10)
    for s, member in enumerate(members):
        color = PALETTE[s % len(PALETTE)]
        kind = MARKERS[s % len(MARKERS)]
        canvas.add(f'<g class="series" data-student="{escape(member["id"])}">')
        for sid, t in member["events"]:
            x = left + plot_w * t / t_max
            y = sc_top + row_h * (index[sid] + 0.5)
            canvas.add(_marker(kind, x, y, color, member["id"]))
        canvas.add("</g>")
        lx = left + 10 + 120 * s
        canvas.add(_marker(kind, lx, bar_top - 10, color, "legend").replace('class="mark"', 'class="legend"'))
        canvas.text(lx + 8, bar_top - 7, member["id"], size=9, anchor="start")
    return canvas.render()


def render_cluster_panels(panel_data):
    """``{filename: svg}`` for every cluster in ``panel_data``."""
    out = {}
    for panel in panel_data["clusters"]:
        if len(panel["members"]) < 2:
            continue
        out[f"cluster_{panel['label']}.svg"] = render_cluster_panel(
            panel, panel_data["subtasks"], panel_data["max_points"], panel_data["duration_minutes"]
        )
    return out


def _box_stats(values):
    x = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    return {
        "q1": float(q1), "median": float(med), "q3": float(q3),
        "whisker_lo": float(inside.min()), "whisker_hi": float(inside.max()),
        "outliers": [float(v) for v in x[(x < lo_fence) | (x > hi_fence)]],
    }


def _boxplot_panel(canvas, x0, width, groups, title, bound=None):
    top, plot_h = 50.0, canvas.height - 100.0
    lo = min(min(v) for _, v in groups)
    hi = max(max(v) for _, v in groups)
    if bound is not None:
        lo = min(lo, bound)
    pad = (hi - lo) * 0.05 or 1.0
    lo, hi = lo - pad, hi + pad

    def y_of(v):
        return top + plot_h * (hi - v) / (hi - lo)

    canvas.text(x0 + width / 2, 30, title, size=12)
    axis_x = x0 + 45
    canvas.line(axis_x, top, axis_x, top + plot_h)
    for v in _ticks(lo, hi):
        canvas.line(axis_x - 4, y_of(v), axis_x, y_of(v))
        canvas.text(axis_x - 6, y_of(v) + 3, _fmt_tick(v), size=9, anchor="end")
    slot = (width - 60) / len(groups)
    for g, (name, values) in enumerate(groups):
        st = _box_stats(values)
        cx = axis_x + slot * (g + 0.5)
        bw = slot * 0.4
        canvas.add(f'<g class="box" data-group="{name}">')
        canvas.rect(cx - bw / 2, y_of(st["q3"]), bw, y_of(st["q1"]) - y_of(st["q3"]), "#dfe9f5",
                    extra=' stroke="#333"')
        canvas.line(cx - bw / 2, y_of(st["median"]), cx + bw / 2, y_of(st["median"]), width=2)
        canvas.line(cx, y_of(st["q3"]), cx, y_of(st["whisker_hi"]))
        canvas.line(cx, y_of(st["q1"]), cx, y_of(st["whisker_lo"]))
        canvas.line(cx - bw / 4, y_of(st["whisker_hi"]), cx + bw / 4, y_of(st["whisker_hi"]))
        canvas.line(cx - bw / 4, y_of(st["whisker_lo"]), cx + bw / 4, y_of(st["whisker_lo"]))
        for v in st["outliers"]:
            canvas.add(f'<circle class="outlier" cx="{_f(cx)}" cy="{_f(y_of(v))}" r="2" fill="none" stroke="#555"/>')
        canvas.add("</g>")
        canvas.text(cx, top + plot_h + 18, name, size=10)
    if bound is not None:
        y = y_of(bound)
        canvas.line(axis_x, y, x0 + width - 10, y, stroke="#c0392b",
                    extra=' stroke-dasharray="4 3" class="bound"')
        canvas.text(x0 + width - 12, y - 4, f"Q1 - 3 IQR = {bound:.3f}", size=9, anchor="end",
                    extra=' fill="#c0392b"')


def render_boxplots(report):
    """Two panels: raw pairwise dissimilarities and their z-scores.

    ``report`` is a flag report dictionary (``FlagReport.to_dict()``).
    """
    comp_raw = np.asarray(report["comparison_values"], dtype=float)
    test_raw = np.array([p["d_raw"] for p in report["pairs"]])
    test_z = np.array([p["z"] for p in report["pairs"]])
    comp_z = standardize(comp_raw)
    canvas = _Canvas(800, 420)
    _boxplot_panel(canvas, 0, 400, [("comparison", comp_raw), ("test", test_raw)], "Non-normalised")
    _boxplot_panel(canvas, 400, 400, [("comparison", comp_z), ("test", test_z)], "Normalised",
                   bound=report["bound"])
    return canvas.render()
