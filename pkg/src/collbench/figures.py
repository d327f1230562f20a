"""Matplotlib figure construction for the analysis artifacts.

Figures are written as SVG with text kept as text (``svg.fonttype: none``)
and no timestamps, so tests and downstream tools can extract every label.
Each builder returns ``(figure, sidecar_header, sidecar_rows)``; any numeric
string drawn on the figure (ticks, annotations) also appears in a sidecar
row, which is the contract the sidecar-fidelity check enforces.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import PhaseTag  # noqa: E402

_RC = {
    "svg.fonttype": "none",
    "svg.hashsalt": "collbench",
    "font.size": 9,
    "figure.dpi": 100,
}

_PHASE_COLORS = {
    PhaseTag.ALLOC: "#b39ddb",
    PhaseTag.COPY: "#ffb74d",
    PhaseTag.REDUCTION: "#e57373",
    PhaseTag.COMMUNICATION: "#64b5f6",
    PhaseTag.SYNC: "#a1887f",
}


def fmt_display(v) -> str:
    """Display format shared by annotations, ticks and sidecar label columns."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.4g}"


def save_svg(fig, path: Path) -> None:
    with plt.rc_context(_RC):  # svg.fonttype is consulted at save time
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def annotate_meta(fig, meta: dict) -> None:
    """Stamp run identity (test id, system, variant) onto the figure."""
    if meta:
        fig.text(0.01, 0.005, "  ".join(f"{k}={v}" for k, v in meta.items()),
                 fontsize=6, color="#666666")


def heatmap_figure(gm, test_id: str):
    if not gm.rank_counts or not gm.sizes:
        raise ValueError("empty gain matrix")
    values = [v for row in gm.cells for v in row if v is not None]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(gm.sizes), 1.2 + 0.6 * len(gm.rank_counts)))
        grid = np.array(
            [[v if v is not None else np.nan for v in row] for row in gm.cells], dtype=float
        )
        masked = np.ma.masked_invalid(grid)
        vmin = min(values + [1.0]) if values else 0.0
        vmax = max(values + [1.0]) if values else 2.0
        # Diverging scale centred on ratio 1.0: red below (better alternative
        # exists), blue above (reference wins).
        norm = matplotlib.colors.TwoSlopeNorm(vcenter=1.0, vmin=vmin - 1e-9, vmax=vmax + 1e-9)
        cmap = matplotlib.colormaps["RdBu"].copy()
        cmap.set_bad("#dddddd")
        ax.imshow(masked, cmap=cmap, norm=norm, aspect="auto", origin="lower")
        ax.set_xticks(range(len(gm.sizes)), [str(s) for s in gm.sizes], rotation=45, ha="right")
        ax.set_yticks(range(len(gm.rank_counts)), [str(p) for p in gm.rank_counts])
        ax.set_xlabel("message size (bytes)")
        ax.set_ylabel("ranks")
        ax.set_title(f"gain vs {gm.reference} [{test_id}]")
        rows = []
        for i, p in enumerate(gm.rank_counts):
            for j, size in enumerate(gm.sizes):
                v = gm.cells[i][j]
                label = fmt_display(v) if v is not None else "n/a"
                ax.text(j, i, label, ha="center", va="center", fontsize=8)
                rows.append([p, size, "" if v is None else repr(v), label])
        fig.tight_layout()
    return fig, ["ranks", "msg_bytes", "ratio", "label"], rows


def bars_figure(data, test_id: str):
    if not data.categories or not data.series:
        raise ValueError("empty bars data")
    for label, vals in data.series.items():
        if len(vals) != len(data.categories):
            raise ValueError(f"series {label!r} length {len(vals)} != {len(data.categories)} categories")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.5 + 0.9 * len(data.categories), 3.2))
        width = 0.8 / len(data.series)
        x = np.arange(len(data.categories))
        rows = []
        for k, (label, vals) in enumerate(data.series.items()):
            pos = x + k * width
            ax.bar(pos, vals, width=width, label=label)
            for i, (xpos, v) in enumerate(zip(pos, vals)):
                text = fmt_display(v)
                ax.text(xpos, v, text, ha="center", va="bottom", fontsize=7, rotation=90)
                rows.append([data.categories[i], label, repr(float(v)), text])
        ax.set_xticks(x + 0.4 - width / 2, data.categories, rotation=30, ha="right")
        ax.set_yticks([])
        ax.set_ylabel(data.ylabel)
        ax.set_title(f"comparison [{test_id}]")
        ax.legend(fontsize=7)
        fig.tight_layout()
    return fig, ["category", "series", "value", "label"], rows


def lines_figure(data, test_id: str):
    if not data.x or not data.series:
        raise ValueError("empty lines data")
    for label, vals in data.series.items():
        if len(vals) != len(data.x):
            raise ValueError(f"series {label!r} length {len(vals)} != {len(data.x)} x points")
    all_vals = [v for vals in data.series.values() for v in vals]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        rows = []
        for label, vals in data.series.items():
            ax.plot(data.x, vals, marker="o", markersize=3, label=label)
            for xv, v in zip(data.x, vals):
                rows.append([xv, label, repr(float(v)), fmt_display(v)])
        ax.set_xscale("log", base=2)
        if min(all_vals) > 0:
            ax.set_yscale("log")
        ax.set_xticks(data.x, [str(v) for v in data.x], rotation=45, ha="right")
        lo, hi = min(all_vals), max(all_vals)
        ax.set_yticks([lo, hi], [fmt_display(lo), fmt_display(hi)])
        ax.minorticks_off()
        ax.set_xlabel(data.xlabel)
        ax.set_ylabel(data.ylabel)
        ax.set_title(f"trend [{test_id}]")
        ax.legend(fontsize=7)
        fig.tight_layout()
        rows.append([data.x[0], "_yticks", repr(float(lo)), fmt_display(lo)])
        rows.append([data.x[-1], "_yticks", repr(float(hi)), fmt_display(hi)])
    return fig, ["x", "series", "value", "label"], rows


def breakdown_figure(entries, test_id: str):
    if not entries:
        raise ValueError("empty breakdown")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.5 + 0.8 * len(entries), 3.4))
        x = np.arange(len(entries))
        bottom = np.zeros(len(entries))
        rows = []
        for tag in _PHASE_COLORS:
            fractions = np.array([e.fractions.get(tag, 0.0) for e in entries])
            ax.bar(x, fractions, bottom=bottom, color=_PHASE_COLORS[tag], label=str(tag), width=0.7)
            for i, (frac, base) in enumerate(zip(fractions, bottom)):
                text = fmt_display(frac)
                if frac >= 0.06:
                    ax.text(i, base + frac / 2, text, ha="center", va="center", fontsize=7)
                rows.append([entries[i].algorithm, entries[i].msg_bytes, str(tag), repr(float(frac)), text])
            bottom += fractions
        labels = [f"{e.algorithm}\n{e.msg_bytes}" for e in entries]
        ax.set_xticks(x, labels, fontsize=7)
        ax.set_yticks([])
        ax.set_ylabel("fraction of runtime")
        ax.set_title(f"phase breakdown [{test_id}]")
        ax.legend(fontsize=7, ncols=2)
        fig.tight_layout()
        for e in entries:
            rows.append([e.algorithm, e.msg_bytes, "residual", repr(float(e.residual)), fmt_display(e.residual)])
    return fig, ["algorithm", "msg_bytes", "phase", "value", "label"], rows


def tracer_panel_figure(reports, test_id: str, cell_map=None):
    if not reports:
        raise ValueError("empty tracer panel")
    classes = [("intra_node", "#81c784"), ("local", "#64b5f6"), ("global", "#e57373")]
    with plt.rc_context(_RC):
        if cell_map is not None:
            fig, (ax, ax_map) = plt.subplots(1, 2, figsize=(8.2, 3.4), width_ratios=[3, 2])
        else:
            fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(reports), 3.4))
            ax_map = None
        x = np.arange(len(reports))
        width = 0.8 / len(classes)
        rows = []
        for k, (cls, color) in enumerate(classes):
            vals = [getattr(rep, f"{cls}_bytes") for rep in reports]
            pos = x + k * width
            ax.bar(pos, vals, width=width, color=color, label=cls)
            for xpos, v, rep in zip(pos, vals, reports):
                text = fmt_display(v)
                ax.text(xpos, v, text, ha="center", va="bottom", fontsize=7, rotation=90)
                rows.append(["traffic", rep.label, cls, str(v), text])
        ax.set_xticks(x + 0.4 - width / 2, [rep.label for rep in reports], fontsize=8)
        ax.set_yticks([])
        ax.set_ylabel("bytes on links")
        ax.set_title(f"traffic placement [{test_id}]")
        ax.legend(fontsize=7)
        if ax_map is not None:
            ax_map.set_axis_off()
            ax_map.set_title("rank-to-cell map")
            n_groups = len(cell_map)
            n_nodes = max(len(g) for g in cell_map)
            for gi, group in enumerate(cell_map):
                ax_map.text(-0.7, gi, f"g{gi}", ha="center", va="center", fontsize=8)
                for ni in range(n_nodes):
                    ranks = group[ni] if ni < len(group) else []
                    label = " ".join(str(r) for r in ranks)
                    ax_map.add_patch(
                        plt.Rectangle((ni - 0.5, gi - 0.4), 1.0, 0.8, fill=False, edgecolor="#888888")
                    )
                    if label:
                        ax_map.text(ni, gi, label, ha="center", va="center", fontsize=7)
                    rows.append(["placement", f"g{gi}", f"n{ni}", label, label])
            ax_map.set_xlim(-1.2, n_nodes - 0.3)
            ax_map.set_ylim(-0.8, n_groups - 0.2)
            ax_map.invert_yaxis()
        fig.tight_layout()
    return fig, ["section", "label", "key", "value", "display"], rows
