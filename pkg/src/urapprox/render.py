"""Static SVG renderings of decompositions and approximant pieces."""

from __future__ import annotations

import json
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

SVG_META = {"Date": None, "Creator": "urapprox"}


def _stride(shape, cap=256):
    return max(1, int(np.ceil(max(shape) / cap)))


def render_payload(report, ctx):
    """Plain data needed to redraw the plots later."""
    cfg = report.config
    out = {"name": cfg.get("name"), "box": cfg.get("box"), "dim": cfg.get("dim")}
    g = ctx.get("grid")
    if g is not None and g.dim == 2:
        out["grid"] = {"center": g.center.tolist(), "level": g.level.tolist()}
        C = ctx.get("corona")
        if C is not None:
            out["grid"]["regime"] = C.regime_of.tolist()
    R = ctx.get("regions")
    q0 = ctx.get("q0")
    if R is not None and q0 is not None and g.dim == 2:
        ids = R.carleson_cubes(q0)
        lo, hi = R.fattened(ids)
        out["tent"] = {"lo": lo.tolist(), "hi": hi.tolist()}
    A_all = ctx.get("approximants") or {}
    if A_all:
        eps = min(A_all)
        A = A_all[eps]
        f = A.field
        img = np.full(f.shape, -1, dtype=np.int64)
        img.ravel()[A.nodes] = A.piece_of
        s = _stride(f.shape)
        out["pieces"] = {"eps": eps, "lo": f.lo.tolist(), "h": f.h * s,
                         "ids": img[::s, ::s].tolist()}
    return out


def _axes(box):
    fig, ax = plt.subplots(figsize=(6, 6))
    x0, y0, side = box[0], box[1], box[-1]
    ax.set_xlim(x0, x0 + side)
    ax.set_ylim(y0, y0 + side)
    ax.set_aspect("equal")
    return fig, ax


def _save(fig, path, extents):
    plt.rcParams["svg.hashsalt"] = "urapprox"
    ax = fig.axes[0]
    extents.append((os.path.basename(path),) + tuple(ax.get_xlim()) + tuple(ax.get_ylim()))
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def render_bundle(directory):
    """Draw plots/*.svg from render.json; returns the written paths.

    plots/extents.tsv records the axis limits actually used for each plot.
    """
    with open(os.path.join(directory, "render.json")) as fh:
        p = json.load(fh)
    if p.get("dim") != 2:
        return []
    os.makedirs(os.path.join(directory, "plots"), exist_ok=True)
    written = []
    extents = []
    box = p["box"]
    if "grid" in p:
        fig, ax = _axes(box)
        c = np.asarray(p["grid"]["center"])
        reg = np.asarray(p["grid"].get("regime", [-1] * len(c)))
        lev = np.asarray(p["grid"]["level"])
        ax.scatter(c[:, 0], c[:, 1], s=4 + 20.0 / (1 + lev - lev.min()), c=np.where(reg < 0, -1, reg % 10),
                   cmap="tab10", vmin=-1, vmax=9, linewidths=0)
        ax.set_title("surface cubes (colour = regime, grey = bad)")
        path = os.path.join(directory, "plots", "cubes.svg")
        _save(fig, path, extents)
        written.append(path)
    if "tent" in p:
        fig, ax = _axes(box)
        lo, hi = np.asarray(p["tent"]["lo"]), np.asarray(p["tent"]["hi"])
        rects = [Rectangle(a, *(b - a)) for a, b in zip(lo, hi)]
        ax.add_collection(PatchCollection(rects, facecolor="none", edgecolor="k", linewidth=0.2))
        ax.set_title("Carleson box T_Q0 (fattened Whitney cubes)")
        path = os.path.join(directory, "plots", "carleson_box.svg")
        _save(fig, path, extents)
        written.append(path)
    if "pieces" in p:
        fig, ax = _axes(box)
        ids = np.asarray(p["pieces"]["ids"], dtype=float)
        ids[ids < 0] = np.nan
        lo, h = p["pieces"]["lo"], p["pieces"]["h"]
        ext = [lo[0], lo[0] + h * ids.shape[0], lo[1], lo[1] + h * ids.shape[1]]
        ax.imshow(ids.T, origin="lower", extent=ext, cmap="tab20", interpolation="nearest")
        ax.set_title(f"approximant pieces, eps = {p['pieces']['eps']}")
        path = os.path.join(directory, "plots", "pieces.svg")
        _save(fig, path, extents)
        written.append(path)
    with open(os.path.join(directory, "plots", "extents.tsv"), "w", newline="\n") as fh:
        fh.write("plot\txmin\txmax\tymin\tymax\n")
        for row in extents:
            fh.write("\t".join([row[0]] + [repr(float(v)) for v in row[1:]]) + "\n")
    return written
