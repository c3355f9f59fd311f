"""SVG figures with CSV twins.

Every figure written here gets a sibling CSV carrying the plotted
numbers, so downstream checks never have to parse an image.  The SVG
output is deterministic: fixed hash salt, no embedded creation date.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "protodose"

_SVG_META = {"Date": None}


def csv_twin(svg_path) -> Path:
    return Path(svg_path).with_suffix(".csv")


def _save(fig, svg_path) -> None:
    fig.savefig(svg_path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _write_csv(path, header: str, columns) -> None:
    np.savetxt(path, np.column_stack(columns), delimiter=",",
               header=header, comments="")


def line_plot(svg_path, x, series, xlabel: str, ylabel: str, title: str = "",
              logx: bool = False, logy: bool = False) -> list[Path]:
    """Plot named series over a shared abscissa.  series: [(label, y), ...]."""
    svg_path = Path(svg_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, y in series:
        ax.plot(x, y, label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    _save(fig, svg_path)

    header = ",".join([xlabel.split()[0].lower()] +
                      [lbl.replace(" ", "_").lower() for lbl, _ in series])
    _write_csv(csv_twin(svg_path), header, [np.asarray(x)] +
               [np.asarray(y) for _, y in series])
    return [svg_path, csv_twin(svg_path)]


def band_plot(svg_path, depth, mean, sd, reference=None,
              xlabel: str = "depth (cm)", ylabel: str = "dose (MeV/g)",
              title: str = "") -> list[Path]:
    """Mean curve with +-1 and +-2 standard-deviation bands."""
    svg_path = Path(svg_path)
    depth = np.asarray(depth)
    mean = np.asarray(mean)
    sd = np.asarray(sd)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.fill_between(depth, mean - 2 * sd, mean + 2 * sd, alpha=0.2,
                    color="tab:blue", label="mean +- 2 sd")
    ax.fill_between(depth, mean - sd, mean + sd, alpha=0.4,
                    color="tab:blue", label="mean +- 1 sd")
    ax.plot(depth, mean, color="tab:blue", label="ensemble mean")
    if reference is not None:
        ax.plot(depth, reference, "k--", linewidth=1.0, label="reference")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, svg_path)

    cols = [depth, mean - 2 * sd, mean - sd, mean, mean + sd, mean + 2 * sd]
    header = "depth,lo2,lo1,mean,hi1,hi2"
    if reference is not None:
        cols.append(np.asarray(reference))
        header += ",reference"
    _write_csv(csv_twin(svg_path), header, cols)
    return [svg_path, csv_twin(svg_path)]


def histogram_plot(svg_path, values, bins: int, overlay=None, vline=None,
                   xlabel: str = "", ylabel: str = "count",
                   title: str = "") -> list[Path]:
    """Histogram with an optional density overlay (x, y) and marker line."""
    svg_path = Path(svg_path)
    values = np.asarray(values).ravel()
    counts, edges = np.histogram(values, bins=bins)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.stairs(counts, edges, fill=True, alpha=0.6, label="samples")
    if overlay is not None:
        ox, oy = overlay
        # scale a density overlay to the count axis
        width = edges[1] - edges[0]
        ax.plot(ox, np.asarray(oy) * values.size * width, "r-",
                label="gaussian fit")
    if vline is not None:
        ax.axvline(vline, color="k", linestyle="--", label="exact")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, svg_path)

    _write_csv(csv_twin(svg_path), "bin_left,bin_right,count",
               [edges[:-1], edges[1:], counts])
    return [svg_path, csv_twin(svg_path)]


def error_plot(svg_path, depth, absolute, normalised,
               xlabel: str = "depth (cm)", title: str = "") -> list[Path]:
    """Absolute and normalised error on twin y axes over one abscissa."""
    svg_path = Path(svg_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(depth, absolute, color="tab:red", label="absolute")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("absolute error", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(depth, normalised, color="tab:blue", label="normalised")
    ax2.set_ylabel("normalised error (sd units)", color="tab:blue")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, svg_path)

    _write_csv(csv_twin(svg_path), "depth,absolute,normalised",
               [np.asarray(depth), np.asarray(absolute), np.asarray(normalised)])
    return [svg_path, csv_twin(svg_path)]


def heatmap_panels(svg_path, panels, extent, xlabel: str, ylabel: str,
                   title: str = "", log_labels: bool = False) -> list[Path]:
    """Side-by-side image panels sharing axes.  panels: [(name, matrix), ...].

    Matrices are indexed (nx, ny) in grid order; imshow wants (row, col) with
    the origin at the lower left, hence the transpose.  One CSV twin per
    panel, suffixed with the panel name.
    """
    svg_path = Path(svg_path)
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(4.5 * n, 4.0), squeeze=False)
    for ax, (name, matrix) in zip(axes[0], panels):
        m = np.asarray(matrix)
        im = ax.imshow(m.T, origin="lower", aspect="auto",
                       extent=extent, cmap="viridis")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(name)
        fig.colorbar(im, ax=ax, shrink=0.85,
                     label="log10 dose" if log_labels else "")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, svg_path)

    written = [svg_path]
    for name, matrix in panels:
        slug = name.replace(" ", "_").lower()
        path = svg_path.with_name(f"{svg_path.stem}_{slug}.csv")
        np.savetxt(path, np.asarray(matrix), delimiter=",")
        written.append(path)
    return written
