"""Static index page for a finished run directory.

Reads report.json, verifies every listed artifact is present, and writes
an index.html linking figures, CSV twins, checks and metrics.  The page
contains no timestamps, so rebuilding it over an unchanged run directory
reproduces the same bytes.
"""

import html
import json
from pathlib import Path

from ..errors import ConfigError


def _table(rows, headers) -> str:
    out = ["<table>", "<tr>" + "".join(f"<th>{html.escape(h)}</th>"
                                       for h in headers) + "</tr>"]
    for row in rows:
        out.append("<tr>" + "".join(f"<td>{html.escape(str(c))}</td>"
                                    for c in row) + "</tr>")
    out.append("</table>")
    return "\n".join(out)


def build_index(run_dir) -> Path:
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.is_file():
        raise ConfigError(f"no report.json in {run_dir}")
    with open(report_path, "r", encoding="utf-8") as fh:
        report = json.load(fh)

    missing = [a for a in report.get("artifacts", ())
               if not (run_dir / a).is_file()]
    if missing:
        raise ConfigError(f"artifact(s) listed in report.json are missing: {missing}")

    captions = report.get("captions", {})
    title = f"{report['experiment']} ({report['scale']} scale, seed {report['seed']})"
    parts = ["<!DOCTYPE html>", "<html><head><meta charset='utf-8'>",
             f"<title>{html.escape(title)}</title>",
             "<style>body{font-family:sans-serif;margin:2em;max-width:60em}"
             "table{border-collapse:collapse}td,th{border:1px solid #999;"
             "padding:0.3em 0.6em}img{max-width:100%}</style>",
             "</head><body>", f"<h1>{html.escape(title)}</h1>"]

    checks = report.get("checks", [])
    if checks:
        parts.append("<h2>Checks</h2>")
        parts.append(_table(
            [(c["name"], "pass" if c["passed"] else "FAIL", c.get("detail", ""))
             for c in checks], ("check", "status", "detail")))

    parts.append("<h2>Figures</h2>")
    for art in report.get("artifacts", ()):
        if not art.endswith(".svg"):
            continue
        cap = captions.get(art, "")
        parts.append(f"<figure><img src='{html.escape(art)}' alt='{html.escape(art)}'>"
                     f"<figcaption>{html.escape(cap) or html.escape(art)}</figcaption>"
                     "</figure>")

    parts.append("<h2>Artifacts</h2><ul>")
    for art in report.get("artifacts", ()):
        parts.append(f"<li><a href='{html.escape(art)}'>{html.escape(art)}</a></li>")
    parts.append("</ul>")

    metrics = report.get("metrics", {})
    if metrics:
        parts.append("<h2>Metrics</h2>")
        parts.append(_table(sorted((k, json.dumps(v)) for k, v in metrics.items()),
                            ("metric", "value")))

    timings = report.get("timings", {})
    if timings:
        parts.append("<h2>Stage timings (s)</h2>")
        parts.append(_table([(k, f"{v:.2f}") for k, v in timings.items()],
                            ("stage", "seconds")))

    parts.append("<h2>Parameters</h2>")
    parts.append(_table(sorted((k, json.dumps(v))
                               for k, v in report.get("params", {}).items()),
                        ("parameter", "value")))
    parts.append("</body></html>")

    index = run_dir / "index.html"
    index.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return index
