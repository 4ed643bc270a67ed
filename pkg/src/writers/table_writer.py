from loguru import logger

from .base_writer import BaseWriter, Table, format_value


class TableWriter(BaseWriter):
    """Aligned plain-text table, one column per field."""

    suffix = ".txt"
    summaries_only = True

    def write(self, name: str, payload: Table):
        path = self.path_for(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_table(payload), encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path


def render_table(payload: Table) -> str:
    cells = [[format_value(c, v) for c, v in zip(payload.columns, row)] for row in payload.rows]
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(payload.columns)]
    lines = []
    if payload.title:
        lines.append(payload.title)
        lines.append("")
    lines.append("  ".join(c.rjust(w) for c, w in zip(payload.columns, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in cells:
        lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    if payload.notes:
        lines.append("")
        lines.extend(payload.notes)
    return "\n".join(lines) + "\n"
