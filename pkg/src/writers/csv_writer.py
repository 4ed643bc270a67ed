import csv

from loguru import logger

from .base_writer import BaseWriter, Table, format_value


class CsvWriter(BaseWriter):
    suffix = ".csv"

    def write(self, name: str, payload: Table):
        path = self.path_for(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(payload.columns)
            for row in payload.rows:
                writer.writerow([format_value(c, v) for c, v in zip(payload.columns, row)])
        logger.info(f"Wrote {path} ({len(payload.rows)} rows)")
        return path
