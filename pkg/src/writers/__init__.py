from .base_writer import BaseWriter, Table
from .csv_writer import CsvWriter
from .table_writer import TableWriter

WRITERS = {"csv": CsvWriter, "table": TableWriter}

__all__ = [
    "BaseWriter",
    "CsvWriter",
    "Table",
    "TableWriter",
    "WRITERS",
]
