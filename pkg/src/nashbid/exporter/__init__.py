from .plots import ReportExporter
from .run import RunExporter
from .summary import SweepExporter

__all__ = ["ReportExporter", "RunExporter", "SweepExporter"]
