"""
CSV Benchmark Source
====================

Serves user data in the domain CSV layout as a benchmark; domains are
assigned to splits by id.
"""

from typing import List, Optional

from pydantic import field_validator

from ..benchmark import BenchmarkError, BenchmarkGenerator
from ..data import DataError, DatasetBundle, read_domain_csv
from ..schemas import StrictModel


class CsvSourceConfig(StrictModel):
    """CSV path and the domain ids held out for validation and testing."""

    path: str = ""
    task: Optional[str] = None
    validation_domains: List[int] = []
    test_domains: List[int] = []

    @field_validator("path")
    @classmethod
    def validate_path(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("path to a domain CSV file is required")
        return v


class CsvSourceGenerator(BenchmarkGenerator):
    benchmark_name = "csv"
    benchmark_description = "Domains loaded from a CSV file (x0.., y, domain[, group])"
    task = "any"
    config_model = CsvSourceConfig

    def get_metadata(self):
        return {"name": self.benchmark_name, "description": self.benchmark_description, "task": self.task, "defaults": {}}

    def build(self, config: CsvSourceConfig) -> DatasetBundle:
        try:
            domains = read_domain_csv(config.path, task=config.task)
        except DataError as e:
            raise BenchmarkError(str(e)) from e
        held_out = set(config.validation_domains) | set(config.test_domains)
        known = {d.domain_id for d in domains}
        missing = sorted(held_out - known)
        if missing:
            raise BenchmarkError(f"Domains {missing} are not present in {config.path}")
        train = [d for d in domains if d.domain_id not in held_out]
        if not train:
            raise BenchmarkError(f"No training domains left in {config.path}")
        return DatasetBundle(
            train=train,
            validation=[d for d in domains if d.domain_id in config.validation_domains],
            test=[d for d in domains if d.domain_id in config.test_domains],
            task=domains[0].task,
        )


def _register():
    from ..benchmark import register_benchmark

    register_benchmark(CsvSourceGenerator())


_register()
