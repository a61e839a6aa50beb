"""
Benchmark Framework
===================

Base class and registry for benchmark generators.

A generator turns a parameter mapping (validated by its own pydantic
schema) and a seed into a :class:`~lipirm.data.DatasetBundle`. Built-in
generators live in :mod:`lipirm.benchmarks` and register themselves on
import; custom ones register with :func:`register_benchmark`.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Mapping, Optional, Type, Union

from pydantic import BaseModel

from .data import DatasetBundle
from .schemas import ConfigError, parse_config

logger = logging.getLogger(__name__)


class BenchmarkError(Exception):
    """Exception raised for unknown benchmarks and failed generation."""

    pass


class BenchmarkGenerator(ABC):
    """
    Base class for benchmark generators.

    Subclasses set the metadata attributes and implement :meth:`build`.
    """

    benchmark_name: str = "base"
    benchmark_description: str = "Base benchmark generator"
    task: str = "regression"
    config_model: Optional[Type[BaseModel]] = None

    def parse(self, params: Union[Mapping[str, Any], BaseModel, None] = None) -> Optional[BaseModel]:
        """
        Validate generator parameters against :attr:`config_model`.

        Raises
        ------
        BenchmarkError
            If validation fails; the message lists the failing keys.
        """
        if isinstance(params, BaseModel) or self.config_model is None:
            return params
        try:
            return parse_config(dict(params or {}), self.config_model, f"benchmark '{self.benchmark_name}'")
        except ConfigError as e:
            raise BenchmarkError(str(e)) from e

    def generate(self, params: Union[Mapping[str, Any], BaseModel, None] = None, seed: Optional[int] = None) -> DatasetBundle:
        """
        Generate one benchmark instance.

        Parameters
        ----------
        params : mapping or BaseModel, optional
            Generator parameters; defaults of the schema when omitted.
        seed : int, optional
            Master seed; overrides the ``seed`` field of the parameters.

        Returns
        -------
        DatasetBundle
        """
        config = self.parse(params)
        if seed is not None and config is not None and "seed" in type(config).model_fields:
            config = config.model_copy(update={"seed": int(seed)})
        bundle = self.build(config)
        bundle.metadata = {"benchmark": self.benchmark_name, **bundle.metadata}
        if config is not None:
            bundle.metadata.setdefault("params", config.model_dump(mode="json"))
        logger.info(
            f"Generated benchmark '{self.benchmark_name}': "
            f"{len(bundle.train)} train / {len(bundle.validation)} validation / {len(bundle.test)} test domains"
        )
        return bundle

    @abstractmethod
    def build(self, config: Optional[BaseModel]) -> DatasetBundle:
        """Generate the bundle for validated parameters."""
        pass

    def get_metadata(self) -> Dict[str, Any]:
        """
        Get generator metadata.

        Returns
        -------
        dict
            Name, description, task and the parameter defaults.
        """
        defaults = self.config_model().model_dump(mode="json") if self.config_model is not None else {}
        return {
            "name": self.benchmark_name,
            "description": self.benchmark_description,
            "task": self.task,
            "defaults": defaults,
        }


class BenchmarkRegistry:
    """Registry for managing benchmark generators."""

    def __init__(self):
        self._generators: Dict[str, BenchmarkGenerator] = {}

    def register(self, generator: BenchmarkGenerator) -> None:
        """
        Register a new generator.

        Parameters
        ----------
        generator : BenchmarkGenerator
            Generator instance to register
        """
        if not isinstance(generator, BenchmarkGenerator):
            raise TypeError(f"Generator must be an instance of BenchmarkGenerator, got {type(generator)}")

        self._generators[generator.benchmark_name] = generator
        logger.debug(f"Registered benchmark: {generator.benchmark_name}")

    def unregister(self, name: str) -> None:
        if name in self._generators:
            del self._generators[name]
            logger.info(f"Unregistered benchmark: {name}")
        else:
            logger.warning(f"Benchmark not found: {name}")

    def get(self, name: str) -> Optional[BenchmarkGenerator]:
        return self._generators.get(name)

    def list_benchmarks(self) -> List[Dict[str, Any]]:
        return [generator.get_metadata() for generator in self._generators.values()]

    def list_benchmark_names(self) -> List[str]:
        return list(self._generators.keys())


# Global benchmark registry
_registry = BenchmarkRegistry()


def register_benchmark(generator: BenchmarkGenerator) -> None:
    """Register a generator with the global registry."""
    _registry.register(generator)


def get_benchmark(name: str) -> Optional[BenchmarkGenerator]:
    """
    Get a generator from the global registry.

    Returns
    -------
    BenchmarkGenerator or None
        Generator instance or None if not found
    """
    return _registry.get(name)


def list_benchmarks() -> List[Dict[str, Any]]:
    return _registry.list_benchmarks()


def list_benchmark_names() -> List[str]:
    return _registry.list_benchmark_names()


def generate_benchmark(name: str, params: Optional[Mapping[str, Any]] = None, seed: Optional[int] = None) -> DatasetBundle:
    """
    Look up a registered generator and run it.

    Raises
    ------
    BenchmarkError
        If no generator is registered under ``name``.
    """
    # built-ins register on import
    from . import benchmarks  # noqa: F401

    generator = get_benchmark(name)
    if generator is None:
        raise BenchmarkError(f"Unknown benchmark '{name}'; available: {', '.join(sorted(list_benchmark_names()))}")
    return generator.generate(params, seed=seed)


__all__ = [
    "BenchmarkError",
    "BenchmarkGenerator",
    "BenchmarkRegistry",
    "register_benchmark",
    "get_benchmark",
    "list_benchmarks",
    "list_benchmark_names",
    "generate_benchmark",
]
