"""
Domain Data Module
==================

Multi-domain training data, the partition of each domain into groups, and
estimation of the per-group data-quality statistics (empirical density
r̂_{e,k} and noise variance σ²_{e,k}) that drive penalty optimization.

Groups never straddle domains: every group index belongs to exactly one
domain, recorded in :attr:`Grouping.group_domain`.

CSV Layout
----------
One header row; one column per feature; a ``y`` column; a ``domain``
column; an optional ``group`` column that overrides automatic grouping::

    x0,x1,y,domain,group
    0.0,1.0,1,0,3
"""

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

RESERVED_COLUMNS = ("y", "domain", "group")
TASKS = ("regression", "classification")

GroupKey = Tuple[int, int]
Predictor = Callable[[np.ndarray], np.ndarray]


class DataError(Exception):
    """Exception raised for invalid datasets, groupings or CSV files."""

    pass


@dataclass
class DomainDataset:
    """
    Samples of one domain (environment).

    Parameters
    ----------
    domain_id : int
        Integer label of the domain.
    x : numpy.ndarray
        Feature matrix of shape ``(n, d)``; a 1-D array is read as ``d = 1``.
    y : numpy.ndarray
        Targets of shape ``(n,)``: real values or class indices.
    group_ids : numpy.ndarray, optional
        Provided group (latent sub-population) id per sample.
    task : str
        ``"regression"`` or ``"classification"``.
    """

    domain_id: int
    x: np.ndarray
    y: np.ndarray
    group_ids: Optional[np.ndarray] = None
    task: str = "regression"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError(f"Domain {self.domain_id}: features must be a 2-D array, got shape {x.shape}")
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape[0] == 0:
            raise DataError(f"empty domain: domain {self.domain_id} has no samples")
        if y.shape[0] != x.shape[0]:
            raise DataError(f"Domain {self.domain_id}: {x.shape[0]} feature rows but {y.shape[0]} targets")
        if self.task not in TASKS:
            raise DataError(f"Unknown task '{self.task}', expected one of {TASKS}")
        if self.group_ids is not None:
            group_ids = np.asarray(self.group_ids).reshape(-1).astype(int)
            if group_ids.shape[0] != x.shape[0]:
                raise DataError(f"Domain {self.domain_id}: group ids do not match sample count")
            self.group_ids = group_ids
        self.x = x
        self.y = y

    @property
    def n(self) -> int:
        """Sample count N_e."""
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        """Feature dimension."""
        return int(self.x.shape[1])


@dataclass
class DatasetBundle:
    """
    Training, validation and test domains of one benchmark instance.

    Attributes
    ----------
    train, validation, test : list of DomainDataset
        Domains of each split; domain ids are unique across the bundle.
    task : str
        ``"regression"`` or ``"classification"``.
    metadata : dict
        Generator parameters (JSON-serializable).
    theory : TheorySetting, optional
        Analytic ground truth when the generator has one (1-D regression).
    """

    train: List[DomainDataset]
    validation: List[DomainDataset] = field(default_factory=list)
    test: List[DomainDataset] = field(default_factory=list)
    task: str = "regression"
    metadata: Dict[str, object] = field(default_factory=dict)
    theory: Optional[object] = None

    def splits(self) -> Dict[str, List[DomainDataset]]:
        """Return the non-empty splits by name."""
        named = {"train": self.train, "validation": self.validation, "test": self.test}
        return {name: domains for name, domains in named.items() if domains}


@dataclass
class Grouping:
    """
    Partition of every training sample into K groups.

    Attributes
    ----------
    k_count : int
        Number of groups K.
    assignment : dict
        ``domain_id -> int array`` with the group index of each sample.
    group_domain : dict
        ``group index -> domain_id`` owning the group.
    """

    k_count: int
    assignment: Dict[int, np.ndarray]
    group_domain: Dict[int, int]

    def group_of(self, domain_id: int, index: int) -> int:
        """Group index of sample ``index`` of domain ``domain_id``."""
        return int(self.assignment[domain_id][index])

    def groups_of_domain(self, domain_id: int) -> List[int]:
        """Sorted group indices owned by ``domain_id``."""
        return sorted(k for k, e in self.group_domain.items() if e == domain_id)

    def validate(self, data: Sequence[DomainDataset]) -> None:
        """
        Check coverage and domain consistency against ``data``.

        Raises
        ------
        DataError
            If a sample is unassigned, an index is out of range, or a group
            contains samples of more than one domain.
        """
        seen_domain: Dict[int, int] = {}
        for dataset in data:
            groups = self.assignment.get(dataset.domain_id)
            if groups is None or groups.shape[0] != dataset.n:
                raise DataError(f"Grouping does not cover every sample of domain {dataset.domain_id}")
            if groups.size and (groups.min() < 0 or groups.max() >= self.k_count):
                raise DataError(f"Group index out of range [0, {self.k_count}) in domain {dataset.domain_id}")
            for k in np.unique(groups):
                owner = seen_domain.setdefault(int(k), dataset.domain_id)
                if owner != dataset.domain_id or self.group_domain.get(int(k)) != dataset.domain_id:
                    raise DataError(f"Group {int(k)} mixes samples of domains {owner} and {dataset.domain_id}")


@dataclass
class GroupStatistics:
    """
    Per-(domain, group) quality statistics.

    Keys are ``(domain_id, group index)`` for every domain and every group,
    so a group absent from a domain has ``counts == 0``, ``r_hat == 0`` and
    ``indicator == 0``.
    """

    r_hat: Dict[GroupKey, float]
    counts: Dict[GroupKey, int]
    indicator: Dict[GroupKey, int]
    domain_sizes: Dict[int, int]
    k_count: int
    sigma2: Dict[GroupKey, float] = field(default_factory=dict)

    @property
    def domains(self) -> List[int]:
        return sorted(self.domain_sizes)

    def sigma(self, key: GroupKey) -> float:
        """Noise standard deviation σ_{e,k} (0 when σ² was not estimated)."""
        return float(np.sqrt(self.sigma2.get(key, 0.0)))

    def to_dict(self) -> Dict[str, object]:
        """JSON-friendly rendering (string keys ``"domain:group"``)."""

        def render(table: Dict[GroupKey, object]) -> Dict[str, object]:
            return {f"{e}:{k}": value for (e, k), value in sorted(table.items())}

        return {
            "k_count": self.k_count,
            "domain_sizes": {str(e): n for e, n in sorted(self.domain_sizes.items())},
            "r_hat": render(self.r_hat),
            "counts": render(self.counts),
            "indicator": render(self.indicator),
            "sigma2": render(self.sigma2),
        }


def _require_data(data: Sequence[DomainDataset]) -> None:
    if not data:
        raise DataError("empty domain: no domains were supplied")
    for dataset in data:
        if dataset.n < 1:
            raise DataError(f"empty domain: domain {dataset.domain_id} has no samples")
    ids = [dataset.domain_id for dataset in data]
    if len(set(ids)) != len(ids):
        raise DataError(f"Duplicate domain ids: {ids}")


def _compact(raw: Dict[int, np.ndarray], data: Sequence[DomainDataset]) -> Grouping:
    """Turn per-domain local labels into globally numbered, gap-free groups."""
    assignment: Dict[int, np.ndarray] = {}
    group_domain: Dict[int, int] = {}
    next_index = 0
    for dataset in data:
        local = raw[dataset.domain_id]
        present = np.unique(local)
        mapping = {int(label): next_index + i for i, label in enumerate(present)}
        for label, k in mapping.items():
            group_domain[k] = dataset.domain_id
        assignment[dataset.domain_id] = np.array([mapping[int(v)] for v in local], dtype=int)
        next_index += len(present)
    return Grouping(k_count=next_index, assignment=assignment, group_domain=group_domain)


def group_by_bins(data: Sequence[DomainDataset], feature_index: int, k_per_domain: int) -> Grouping:
    """
    Group each domain into equal-width bins of one dominated feature.

    Bin edges span the per-domain range of the feature, so groups are
    contiguous intervals within each domain. Empty bins are dropped and the
    remaining group indices compacted; a constant feature yields one group.

    Parameters
    ----------
    data : sequence of DomainDataset
        Training domains.
    feature_index : int
        Column used as the dominated feature.
    k_per_domain : int
        Number of bins per domain (≥ 1).

    Returns
    -------
    Grouping

    Raises
    ------
    DataError
        On an empty collection or domain, or an out-of-range feature index.

    Examples
    --------
    >>> ds = DomainDataset(0, np.array([[0.1], [0.2], [0.8], [0.9]]), np.zeros(4))
    >>> group_by_bins([ds], feature_index=0, k_per_domain=2).k_count
    2
    """
    _require_data(data)
    if k_per_domain < 1:
        raise DataError(f"k_per_domain must be >= 1, got {k_per_domain}")

    raw: Dict[int, np.ndarray] = {}
    for dataset in data:
        if not 0 <= feature_index < dataset.d:
            raise DataError(f"feature_index {feature_index} out of range for dimension {dataset.d}")
        values = dataset.x[:, feature_index]
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo or k_per_domain == 1:
            raw[dataset.domain_id] = np.zeros(dataset.n, dtype=int)
            continue
        scaled = (values - lo) / (hi - lo) * k_per_domain
        raw[dataset.domain_id] = np.clip(np.floor(scaled).astype(int), 0, k_per_domain - 1)

    grouping = _compact(raw, data)
    logger.debug(f"Binned {len(data)} domains into {grouping.k_count} groups")
    return grouping


def group_by_label(data: Sequence[DomainDataset], source: str = "label") -> Grouping:
    """
    One group per non-empty (domain, class) pair.

    Parameters
    ----------
    data : sequence of DomainDataset
        Training domains.
    source : {"label", "group_id"}
        Use the targets, or the latent group ids attached by a generator
        (the digit analogue of classification benchmarks).

    Raises
    ------
    DataError
        If the labels are not class indices.
    """
    _require_data(data)
    raw: Dict[int, np.ndarray] = {}
    for dataset in data:
        if source == "group_id":
            if dataset.group_ids is None:
                raise DataError(f"Domain {dataset.domain_id} carries no group ids")
            labels = dataset.group_ids
        elif source == "label":
            labels = dataset.y
            if not np.all(np.isfinite(labels)) or not np.all(labels == np.round(labels)):
                raise DataError("label grouping requires class indices")
        else:
            raise DataError(f"Unknown label source '{source}'")
        raw[dataset.domain_id] = np.asarray(labels).astype(int)
    return _compact(raw, data)


def group_from_provided(data: Sequence[DomainDataset]) -> Grouping:
    """Use the ``group`` column of every domain (one group per (domain, id))."""
    return group_by_label(data, source="group_id")


def estimate_density(data: Sequence[DomainDataset], grouping: Grouping) -> GroupStatistics:
    """
    Empirical group densities r̂_{e,k} = N_{e,k} / N_e.

    Examples
    --------
    >>> ds = DomainDataset(0, np.arange(10.0), np.zeros(10), group_ids=[0] * 4 + [1] * 6)
    >>> stats = estimate_density([ds], group_from_provided([ds]))
    >>> stats.r_hat[(0, 0)]
    0.4
    """
    _require_data(data)
    grouping.validate(data)

    counts: Dict[GroupKey, int] = {}
    r_hat: Dict[GroupKey, float] = {}
    indicator: Dict[GroupKey, int] = {}
    domain_sizes: Dict[int, int] = {}
    for dataset in data:
        e = dataset.domain_id
        domain_sizes[e] = dataset.n
        per_group = np.bincount(grouping.assignment[e], minlength=grouping.k_count)
        for k in range(grouping.k_count):
            n_ek = int(per_group[k])
            counts[(e, k)] = n_ek
            r_hat[(e, k)] = n_ek / dataset.n
            indicator[(e, k)] = 1 if n_ek > 0 else 0

    return GroupStatistics(
        r_hat=r_hat,
        counts=counts,
        indicator=indicator,
        domain_sizes=domain_sizes,
        k_count=grouping.k_count,
    )


def estimate_noise_variance(
    data: Sequence[DomainDataset],
    grouping: Grouping,
    predictor: Predictor,
    stats: Optional[GroupStatistics] = None,
) -> GroupStatistics:
    """
    Per-group noise variance σ²_{e,k} from the residuals of an auxiliary model.

    σ²_{e,k} is the mean of ``(y - f̃(x))²`` over the group. For
    classification ``predictor`` must return the probability of the positive
    class, so residuals live in probability space. Groups absent from a
    domain get σ² = 0 with indicator 0.

    Parameters
    ----------
    data : sequence of DomainDataset
        Training domains.
    grouping : Grouping
        Partition of the samples.
    predictor : callable
        Maps an ``(n, d)`` feature array to ``n`` predictions.
    stats : GroupStatistics, optional
        Density statistics to extend; computed when omitted.

    Returns
    -------
    GroupStatistics
        Density statistics with the ``sigma2`` field filled.
    """
    if stats is None:
        stats = estimate_density(data, grouping)

    sigma2: Dict[GroupKey, float] = {}
    for dataset in data:
        e = dataset.domain_id
        predictions = np.asarray(predictor(dataset.x), dtype=float).reshape(-1)
        if predictions.shape[0] != dataset.n:
            raise DataError(f"Predictor returned {predictions.shape[0]} values for {dataset.n} samples")
        squared = (dataset.y - predictions) ** 2
        groups = grouping.assignment[e]
        totals = np.bincount(groups, weights=squared, minlength=grouping.k_count)
        for k in range(grouping.k_count):
            n_ek = stats.counts[(e, k)]
            sigma2[(e, k)] = float(totals[k] / n_ek) if n_ek > 0 else 0.0

    return replace(stats, sigma2=sigma2)


def read_domain_csv(path: Union[str, Path], task: Optional[str] = None) -> List[DomainDataset]:
    """
    Load domains from a CSV file.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row, feature columns, ``y`` and ``domain``
        columns and an optional ``group`` column.
    task : str, optional
        Force the task; inferred from the labels when omitted (all labels in
        {0, 1} means classification).

    Returns
    -------
    list of DomainDataset
        One dataset per domain, ordered by domain id.

    Raises
    ------
    DataError
        If the file is missing, lacks required columns or holds non-numeric
        values.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"CSV file not found: {path}")

    try:
        with open(path, "r", newline="") as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            rows = list(reader)
    except (OSError, csv.Error) as e:
        raise DataError(f"Failed to read CSV {path}: {str(e)}") from e

    for required in ("y", "domain"):
        if required not in header:
            raise DataError(f"CSV {path} is missing the '{required}' column")
    features = [name for name in header if name not in RESERVED_COLUMNS]
    if not features:
        raise DataError(f"CSV {path} has no feature columns")
    has_group = "group" in header

    try:
        x = np.array([[float(row[name]) for name in features] for row in rows], dtype=float)
        y = np.array([float(row["y"]) for row in rows], dtype=float)
        domain = np.array([int(float(row["domain"])) for row in rows], dtype=int)
        group = np.array([int(float(row["group"])) for row in rows], dtype=int) if has_group else None
    except (TypeError, ValueError) as e:
        raise DataError(f"Non-numeric value in CSV {path}: {str(e)}") from e

    if task is None:
        task = "classification" if y.size and np.all(np.isin(y, (0.0, 1.0))) else "regression"

    datasets = []
    for e in np.unique(domain):
        mask = domain == e
        datasets.append(
            DomainDataset(
                domain_id=int(e),
                x=x[mask],
                y=y[mask],
                group_ids=group[mask] if group is not None else None,
                task=task,
            )
        )
    logger.info(f"Loaded {len(rows)} rows in {len(datasets)} domains from {path}")
    return datasets


def write_domain_csv(data: Sequence[DomainDataset], path: Union[str, Path]) -> Path:
    """
    Write domains to the CSV layout read by :func:`read_domain_csv`.

    Feature columns are named ``x0 .. x{d-1}``; the ``group`` column is
    written when every domain carries group ids.
    """
    _require_data(data)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = data[0].d
    with_groups = all(dataset.group_ids is not None for dataset in data)
    header = [f"x{j}" for j in range(d)] + ["y", "domain"] + (["group"] if with_groups else [])

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for dataset in data:
            if dataset.d != d:
                raise DataError(f"Domain {dataset.domain_id} has dimension {dataset.d}, expected {d}")
            for i in range(dataset.n):
                row = [repr(float(v)) for v in dataset.x[i]] + [repr(float(dataset.y[i])), str(dataset.domain_id)]
                if with_groups:
                    row.append(str(int(dataset.group_ids[i])))
                writer.writerow(row)
    return path
