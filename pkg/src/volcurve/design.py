"""Design assembly: from patient records and a model spec to penalized blocks.

Column layout is fixed: intercept (or one indicator per year), then linear
covariates, then one centered spline block per smooth term, then one 0/1
indicator column per provider. The provider block is kept implicit (an index
vector) so the fitting engine can exploit its structure; ``X`` materializes
the full dense matrix when needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import proxy, spline
from .errors import InputError
from .proxy import VOLUME_MODES, VolumeTable
from .spline import KnotVector, SplineConfig

VOLUME_TERM = "volume"


@dataclass(frozen=True)
class PatientRecord:
    """One treated patient: cluster id, year, binary outcome, risk factors."""

    provider_id: str
    year: int
    outcome: int
    covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise InputError(
                f"outcome must be 0 or 1, got {self.outcome!r} "
                f"(provider {self.provider_id}, year {self.year})"
            )


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of the model terms.

    ``smooth_terms`` maps covariate names to spline configs; the smooth
    named "volume" takes its values from the volume proxy rather than from
    the per-record covariates. ``volume_mode`` picks that proxy.
    """

    linear_terms: tuple = ()
    smooth_terms: tuple = ()  # of (name, SplineConfig)
    year_intercepts: bool = False
    random_intercept: bool = True
    volume_mode: str = "caseload"

    def __post_init__(self):
        object.__setattr__(self, "linear_terms", tuple(self.linear_terms))
        object.__setattr__(self, "smooth_terms", tuple(self.smooth_terms))
        names = list(self.linear_terms) + [n for n, _ in self.smooth_terms]
        if len(set(names)) != len(names):
            raise InputError(f"model term names must be disjoint: {names}")
        n_volume = sum(1 for n, _ in self.smooth_terms if n == VOLUME_TERM)
        if n_volume > 1:
            raise InputError("at most one volume smooth is allowed")
        if VOLUME_TERM in self.linear_terms:
            raise InputError("volume must be a smooth term, not a linear one")
        if self.volume_mode not in VOLUME_MODES:
            raise InputError(f"unknown volume mode {self.volume_mode!r}")

    @property
    def has_volume_smooth(self) -> bool:
        return any(n == VOLUME_TERM for n, _ in self.smooth_terms)


@dataclass(frozen=True)
class SmoothTerm:
    """A smooth term frozen to its training basis."""

    name: str
    config: SplineConfig
    knots: KnotVector
    centering: np.ndarray = field(repr=False)  # Z, (n_basis, n_basis-1)
    cols: tuple  # column range (start, stop) in the full design

    @property
    def n_cols(self) -> int:
        return self.cols[1] - self.cols[0]

    def block(self, values, clamp: bool = False) -> np.ndarray:
        """Centered basis rows for the given covariate values."""
        return spline.basis_matrix(self.knots, values, clamp=clamp) @ self.centering


@dataclass(frozen=True)
class Penalty:
    """One penalty block embedded at columns [start, stop) of the design."""

    name: str
    matrix: np.ndarray | None = field(repr=False)  # None marks an identity penalty
    cols: tuple = (0, 0)
    rank: int = 0
    log_pdet: float = 0.0  # sum of log positive eigenvalues at lambda = 1

    @property
    def size(self) -> int:
        return self.cols[1] - self.cols[0]

    @property
    def null_dim(self) -> int:
        return self.size - self.rank

    def dense(self) -> np.ndarray:
        if self.matrix is None:
            return np.eye(self.size)
        return self.matrix


@dataclass
class AssembledModel:
    """Penalized design ready for fitting.

    ``x_fixed`` holds every column except the provider indicators, which are
    represented by ``provider_index`` (record -> provider position). The
    identity penalty on the provider block realizes the random intercepts as
    ridge-penalized coefficients with weight 1/tau^2.
    """

    y: np.ndarray
    x_fixed: np.ndarray
    provider_index: np.ndarray | None
    provider_ids: tuple
    index_map: dict
    penalties: list
    smooths: dict
    spec: ModelSpec
    years: tuple
    volume_values: np.ndarray | None  # per-record volume fed to the volume smooth

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def n_providers(self) -> int:
        return len(self.provider_ids)

    @property
    def p_fixed(self) -> int:
        return self.x_fixed.shape[1]

    @property
    def p(self) -> int:
        if self.provider_index is None:
            return self.p_fixed
        return self.p_fixed + self.n_providers

    @property
    def X(self) -> np.ndarray:
        """Full dense design matrix (fixed columns then provider indicators)."""
        if self.provider_index is None:
            return self.x_fixed
        u = np.zeros((self.n_obs, self.n_providers))
        u[np.arange(self.n_obs), self.provider_index] = 1.0
        return np.hstack([self.x_fixed, u])

    def without_random_intercept(self) -> "AssembledModel":
        """The same model with the provider block and its penalty removed."""
        if self.provider_index is None:
            return self
        index_map = {k: v for k, v in self.index_map.items() if k != "providers"}
        penalties = [p for p in self.penalties if p.name != "providers"]
        return AssembledModel(
            y=self.y,
            x_fixed=self.x_fixed,
            provider_index=None,
            provider_ids=(),
            index_map=index_map,
            penalties=penalties,
            smooths=self.smooths,
            spec=ModelSpec(
                linear_terms=self.spec.linear_terms,
                smooth_terms=self.spec.smooth_terms,
                year_intercepts=self.spec.year_intercepts,
                random_intercept=False,
                volume_mode=self.spec.volume_mode,
            ),
            years=self.years,
            volume_values=self.volume_values,
        )


def _covariate(record: PatientRecord, name: str, row_no: int) -> float:
    try:
        value = record.covariates[name]
    except KeyError:
        raise InputError(
            f"record {row_no} (provider {record.provider_id}, year "
            f"{record.year}) is missing covariate {name!r}"
        ) from None
    return float(value)


def assemble(
    records: list,
    spec: ModelSpec,
    volumes: VolumeTable | None = None,
) -> AssembledModel:
    """Build the penalized design for the given records.

    Every smooth block is centered to sum to zero over the training rows and
    carries its transformed difference penalty; the provider block, when
    present, carries an identity penalty.
    """
    if not records:
        raise InputError("no patient records")
    n = len(records)
    y = np.array([r.outcome for r in records], dtype=float)
    years = tuple(sorted({r.year for r in records}))

    columns: list[np.ndarray] = []
    index_map: dict[str, tuple[int, int]] = {}
    pos = 0

    if spec.year_intercepts:
        if len(years) < 2:
            raise InputError("year intercepts require records from >= 2 years")
        year_pos = {yr: i for i, yr in enumerate(years)}
        block = np.zeros((n, len(years)))
        for i, r in enumerate(records):
            block[i, year_pos[r.year]] = 1.0
        columns.append(block)
        index_map["year"] = (pos, pos + len(years))
        pos += len(years)
    else:
        columns.append(np.ones((n, 1)))
        index_map["intercept"] = (pos, pos + 1)
        pos += 1

    for name in spec.linear_terms:
        col = np.array([_covariate(r, name, i + 1) for i, r in enumerate(records)])
        columns.append(col[:, None])
        index_map[name] = (pos, pos + 1)
        pos += 1

    volume_values = None
    if spec.has_volume_smooth:
        if spec.volume_mode == "caseload":
            counts: dict[tuple[str, int], int] = {}
            for r in records:
                key = (r.provider_id, r.year)
                counts[key] = counts.get(key, 0) + 1
            volume_values = np.array(
                [float(counts[(r.provider_id, r.year)]) for r in records]
            )
        else:
            if volumes is None:
                raise InputError(
                    f"volume mode {spec.volume_mode!r} requires a volume table"
                )
            cache: dict[tuple[str, int], float] = {}
            vals = np.empty(n)
            for i, r in enumerate(records):
                key = (r.provider_id, r.year)
                if key not in cache:
                    cache[key] = proxy.provider_volume(
                        volumes, spec.volume_mode, r.provider_id, r.year
                    )
                vals[i] = cache[key]
            volume_values = vals

    smooths: dict[str, SmoothTerm] = {}
    penalties: list[Penalty] = []
    for name, config in spec.smooth_terms:
        if name == VOLUME_TERM:
            vals = volume_values
        else:
            vals = np.array(
                [_covariate(r, name, i + 1) for i, r in enumerate(records)]
            )
        knots = spline.make_knots(vals, config)
        raw = spline.basis_matrix(knots, vals)
        z = spline.centering_transform(raw).transform
        block = raw @ z
        raw_penalty = spline.difference_penalty(knots.n_basis, config.penalty_order)
        pen = spline.centered_penalty(raw_penalty, z)
        cols = (pos, pos + block.shape[1])
        eigs = np.linalg.eigvalsh(pen.matrix)
        log_pdet = float(np.sum(np.log(eigs[eigs > 1e-10 * max(eigs[-1], 1e-300)])))
        smooths[name] = SmoothTerm(
            name=name, config=config, knots=knots, centering=z, cols=cols
        )
        penalties.append(
            Penalty(
                name=f"s({name})",
                matrix=pen.matrix,
                cols=cols,
                rank=pen.rank,
                log_pdet=log_pdet,
            )
        )
        columns.append(block)
        index_map[f"s({name})"] = cols
        pos += block.shape[1]

    x_fixed = np.hstack(columns)

    provider_index = None
    provider_ids: tuple = ()
    if spec.random_intercept:
        provider_ids = tuple(sorted({r.provider_id for r in records}))
        id_pos = {pid: i for i, pid in enumerate(provider_ids)}
        provider_index = np.array([id_pos[r.provider_id] for r in records])
        cols = (pos, pos + len(provider_ids))
        index_map["providers"] = cols
        penalties.append(
            Penalty(
                name="providers",
                matrix=None,
                cols=cols,
                rank=len(provider_ids),
                log_pdet=0.0,
            )
        )

    return AssembledModel(
        y=y,
        x_fixed=x_fixed,
        provider_index=provider_index,
        provider_ids=provider_ids,
        index_map=index_map,
        penalties=penalties,
        smooths=smooths,
        spec=spec,
        years=years,
        volume_values=volume_values,
    )


def design_row(
    model,
    covariates: dict | None = None,
    volume: float | None = None,
    provider: str = "average",
    year: int | None = None,
    clamp: bool = False,
) -> np.ndarray:
    """One prediction row matching the assembled column layout.

    ``model`` may be an :class:`AssembledModel` or a fitted model exposing
    the same ``spec``/``index_map``/``smooths``/``provider_ids``/``years``
    attributes. ``provider="average"`` zeroes the provider block (a provider
    with random effect 0); covariates default to zero when omitted.
    """
    covariates = covariates or {}
    spec = model.spec
    p = model.index_map_size if hasattr(model, "index_map_size") else None
    if p is None:
        p = max(stop for (_, stop) in model.index_map.values())
    row = np.zeros(p)

    if spec.year_intercepts:
        start, stop = model.index_map["year"]
        if year is None:
            raise InputError("year is required for a model with year intercepts")
        if year not in model.years:
            raise InputError(f"year {year} not among training years {model.years}")
        row[start + model.years.index(year)] = 1.0
    else:
        start, _ = model.index_map["intercept"]
        row[start] = 1.0

    for name in spec.linear_terms:
        start, _ = model.index_map[name]
        if name not in covariates:
            raise InputError(f"missing covariate {name!r} for prediction row")
        row[start] = float(covariates[name])

    for name, _ in spec.smooth_terms:
        term = model.smooths[name]
        if name == VOLUME_TERM:
            if volume is None:
                raise InputError("volume is required for a model with a volume smooth")
            value = float(volume)
        else:
            if name not in covariates:
                raise InputError(f"missing covariate {name!r} for prediction row")
            value = float(covariates[name])
        start, stop = term.cols
        row[start:stop] = term.block([value], clamp=clamp)[0]

    if "providers" in model.index_map and provider != "average":
        if provider not in model.provider_ids:
            raise InputError(f"unknown provider {provider!r}")
        start, _ = model.index_map["providers"]
        row[start + model.provider_ids.index(provider)] = 1.0

    return row
