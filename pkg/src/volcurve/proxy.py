"""Provider volume definitions.

Three ways to operationalize provider size: raw caseload in the record
year, the mean of all non-zero yearly volumes, and the causally safe
cumulative average that only looks backwards in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import InputError, NoVolumeHistoryError

VOLUME_MODES = ("caseload", "simple_average", "cumulative_average")


@dataclass(frozen=True)
class VolumeTable:
    """Yearly volumes keyed by (provider_id, year). Volumes are >= 0."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for (pid, year), vol in self.entries.items():
            if vol < 0:
                raise InputError(f"negative volume for provider {pid}, year {year}")

    def years(self, provider: str) -> list[int]:
        return sorted(y for (p, y) in self.entries if p == provider)

    def providers(self) -> list[str]:
        return sorted({p for (p, _) in self.entries})


def cumulative_average(table: VolumeTable, provider: str, year: int) -> float:
    """Average of all available non-zero yearly volumes up to and including ``year``.

    Zero-volume years drop out of both numerator and denominator. Entries in
    later years never influence the result.
    """
    total = 0.0
    n_nonzero = 0
    for (pid, y), vol in table.entries.items():
        if pid == provider and y <= year and vol > 0:
            total += vol
            n_nonzero += 1
    if n_nonzero == 0:
        raise NoVolumeHistoryError(
            f"no volume history for provider {provider} up to year {year}"
        )
    return total / n_nonzero


def simple_average(table: VolumeTable, provider: str) -> float:
    """Mean of all available non-zero yearly volumes, regardless of year."""
    vols = [v for (p, _), v in table.entries.items() if p == provider and v > 0]
    if not vols:
        raise NoVolumeHistoryError(f"no volume history for provider {provider}")
    return sum(vols) / len(vols)


def provider_volume(table, mode: str, provider: str, year: int, records=None) -> float:
    """Volume of ``provider`` in ``year`` under the chosen mode.

    Caseload mode counts patient records for (provider, year) and needs
    ``records``; the averaging modes need the volume table.
    """
    if mode == "caseload":
        if records is None:
            raise InputError("caseload volume mode requires patient records")
        count = sum(
            1 for r in records if r.provider_id == provider and r.year == year
        )
        if count == 0:
            raise NoVolumeHistoryError(
                f"no records for provider {provider} in year {year}"
            )
        return float(count)
    if table is None:
        raise InputError(f"volume mode {mode!r} requires a volume table")
    if mode == "simple_average":
        return simple_average(table, provider)
    if mode == "cumulative_average":
        return cumulative_average(table, provider, year)
    raise InputError(f"unknown volume mode {mode!r}")


@dataclass(frozen=True)
class VolumeStats:
    """Per-provider mean and sample standard deviation of non-zero yearly volumes."""

    provider_id: str
    mean: float
    sd: float
    n_years: int
    single_year: bool


def volume_variability(table: VolumeTable) -> list[VolumeStats]:
    """Mean vs. standard deviation of each provider's non-zero yearly volumes.

    Providers with a single usable year get sd = 0 and are flagged;
    providers without any non-zero year are excluded.
    """
    out = []
    for pid in table.providers():
        vols = [
            v for (p, _), v in table.entries.items() if p == pid and v > 0
        ]
        if not vols:
            continue
        mean = sum(vols) / len(vols)
        if len(vols) > 1:
            sd = math.sqrt(sum((v - mean) ** 2 for v in vols) / (len(vols) - 1))
        else:
            sd = 0.0
        out.append(
            VolumeStats(
                provider_id=pid,
                mean=mean,
                sd=sd,
                n_years=len(vols),
                single_year=len(vols) == 1,
            )
        )
    return out
