"""Closing-price ingestion, log returns, and the temporal train/val/test split.

Input files are delimiter-separated text: first column an ISO-8601 date,
header row of ticker symbols, one positive closing price per cell.  Rows
with any missing price are dropped (and counted); prices are never
interpolated, since interpolation distorts tails.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none"}


@dataclass
class PriceTable:
    dates: list  # strictly increasing datetime.date
    tickers: list
    prices: np.ndarray  # (N, d), positive


@dataclass
class ReturnsDataset:
    """Log-return matrix with a leakage-free temporal split.

    Row j carries the date the return realized (the later of its two
    price dates).  Test rows are strictly after the cutoff; train and
    validation are sampled uniformly from the rows at or before it.
    """

    x: np.ndarray
    dates: list
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    cutoff_date: dt.date

    @property
    def d(self):
        return self.x.shape[1]

    @property
    def train(self):
        return self.x[self.train_idx]

    @property
    def val(self):
        return self.x[self.val_idx]

    @property
    def test(self):
        return self.x[self.test_idx]

    def save(self, path):
        np.savez(
            path,
            x=self.x,
            dates=np.array([d.isoformat() for d in self.dates]),
            train_idx=self.train_idx,
            val_idx=self.val_idx,
            test_idx=self.test_idx,
            meta=np.array(json.dumps({"cutoff": self.cutoff_date.isoformat()})),
        )

    @classmethod
    def load(cls, path):
        z = np.load(path, allow_pickle=False)
        meta = json.loads(str(z["meta"]))
        return cls(
            x=z["x"],
            dates=[dt.date.fromisoformat(s) for s in z["dates"]],
            train_idx=z["train_idx"],
            val_idx=z["val_idx"],
            test_idx=z["test_idx"],
            cutoff_date=dt.date.fromisoformat(meta["cutoff"]),
        )


def load_prices(path, delimiter=",", tickers=None):
    """Parse a wide price file into a PriceTable.

    Raises ValueError with the offending line number on parse errors,
    duplicate dates, or non-positive prices (named by ticker and date).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ValueError(f"{path}: line 1: expected a date column plus tickers")
        all_tickers = [t.strip() for t in header[1:]]
        if tickers is not None:
            missing = [t for t in tickers if t not in all_tickers]
            if missing:
                raise ValueError(f"{path}: tickers not in file: {missing}")
            cols = [all_tickers.index(t) for t in tickers]
            use_tickers = list(tickers)
        else:
            cols = list(range(len(all_tickers)))
            use_tickers = all_tickers

        dates, rows = [], []
        seen = set()
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(all_tickers) + 1:
                raise ValueError(
                    f"{path}: line {lineno}: expected {len(all_tickers) + 1} fields, "
                    f"got {len(row)}"
                )
            try:
                date = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: bad date {row[0]!r}"
                ) from None
            if date in seen:
                raise ValueError(f"{path}: line {lineno}: duplicate date {date}")
            seen.add(date)
            cells = [row[1 + c].strip() for c in cols]
            if any(c.lower() in _MISSING for c in cells):
                dropped += 1
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: unparseable price among {cells!r}"
                ) from None
            for t, v in zip(use_tickers, values):
                if v <= 0:
                    raise ValueError(
                        f"{path}: line {lineno}: non-positive price {v} "
                        f"for {t} on {date}"
                    )
            dates.append(date)
            rows.append(values)
    if dropped:
        log.info("dropped %d rows with missing prices from %s", dropped, path)
    if not rows:
        raise ValueError(f"{path}: no usable price rows")
    order = np.argsort(np.array([d.toordinal() for d in dates]))
    dates = [dates[i] for i in order]
    prices = np.asarray(rows, dtype=float)[order]
    return PriceTable(dates=dates, tickers=use_tickers, prices=prices)


def save_prices(table, path, delimiter=","):
    """Write a PriceTable back to disk (inverse of load_prices)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["date"] + list(table.tickers))
        for date, row in zip(table.dates, table.prices):
            writer.writerow([date.isoformat()] + [repr(float(v)) for v in row])


def log_returns(table: PriceTable):
    """Daily log returns log(S_{j+1} / S_j); one fewer row than prices."""
    if np.any(table.prices <= 0):
        bad = np.argwhere(table.prices <= 0)[0]
        raise ValueError(
            f"non-positive price for {table.tickers[bad[1]]} on {table.dates[bad[0]]}"
        )
    return np.log(table.prices[1:] / table.prices[:-1])


def temporal_split(x, dates, fractions=(0.4, 0.2, 0.4), seed=0):
    """Split rows into train/val/test with test strictly after the cutoff.

    The cutoff is the latest date leaving ~`fractions[2]` of rows after
    it; earlier rows are partitioned uniformly at random into train and
    validation with the given seed.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if len(dates) != n:
        raise ValueError("dates must align with rows")
    if n < 10:
        raise ValueError("refusing to split fewer than 10 rows")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n_test = int(round(fractions[2] * n))
    n_test = min(max(n_test, 1), n - 2)
    n_head = n - n_test
    n_train = min(int(round(fractions[0] * n)), n_head - 1)
    cutoff = dates[n_head - 1]
    rng = np.random.default_rng(seed)
    head = rng.permutation(n_head)
    return ReturnsDataset(
        x=x,
        dates=list(dates),
        train_idx=np.sort(head[:n_train]),
        val_idx=np.sort(head[n_train:]),
        test_idx=np.arange(n_head, n),
        cutoff_date=cutoff,
    )


def dataset_from_returns(x, fractions=(0.4, 0.2, 0.4), seed=0):
    """Split a bare return matrix using synthetic consecutive dates."""
    x = np.asarray(x, dtype=float)
    base = dt.date(2000, 1, 1)
    dates = [base + dt.timedelta(days=int(i)) for i in range(len(x))]
    return temporal_split(x, dates, fractions, seed)


def build_dataset(path, delimiter=",", tickers=None, fractions=(0.4, 0.2, 0.4), seed=0):
    """Full ingestion pipeline: prices file -> split ReturnsDataset."""
    table = load_prices(path, delimiter=delimiter, tickers=tickers)
    x = log_returns(table)
    return temporal_split(x, table.dates[1:], fractions, seed)
