"""Longitudinal MRT data model and CSV ingestion.

A dataset holds one block per participant: moderator covariates, binary
actions, randomization probabilities (of action 1 given history) and
responses. Blocks are independent units and may have different lengths.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ValidationError


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for dataset CSV files.

    Moderator columns become the covariate matrix in the declared order.
    """

    id_col: str = "id"
    time_col: str = "t"
    action_col: str = "action"
    prob_col: str = "prob"
    response_col: str = "response"
    moderator_cols: tuple = ()

    def mapped_columns(self):
        return (
            self.id_col,
            self.time_col,
            self.action_col,
            self.prob_col,
            self.response_col,
        ) + tuple(self.moderator_cols)


class MrtDataset:
    """Per-participant longitudinal observations.

    Parameters
    ----------
    ids : sequence of participant identifiers (one per block)
    covariates : list of (T_i, p_raw) arrays of moderator values
    actions : list of (T_i,) arrays in {0, 1}
    probs : list of (T_i,) arrays, randomization probability of action 1
    responses : list of (T_i,) arrays of proximal outcomes
    """

    def __init__(self, ids, covariates, actions, probs, responses,
                 moderator_names=None, dropped_rows=0):
        n = len(ids)
        if not (len(covariates) == len(actions) == len(probs) == len(responses) == n):
            raise ValidationError("all per-participant lists must share one length")
        self.ids = list(ids)
        self.covariates = [np.atleast_2d(np.asarray(c, dtype=float)) for c in covariates]
        self.actions = [np.asarray(a, dtype=float) for a in actions]
        self.probs = [np.asarray(p, dtype=float) for p in probs]
        self.responses = [np.asarray(y, dtype=float) for y in responses]
        self.dropped_rows = int(dropped_rows)

        p_raw = self.covariates[0].shape[1] if n else 0
        for i in range(n):
            T_i = self.covariates[i].shape[0]
            if self.covariates[i].shape[1] != p_raw:
                raise ValidationError("moderator dimension differs across participants")
            for arr, name in ((self.actions[i], "action"),
                              (self.probs[i], "prob"),
                              (self.responses[i], "response")):
                if arr.shape != (T_i,):
                    raise ValidationError(
                        f"{name} length mismatch for participant {self.ids[i]}")
            if not np.all(np.isin(self.actions[i], (0.0, 1.0))):
                raise ValidationError(f"non-binary action for participant {self.ids[i]}")
            if np.any(self.probs[i] <= 0.0) or np.any(self.probs[i] >= 1.0):
                raise ValidationError(
                    f"randomization probability outside (0,1) for participant {self.ids[i]}")
            if not np.all(np.isfinite(self.covariates[i])) or not np.all(
                    np.isfinite(self.responses[i])):
                raise ValidationError(f"non-finite cell for participant {self.ids[i]}")
        self.p_raw = p_raw
        if moderator_names is None:
            moderator_names = [f"S{k + 1}" for k in range(p_raw)]
        self.moderator_names = list(moderator_names)

    @property
    def n(self):
        return len(self.ids)

    @property
    def T(self):
        """Decision times per participant."""
        return [c.shape[0] for c in self.covariates]

    @property
    def n_rows(self):
        return sum(self.T)

    def subset(self, indices):
        """Dataset restricted to the given participant positions."""
        idx = list(indices)
        return MrtDataset(
            [self.ids[i] for i in idx],
            [self.covariates[i] for i in idx],
            [self.actions[i] for i in idx],
            [self.probs[i] for i in idx],
            [self.responses[i] for i in idx],
            moderator_names=self.moderator_names,
        )

    def prob_of_realized_action(self, i):
        """p_it(A_it | H_it) for every t of participant i."""
        a, p1 = self.actions[i], self.probs[i]
        return np.where(a == 1.0, p1, 1.0 - p1)


def ingest_csv(path, schema):
    """Read a dataset CSV, grouping rows by participant and sorting by time.

    Rows with any empty mapped cell are dropped (count kept on the dataset);
    a non-empty cell that fails to parse raises ParseError naming the spot.
    """
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file, header row required")
        missing = [c for c in schema.mapped_columns() if c not in reader.fieldnames]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        rows = []
        dropped = 0
        for lineno, rec in enumerate(reader, start=2):
            vals = {c: (rec.get(c) or "").strip() for c in schema.mapped_columns()}
            if any(v == "" for v in vals.values()):
                dropped += 1
                continue
            parsed = {}
            for col, raw in vals.items():
                if col == schema.id_col:
                    parsed[col] = raw
                    continue
                try:
                    parsed[col] = float(raw)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {lineno}, column '{col}': cannot parse {raw!r}")
            rows.append(parsed)

    by_id = {}
    for rec in rows:
        by_id.setdefault(rec[schema.id_col], []).append(rec)

    ids, covs, acts, probs, resps = [], [], [], [], []
    for pid in sorted(by_id):
        block = sorted(by_id[pid], key=lambda r: r[schema.time_col])
        ids.append(pid)
        covs.append(np.array([[r[c] for c in schema.moderator_cols] for r in block]))
        acts.append(np.array([r[schema.action_col] for r in block]))
        probs.append(np.array([r[schema.prob_col] for r in block]))
        resps.append(np.array([r[schema.response_col] for r in block]))

    for i, parr in enumerate(probs):
        if np.any(parr <= 0.0) or np.any(parr >= 1.0):
            raise ValidationError(
                f"{path}: probability outside (0,1) for participant {ids[i]}")

    return MrtDataset(ids, covs, acts, probs, resps,
                      moderator_names=list(schema.moderator_cols),
                      dropped_rows=dropped)


def write_csv(dataset, path, schema=None):
    """Write a dataset in the ingest_csv layout (full float precision)."""
    import csv

    if schema is None:
        schema = CsvSchema(moderator_cols=tuple(dataset.moderator_names))
    header = list(schema.mapped_columns())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, pid in enumerate(dataset.ids):
            T_i = dataset.covariates[i].shape[0]
            for t in range(T_i):
                row = [pid, t + 1,
                       repr(float(dataset.actions[i][t])),
                       repr(float(dataset.probs[i][t])),
                       repr(float(dataset.responses[i][t]))]
                row += [repr(float(v)) for v in dataset.covariates[i][t]]
                writer.writerow(row)
    return path
