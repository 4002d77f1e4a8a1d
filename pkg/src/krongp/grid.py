"""Repeated-measures data on a complete Kronecker grid.

A dataset is described by three covariate components (for instance
individuals, time points and anatomical sites) and a set of outputs. Every
combination of component rows and outputs is one cell of the grid; cells
without a measurement are kept and flagged as unobserved.

Flat layout: ``((output * N3 + i3) * N2 + i2) * N1 + i1``, i.e. the C-order
view of an array of shape ``(N4, N3, N2, N1)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .kernels import SE_ARD, KernelSpec

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
FAMILIES = (GAUSSIAN, BERNOULLI)

COMPONENT_ROLES = ("component1", "component2", "component3")
KEY_ROLES = ("key1", "key2", "key3")
NA_VALUES = ["", "NA"]


class IngestError(ValueError):
    """Input table cannot be mapped onto a grid."""


@dataclass
class GridComponent:
    """Unique covariate rows of one grid dimension."""

    X: np.ndarray
    kernel: KernelSpec = field(default_factory=KernelSpec)
    columns: tuple[str, ...] = ()
    keys: Optional[tuple] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.X = X
        if not self.columns:
            self.columns = tuple(f"c{j}" for j in range(X.shape[1]))
        if len(self.columns) != X.shape[1]:
            raise ValueError("column names do not match covariate width")

    @property
    def size(self) -> int:
        return self.X.shape[0]


@dataclass
class GridDesign:
    components: list[GridComponent]
    output_families: list[str]
    output_names: Optional[list[str]] = None

    def __post_init__(self):
        if len(self.components) != 3:
            raise ValueError("a grid design has exactly three covariate components")
        for i, comp in enumerate(self.components, start=1):
            if comp.size < 1:
                raise ValueError(f"component {i} is empty")
            ident = comp.keys if comp.keys is not None else [tuple(r) for r in comp.X]
            if len(set(ident)) != comp.size:
                raise ValueError(f"component {i} has repeated rows")
        fams = [str(f).lower() for f in self.output_families]
        if not fams:
            raise ValueError("need at least one output")
        for f in fams:
            if f not in FAMILIES:
                raise ValueError(f"unknown output family {f!r}")
        n_g = fams.count(GAUSSIAN)
        if fams[:n_g] != [GAUSSIAN] * n_g:
            raise ValueError("Gaussian outputs must precede Bernoulli outputs")
        self.output_families = fams
        if self.output_names is None:
            self.output_names = [f"y{k + 1}" for k in range(len(fams))]
        if len(self.output_names) != len(fams):
            raise ValueError("output names do not match families")

    @property
    def sizes(self) -> tuple[int, int, int]:
        """``(N1, N2, N3)``."""
        return tuple(c.size for c in self.components)

    @property
    def n_outputs(self) -> int:
        return len(self.output_families)

    @property
    def n_gaussian(self) -> int:
        return self.output_families.count(GAUSSIAN)

    @property
    def n_bernoulli(self) -> int:
        return self.n_outputs - self.n_gaussian

    @property
    def n_cells(self) -> int:
        """Cells per output, ``N1 * N2 * N3``."""
        n1, n2, n3 = self.sizes
        return n1 * n2 * n3

    @property
    def tensor_shape(self) -> tuple[int, int, int, int]:
        n1, n2, n3 = self.sizes
        return (self.n_outputs, n3, n2, n1)

    @property
    def latent_size(self) -> int:
        return self.n_outputs * self.n_cells

    def with_kernels(self, kernels: Sequence[KernelSpec]) -> "GridDesign":
        comps = [replace(c, kernel=k) for c, k in zip(self.components, kernels)]
        return replace(self, components=comps)


@dataclass
class OutcomeMatrix:
    """Outcome values of shape ``(N4, N1*N2*N3)`` plus an observed mask."""

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.observed.shape:
            raise ValueError("values and mask must be 2-D arrays of the same shape")
        # unobserved values are meaningless; keep them as NaN
        self.values = np.where(self.observed, self.values, np.nan)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def validate(self, design: GridDesign) -> None:
        if self.shape != (design.n_outputs, design.n_cells):
            raise ValueError(
                f"outcome shape {self.shape} does not match design "
                f"({design.n_outputs}, {design.n_cells})"
            )
        if not np.all(np.isfinite(self.values[self.observed])):
            raise ValueError("observed outcomes must be finite")
        ng = design.n_gaussian
        bern = self.values[ng:][self.observed[ng:]]
        if not np.all((bern == 0) | (bern == 1)):
            raise ValueError("Bernoulli outcomes must be 0 or 1")
        for k in np.flatnonzero(~self.observed.any(axis=1)):
            warnings.warn(
                f"output {design.output_names[k]} has no observed values; it is fit from the prior only",
                stacklevel=2,
            )

    def with_missing(self, mask: np.ndarray) -> "OutcomeMatrix":
        """Copy with the cells in ``mask`` marked unobserved."""
        return OutcomeMatrix(self.values.copy(), self.observed & ~np.asarray(mask, dtype=bool))


@dataclass(frozen=True)
class CellIndex:
    output: int
    i3: int
    i2: int
    i1: int


def flat_index(cell: CellIndex, sizes: Sequence[int]) -> int:
    n1, n2, n3 = sizes
    for v, n in ((cell.i1, n1), (cell.i2, n2), (cell.i3, n3)):
        if not 0 <= v < n:
            raise IndexError(f"cell {cell} out of range for sizes {tuple(sizes)}")
    return ((cell.output * n3 + cell.i3) * n2 + cell.i2) * n1 + cell.i1


def cell_index(flat: int, sizes: Sequence[int]) -> CellIndex:
    n1, n2, n3 = sizes
    rest, i1 = divmod(int(flat), n1)
    rest, i2 = divmod(rest, n2)
    output, i3 = divmod(rest, n3)
    return CellIndex(output, i3, i2, i1)


def cell_covariates(design: GridDesign) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Component row indices ``(i1, i2, i3)`` for every cell, in flat order."""
    n1, n2, n3 = design.sizes
    i3, i2, i1 = np.meshgrid(np.arange(n3), np.arange(n2), np.arange(n1), indexing="ij")
    return i1.ravel(), i2.ravel(), i3.ravel()


# --------------------------------------------------------------------------
# Ingestion


def _parse_schema(schema: dict) -> dict:
    if "columns" in schema:
        cols = dict(schema["columns"])
        outputs = dict(schema.get("outputs", {}))
    else:
        cols, outputs = dict(schema), {}
    valid = set(COMPONENT_ROLES) | set(KEY_ROLES) | {
        "outcome:gaussian",
        "outcome:bernoulli",
        "ignore",
        "output",
        "value",
    }
    for name, role in cols.items():
        if role not in valid:
            raise IngestError(f"column {name!r}: unknown role {role!r}")
    for name, fam in outputs.items():
        if fam not in FAMILIES:
            raise IngestError(f"output {name!r}: unknown family {fam!r}")
    return {"columns": cols, "outputs": outputs, "kernels": schema.get("kernels", {})}


def _unique_rows(table: pd.DataFrame, cov_cols: list[str], key_col: Optional[str], comp: int):
    """Unique component rows in first-appearance order and each row's code."""
    if key_col is not None:
        keys = table[key_col].to_numpy()
        codes, uniques = pd.factorize(keys, sort=False)
        X = np.zeros((len(uniques), len(cov_cols)))
        if cov_cols:
            vals = table[cov_cols].to_numpy(dtype=float)
            first = np.full(len(uniques), -1)
            for r, c in enumerate(codes):
                if first[c] < 0:
                    first[c] = r
            X = vals[first]
            if not np.array_equal(vals, X[codes]):
                raise IngestError(f"inconsistent covariates for the same component {comp} key")
        return X, codes, tuple(uniques.tolist())
    if not cov_cols:
        return np.zeros((1, 0)), np.zeros(len(table), dtype=int), None
    vals = table[cov_cols].to_numpy(dtype=float)
    seen: dict[tuple, int] = {}
    codes = np.empty(len(table), dtype=int)
    for r, row in enumerate(map(tuple, vals)):
        codes[r] = seen.setdefault(row, len(seen))
    X = np.array(list(seen.keys()), dtype=float).reshape(len(seen), len(cov_cols))
    return X, codes, None


def grid_from_table(table: pd.DataFrame, schema: dict) -> tuple[GridDesign, OutcomeMatrix]:
    """Factor a long-format table into a grid design and outcome matrix.

    Two layouts are accepted: one row per cell with one column per outcome
    (roles ``outcome:gaussian`` / ``outcome:bernoulli``), or one row per
    (cell, output) with an ``output`` name column and a ``value`` column,
    families given under ``schema["outputs"]``.
    """
    sch = _parse_schema(schema)
    cols = sch["columns"]
    for name in cols:
        if name not in table.columns:
            raise IngestError(f"schema column {name!r} missing from data")

    cov_cols, key_cols = [], []
    for i in range(3):
        cov_cols.append([c for c, r in cols.items() if r == COMPONENT_ROLES[i]])
        keys = [c for c, r in cols.items() if r == KEY_ROLES[i]]
        if len(keys) > 1:
            raise IngestError(f"at most one key column per component (component {i + 1})")
        key_cols.append(keys[0] if keys else None)
        for c in cov_cols[i]:
            if not pd.api.types.is_numeric_dtype(table[c]):
                try:
                    table[c].astype(float)
                except (TypeError, ValueError) as exc:
                    raise IngestError(f"non-numeric covariate column {c!r}") from exc
            if table[c].isna().any():
                raise IngestError(f"covariate column {c!r} has missing values")

    output_col = [c for c, r in cols.items() if r == "output"]
    value_col = [c for c, r in cols.items() if r == "value"]
    long_layout = bool(output_col)
    if long_layout:
        if len(output_col) != 1 or len(value_col) != 1:
            raise IngestError("per-output layout needs exactly one 'output' and one 'value' column")
        out_names = list(pd.unique(table[output_col[0]].astype(str)))
        families = sch["outputs"]
        missing = [n for n in out_names if n not in families]
        if missing:
            raise IngestError(f"no family given for outputs {missing}")
        # keep outputs listed in the schema even if absent from the data
        out_names = list(families.keys()) + [n for n in out_names if n not in families]
        fams = [families[n] for n in out_names]
    else:
        out_names = [c for c, r in cols.items() if r.startswith("outcome:")]
        fams = [cols[c].split(":", 1)[1] for c in out_names]
    if not out_names:
        raise IngestError("no outcome columns in schema")
    order = [k for k, f in enumerate(fams) if f == GAUSSIAN] + [
        k for k, f in enumerate(fams) if f == BERNOULLI
    ]
    out_names = [out_names[k] for k in order]
    fams = [fams[k] for k in order]

    comps, codes = [], []
    for i in range(3):
        X, code, keys = _unique_rows(table, cov_cols[i], key_cols[i], i + 1)
        codes.append(code)
        kernel = sch["kernels"].get(f"component{i + 1}", {})
        kind = kernel.get("kind", SE_ARD if cov_cols[i] else "linear")
        spec = KernelSpec(kind=kind, active_columns=kernel.get("active_columns"))
        comps.append(GridComponent(X, spec, tuple(cov_cols[i]), keys))
    design = GridDesign(comps, fams, out_names)
    n1, n2, n3 = design.sizes
    cell = (codes[2] * n2 + codes[1]) * n1 + codes[0]

    values = np.full((design.n_outputs, design.n_cells), np.nan)
    observed = np.zeros_like(values, dtype=bool)
    if long_layout:
        out_idx = {n: k for k, n in enumerate(out_names)}
        o = table[output_col[0]].astype(str).map(out_idx).to_numpy()
        pair = o * design.n_cells + cell
        if len(np.unique(pair)) != len(pair):
            raise IngestError("duplicate cell in input")
        v = pd.to_numeric(table[value_col[0]], errors="raise").to_numpy(dtype=float)
        ok = ~np.isnan(v)
        values[o[ok], cell[ok]] = v[ok]
        observed[o[ok], cell[ok]] = True
    else:
        if len(np.unique(cell)) != len(cell):
            raise IngestError("duplicate cell in input")
        for k, name in enumerate(out_names):
            v = pd.to_numeric(table[name], errors="raise").to_numpy(dtype=float)
            ok = ~np.isnan(v)
            values[k, cell[ok]] = v[ok]
            observed[k, cell[ok]] = True

    ng = design.n_gaussian
    bern = values[ng:][observed[ng:]]
    if not np.all((bern == 0) | (bern == 1)):
        raise IngestError("Bernoulli value outside {0, 1}")
    y = OutcomeMatrix(values, observed)
    y.validate(design)
    return design, y


def load_schema(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def ingest_long_csv(path, schema) -> tuple[GridDesign, OutcomeMatrix]:
    """Read a long-format CSV and its schema (dict or JSON path) into a grid."""
    if not isinstance(schema, dict):
        schema = load_schema(schema)
    table = pd.read_csv(
        path, encoding="utf-8", na_values=NA_VALUES, keep_default_na=False, float_precision="round_trip"
    )
    return grid_from_table(table, schema)


def to_long_table(design: GridDesign, y: OutcomeMatrix, per_output: bool = False) -> tuple[pd.DataFrame, dict]:
    """Inverse of :func:`grid_from_table`; returns the table and its schema.

    All grid cells are written, unobserved outcomes as missing, so the design
    survives a round trip.
    """
    i1, i2, i3 = cell_covariates(design)
    cols: dict[str, np.ndarray] = {}
    roles: dict[str, str] = {}
    for i, idx in enumerate((i1, i2, i3)):
        comp = design.components[i]
        if comp.keys is not None:
            name = f"key{i + 1}"
            cols[name] = np.asarray(comp.keys, dtype=object)[idx]
            roles[name] = KEY_ROLES[i]
        for j, c in enumerate(comp.columns):
            # default column names repeat across components; keep them apart
            name = c if c not in cols else f"{c}_component{i + 1}"
            cols[name] = comp.X[idx, j]
            roles[name] = COMPONENT_ROLES[i]
    kernels = {
        f"component{i + 1}": {
            "kind": c.kernel.kind,
            "active_columns": None if c.kernel.active_columns is None else list(c.kernel.active_columns),
        }
        for i, c in enumerate(design.components)
    }
    if not per_output:
        for k, name in enumerate(design.output_names):
            cols[name] = np.where(y.observed[k], y.values[k], np.nan)
            roles[name] = f"outcome:{design.output_families[k]}"
        return pd.DataFrame(cols), {"columns": roles, "kernels": kernels}
    frames = []
    for k, name in enumerate(design.output_names):
        part = {c: v for c, v in cols.items()}
        part["output"] = np.full(design.n_cells, name, dtype=object)
        part["value"] = np.where(y.observed[k], y.values[k], np.nan)
        frames.append(pd.DataFrame(part))
    roles["output"] = "output"
    roles["value"] = "value"
    schema = {
        "columns": roles,
        "outputs": dict(zip(design.output_names, design.output_families)),
        "kernels": kernels,
    }
    return pd.concat(frames, ignore_index=True), schema


def write_long_csv(design: GridDesign, y: OutcomeMatrix, csv_path, schema_path=None, per_output: bool = False):
    table, schema = to_long_table(design, y, per_output=per_output)
    table.to_csv(csv_path, index=False, na_rep="NA", lineterminator="\n")
    if schema_path is not None:
        Path(schema_path).write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return table, schema


# --------------------------------------------------------------------------
# Preprocessing


def one_hot(column: Sequence, levels: Sequence) -> np.ndarray:
    """Indicator matrix with one column per level, in the given level order."""
    levels = list(levels)
    index = {lv: j for j, lv in enumerate(levels)}
    out = np.zeros((len(column), len(levels)))
    for r, v in enumerate(column):
        if v not in index:
            raise ValueError(f"value {v!r} is not one of the levels {levels}")
        out[r, index[v]] = 1.0
    return out


def is_binary_column(x: np.ndarray) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all((x == 0) | (x == 1)))


@dataclass
class StandardizationRecord:
    """Per-column ``(mean, sd)`` or ``None`` for untouched columns."""

    components: list[list[Optional[tuple[float, float]]]]
    outputs: list[Optional[tuple[float, float]]]

    def invert(self, design: GridDesign, y: OutcomeMatrix) -> tuple[GridDesign, OutcomeMatrix]:
        comps = []
        for comp, rec in zip(design.components, self.components):
            X = comp.X.copy()
            for j, r in enumerate(rec):
                if r is not None:
                    X[:, j] = X[:, j] * r[1] + r[0]
            comps.append(replace(comp, X=X))
        values = y.values.copy()
        for k, r in enumerate(self.outputs):
            if r is not None:
                values[k] = values[k] * r[1] + r[0]
        return replace(design, components=comps), OutcomeMatrix(values, y.observed.copy())

    def output_scale(self, k: int) -> float:
        r = self.outputs[k]
        return 1.0 if r is None else r[1]


def _mean_sd(x: np.ndarray, what: str) -> tuple[float, float]:
    mean = float(np.mean(x))
    sd = float(np.std(x))
    if not sd > 0:
        raise ValueError(f"{what} has zero variance; drop it before fitting")
    return mean, sd


def standardize(design: GridDesign, y: OutcomeMatrix) -> tuple[GridDesign, OutcomeMatrix, StandardizationRecord]:
    """Center and scale continuous covariates and Gaussian outputs.

    Uses the population (1/n) standard deviation over the unique component
    rows and over observed outcome entries. Binary covariates, components
    with a single row and Bernoulli outputs are left alone.
    """
    comps, comp_rec = [], []
    for i, comp in enumerate(design.components):
        X = comp.X.copy()
        rec = []
        for j in range(X.shape[1]):
            if X.shape[0] < 2 or is_binary_column(X[:, j]):
                # a single grid point has nothing to scale
                rec.append(None)
                continue
            m, s = _mean_sd(X[:, j], f"component {i + 1} column {comp.columns[j]!r}")
            X[:, j] = (X[:, j] - m) / s
            rec.append((m, s))
        comps.append(replace(comp, X=X))
        comp_rec.append(rec)
    values = y.values.copy()
    out_rec: list[Optional[tuple[float, float]]] = []
    for k, fam in enumerate(design.output_families):
        obs = y.observed[k]
        if fam != GAUSSIAN or not obs.any():
            out_rec.append(None)
            continue
        m, s = _mean_sd(values[k, obs], f"output {design.output_names[k]!r}")
        values[k] = (values[k] - m) / s
        out_rec.append((m, s))
    record = StandardizationRecord(comp_rec, out_rec)
    return replace(design, components=comps), OutcomeMatrix(values, y.observed.copy()), record
