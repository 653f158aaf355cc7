"""Model terms, orthogonal quadratic bases and design matrices.

Term names follow the usual formula conventions so fitted summaries read
like ``g700.45N.10W.lag1``, ``poly(g300.35N.5E,2)1`` or ``g700.:LON``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

_POLY_RE = re.compile(r"^poly\((?P<src>[^,]+),2\)$")


@dataclass(frozen=True)
class Term:
    """A model term: a covariate, its orthogonal quadratic pair, or either one
    multiplied by a station attribute."""

    source: str
    poly: bool = False
    attr: str | None = None

    @property
    def kind(self) -> str:
        if self.attr is not None:
            return "interaction"
        if self.poly:
            return "poly"
        if self.source.endswith(".lag1"):
            return "lag1"
        if not self.source.startswith("g"):
            return "attribute"
        return "base"

    @property
    def main(self) -> str:
        return f"poly({self.source},2)" if self.poly else self.source

    @property
    def name(self) -> str:
        return f"{self.main}:{self.attr}" if self.attr else self.main

    @property
    def width(self) -> int:
        return 2 if self.poly else 1

    @property
    def column_names(self) -> tuple[str, ...]:
        cols = (f"{self.main}1", f"{self.main}2") if self.poly else (self.source,)
        if self.attr:
            cols = tuple(f"{c}:{self.attr}" for c in cols)
        return cols

    @property
    def conflict_key(self) -> tuple[str, str | None]:
        """Terms sharing this key span overlapping columns and never coexist."""
        return (self.source, self.attr)

    def main_effects(self) -> tuple["Term", ...]:
        if self.attr is None:
            return ()
        return (Term(self.source, self.poly), Term(self.attr))

    def interact(self, attr: str) -> "Term":
        return Term(self.source, self.poly, attr)

    @classmethod
    def parse(cls, name: str) -> "Term":
        main, _, attr = name.partition(":")
        m = _POLY_RE.match(main)
        if m:
            return cls(m.group("src"), True, attr or None)
        return cls(main, False, attr or None)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class PolyBasis:
    """Orthonormal {linear, quadratic} basis fitted on training values.

    New values are mapped with the frozen training constants.
    """

    source: str
    center: float
    norm1: float
    mean_sq: float
    proj: float
    norm2: float

    def transform(self, x) -> np.ndarray:
        z = np.asarray(x, dtype=float) - self.center
        p1 = z / self.norm1
        p2 = (z * z - self.mean_sq - self.proj * p1) / self.norm2
        return np.column_stack([p1, p2])

    def to_dict(self) -> dict:
        return {"source": self.source, "center": self.center, "norm1": self.norm1,
                "mean_sq": self.mean_sq, "proj": self.proj, "norm2": self.norm2}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PolyBasis":
        return cls(**d)


def orthogonal_poly(x_train, degree: int = 2, source: str = "") -> PolyBasis:
    """Gram-Schmidt of (x - mean, (x - mean)^2) against the constant, unit norms."""
    if degree != 2:
        raise ValueError("only degree 2 is supported")
    x = np.asarray(x_train, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("non-finite values in polynomial source")
    if len(np.unique(x)) < 3:
        raise ValueError("need at least 3 distinct values for a quadratic basis")
    center = float(x.mean())
    z = x - center
    norm1 = float(np.sqrt(z @ z))
    if not 0.0 < norm1 < np.inf:
        raise ValueError("polynomial source is numerically constant")
    p1 = z / norm1
    zz = z * z
    mean_sq = float(zz.mean())
    proj = float((zz - mean_sq) @ p1)
    q = zz - mean_sq - proj * p1
    norm2 = float(np.sqrt(q @ q))
    if not norm2 > 1e-10 * float(np.sqrt(zz @ zz)):
        raise ValueError("values too close to two points for a quadratic basis")
    return PolyBasis(source, center, norm1, mean_sq, proj, norm2)


def term_columns(term: Term, frame: Mapping[str, np.ndarray],
                 bases: Mapping[str, PolyBasis]) -> np.ndarray:
    """Numeric columns of one term, shape (n, width)."""
    if term.source not in frame:
        raise KeyError(f"missing covariate {term.source!r}")
    x = np.asarray(frame[term.source], dtype=float)
    cols = bases[term.source].transform(x) if term.poly else x[:, None]
    if term.attr is not None:
        if term.attr not in frame:
            raise KeyError(f"missing covariate {term.attr!r}")
        cols = cols * np.asarray(frame[term.attr], dtype=float)[:, None]
    return cols


@dataclass
class DesignMatrix:
    """Intercept (column 0) followed by the columns of each term, in order."""

    X: np.ndarray
    y: np.ndarray | None
    terms: tuple[Term, ...]
    bases: dict[str, PolyBasis]

    @property
    def names(self) -> tuple[str, ...]:
        return ("(Intercept)",) + tuple(c for t in self.terms for c in t.column_names)

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    def slices(self) -> dict[Term, np.ndarray]:
        out, pos = {}, 1
        for t in self.terms:
            out[t] = np.arange(pos, pos + t.width)
            pos += t.width
        return out

    def columns_of(self, terms: Sequence[Term]) -> np.ndarray:
        sl = self.slices()
        idx = [0] + [int(i) for t in self.terms if t in set(terms) for i in sl[t]]
        return np.asarray(idx)

    def subset(self, terms: Sequence[Term]) -> "DesignMatrix":
        keep = [t for t in self.terms if t in set(terms)]
        missing = set(terms) - set(keep)
        if missing:
            raise KeyError(f"terms not in design: {sorted(t.name for t in missing)}")
        cols = self.columns_of(keep)
        used = {t.source for t in keep if t.poly}
        return DesignMatrix(self.X[:, cols], self.y, tuple(keep),
                            {k: v for k, v in self.bases.items() if k in used})


def build_design(frame: Mapping[str, np.ndarray], terms: Sequence[Term], y=None,
                 bases: Mapping[str, PolyBasis] | None = None) -> DesignMatrix:
    """Evaluate terms on a column frame.

    Quadratic bases are fitted on ``frame`` unless ``bases`` is given, in
    which case the frozen constants are reused (prediction).
    """
    terms = tuple(dict.fromkeys(terms))
    n = len(next(iter(frame.values()))) if frame else (0 if y is None else len(y))
    fitted = dict(bases or {})
    for t in terms:
        if t.poly and t.source not in fitted:
            if bases is not None:
                raise KeyError(f"no polynomial basis for {t.source!r}")
            fitted[t.source] = orthogonal_poly(frame[t.source], source=t.source)
    blocks = [np.ones((n, 1))] + [term_columns(t, frame, fitted) for t in terms]
    X = np.hstack(blocks)
    if not np.isfinite(X).all():
        raise ValueError("design matrix has non-finite entries")
    used = {t.source for t in terms if t.poly}
    return DesignMatrix(X=X, y=None if y is None else np.asarray(y, dtype=float), terms=terms,
                        bases={k: v for k, v in fitted.items() if k in used})
