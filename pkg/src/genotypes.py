"""Genotype ingestion: stratified locus sampling and pairwise-deletion mismatch counts."""

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

import config
from errors import InvalidInputError, ParseError

logger = logging.getLogger(__name__)

META_COLUMNS = ("locus", "chromosome", "position")


@dataclass
class GenotypeTable:
    """Dosage matrix (loci x individuals) with NaN for missing calls."""

    loci: pd.DataFrame
    dosages: np.ndarray
    individuals: List[str]

    def __post_init__(self):
        self.dosages = np.asarray(self.dosages, dtype=float)
        if self.dosages.shape != (len(self.loci), len(self.individuals)):
            raise InvalidInputError(
                f"dosage matrix {self.dosages.shape} does not match "
                f"{len(self.loci)} loci x {len(self.individuals)} individuals"
            )
        called = self.dosages[~np.isnan(self.dosages)]
        if not np.all(np.isin(called, (0.0, 1.0, 2.0))):
            raise InvalidInputError("dosages must be 0, 1, 2 or missing")
        chrom = self.loci["chromosome"].astype(str).str.strip()
        if (chrom == "").any() or self.loci["chromosome"].isna().any():
            raise InvalidInputError("every locus needs a chromosome label")

    @property
    def n_loci(self) -> int:
        return self.dosages.shape[0]


@dataclass
class Dissimilarity:
    """Pairwise mismatch (d) and comparable (M) counts; ``flagged`` marks M = 0 pairs."""

    individuals: List[str]
    d: np.ndarray
    M: np.ndarray
    loci: pd.DataFrame

    @property
    def flagged(self) -> List[Tuple[str, str]]:
        a, b = np.triu_indices(len(self.individuals), k=1)
        bad = self.M[a, b] == 0
        return [(self.individuals[i], self.individuals[j]) for i, j in zip(a[bad], b[bad])]


def load_genotypes(path) -> GenotypeTable:
    """
    Reads genotypes.csv: locus, chromosome, position, then one column per individual.

    Empty cells are missing calls.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={"locus": str, "chromosome": str})
    except (OSError, pd.errors.ParserError) as e:
        raise ParseError(path, str(e)) from e
    missing = [c for c in META_COLUMNS if c not in df.columns]
    if missing:
        raise ParseError(path, f"missing column(s) {missing}")
    individuals = [c for c in df.columns if c not in META_COLUMNS]
    if len(individuals) < 2:
        raise ParseError(path, "need at least two individuals")
    values = df[individuals].apply(pd.to_numeric, errors="coerce")
    raw_missing = df[individuals].isna()
    bad = values.isna() & ~raw_missing
    if bad.any().any():
        row = int(np.flatnonzero(bad.any(axis=1).to_numpy())[0]) + 2
        raise ParseError(path, "non-numeric dosage", row=row)
    try:
        return GenotypeTable(loci=df[list(META_COLUMNS)].reset_index(drop=True),
                             dosages=values.to_numpy(dtype=float), individuals=individuals)
    except InvalidInputError as e:
        raise ParseError(path, str(e)) from e


def stratified_loci(table: GenotypeTable, per_chrom: int = config.LOCI_PER_CHROMOSOME,
                    seed: int = 0) -> np.ndarray:
    """
    Row indices of a seeded per-chromosome random sample of loci.

    Chromosomes are visited in sorted label order; one with fewer than
    ``per_chrom`` loci contributes all of them with a warning.

    Returns:
        Sorted row indices
    """
    if per_chrom < 1:
        raise InvalidInputError("per_chrom must be >= 1")
    rng = np.random.default_rng(seed)
    chrom = table.loci["chromosome"].astype(str).to_numpy()
    keep = []
    for label in sorted(set(chrom)):
        rows = np.flatnonzero(chrom == label)
        if rows.size < per_chrom:
            warnings.warn(f"chromosome {label}: {rows.size} loci < {per_chrom}; taking all")
            logger.warning("chromosome %s short: %d loci", label, rows.size)
            keep.append(rows)
        else:
            keep.append(rng.choice(rows, size=per_chrom, replace=False))
    return np.sort(np.concatenate(keep))


def pairwise_mismatch(dosages: np.ndarray, allele_distance: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pairwise-deletion counts over loci called in both individuals.

    d counts loci with unequal dosage; with ``allele_distance`` it is half the
    summed absolute dosage difference instead.

    Args:
        dosages: L x n matrix, NaN for missing

    Returns:
        Tuple of (d, M), each n x n, symmetric with zero diagonal
    """
    G = np.asarray(dosages, dtype=float)
    called = (~np.isnan(G)).astype(float)
    M = called.T @ called
    d = np.zeros_like(M)
    for u in (0.0, 1.0, 2.0):
        I_u = (G == u).astype(float)
        for v in (0.0, 1.0, 2.0):
            if u == v:
                continue
            weight = abs(u - v) / 2.0 if allele_distance else 1.0
            d += weight * (I_u.T @ (G == v).astype(float))
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(M, 0.0)
    return d, M


def ingest_genotypes(table: GenotypeTable, per_chrom: int = config.LOCI_PER_CHROMOSOME,
                     seed: int = 0, allele_distance: bool = False) -> Dissimilarity:
    """
    Subsamples loci by chromosome and computes mismatch and comparable counts.

    Pairs without a single jointly called locus are flagged and later
    treated as missing responses.

    Args:
        table: Genotype table
        per_chrom: Loci kept per chromosome
        seed: Sampling seed
        allele_distance: Use the half allele-dosage distance

    Returns:
        Dissimilarity
    """
    rows = stratified_loci(table, per_chrom, seed)
    d, M = pairwise_mismatch(table.dosages[rows], allele_distance)
    result = Dissimilarity(individuals=list(table.individuals), d=d, M=M,
                           loci=table.loci.iloc[rows].reset_index(drop=True))
    flagged = result.flagged
    if flagged:
        warnings.warn(f"{len(flagged)} pair(s) share no called locus; marked missing")
        logger.warning("%d pair(s) without comparable loci", len(flagged))
    logger.info("ingested %d loci for %d individuals", rows.size, len(table.individuals))
    return result


def write_dissimilarity(result: Dissimilarity, out_dir) -> List[Path]:
    """Writes gdm.csv (mismatch counts) and comparable.csv as id-indexed square matrices."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, matrix in ((config.GDM_FILE, result.d), (config.COMPARABLE_FILE, result.M)):
        df = pd.DataFrame(matrix, index=result.individuals, columns=result.individuals)
        df.index.name = "id"
        path = out / name
        df.to_csv(path, float_format=config.FLOAT_FORMAT)
        paths.append(path)
    return paths
