"""File formats: episode/panel/draws CSVs, truth and manifest JSON, reports.

All floats are written with ``repr`` (shortest round-trip form) so repeated
runs with the same seed produce byte-identical files; manifests additionally
carry a timestamp and runtime, which are the only fields expected to differ
between identical runs.
"""

import csv
import hashlib
import json
from datetime import date
from pathlib import Path

import numpy as np

from .expected import (
    FEMALE,
    GP,
    HOSPITAL,
    MALE,
    NEGATIVE,
    NOT_TESTED,
    POSITIVE,
    EpisodeRecord,
    MalformedRecord,
    StandardizedProbs,
)
from .inference import CovarianceReport, RelativeRiskSummary
from .model import MONTHS, CountPanel, ModelState
from .sampler import PosteriorSamples, param_names, state_vector

__all__ = [
    "SchemaError",
    "read_episode_csv",
    "write_episode_csv",
    "read_panel_csv",
    "write_panel_csv",
    "write_expected_csv",
    "write_draws_csv",
    "read_draws_csv",
    "write_truth_json",
    "read_truth_json",
    "write_manifest",
    "write_covariance_report_json",
    "write_covariance_report_csv",
    "write_rr_summary_csv",
    "write_rolling_report_csv",
    "sha256_file",
]

_SEX_TO_CODE = {FEMALE: "F", MALE: "M"}
_CODE_TO_SEX = {"F": FEMALE, "M": MALE}
_SEV_TO_CODE = {GP: "GP", HOSPITAL: "HOSP"}
_CODE_TO_SEV = {"GP": GP, "HOSP": HOSPITAL}
_RESULT_TO_CODE = {POSITIVE: "pos", NEGATIVE: "neg", NOT_TESTED: "nt"}
_CODE_TO_RESULT = {"pos": POSITIVE, "neg": NEGATIVE, "nt": NOT_TESTED}

_EPISODE_FIXED_COLUMNS = ["patient_id", "date", "age", "sex", "severity"]
_PANEL_COLUMNS = ["month", "year", "virus", "observed", "expected", "n_tested"]


class SchemaError(ValueError):
    """A structured input file does not match its documented schema."""


def _fmt(x) -> str:
    return repr(float(x))


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# -- episode CSV ---------------------------------------------------------------


def write_episode_csv(path, records: list[EpisodeRecord], virus_names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_EPISODE_FIXED_COLUMNS + list(virus_names))
        for rec in records:
            writer.writerow(
                [
                    rec.patient_id,
                    rec.date.isoformat(),
                    rec.age,
                    _SEX_TO_CODE[rec.sex],
                    _SEV_TO_CODE[rec.severity],
                ]
                + [_RESULT_TO_CODE[rec.results.get(v, NOT_TESTED)] for v in virus_names]
            )


def read_episode_csv(path) -> tuple[list[EpisodeRecord], list[str]]:
    """Parse an episode CSV; raises ``MalformedRecord`` on bad rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRecord(f"{path}: empty file") from None
        if header[: len(_EPISODE_FIXED_COLUMNS)] != _EPISODE_FIXED_COLUMNS:
            raise MalformedRecord(
                f"{path}: header must start with {','.join(_EPISODE_FIXED_COLUMNS)}"
            )
        virus_names = header[len(_EPISODE_FIXED_COLUMNS) :]
        if not virus_names:
            raise MalformedRecord(f"{path}: no virus result columns")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MalformedRecord(f"{path}:{line_no}: expected {len(header)} fields")
            pid, date_str, age_str, sex_code, sev_code = row[:5]
            try:
                when = date.fromisoformat(date_str)
            except ValueError:
                raise MalformedRecord(f"{path}:{line_no}: unparseable date {date_str!r}") from None
            try:
                age = int(age_str)
            except ValueError:
                raise MalformedRecord(f"{path}:{line_no}: unparseable age {age_str!r}") from None
            if sex_code not in _CODE_TO_SEX:
                raise MalformedRecord(f"{path}:{line_no}: unknown sex code {sex_code!r}")
            if sev_code not in _CODE_TO_SEV:
                raise MalformedRecord(f"{path}:{line_no}: unknown severity code {sev_code!r}")
            results = {}
            for virus, code in zip(virus_names, row[5:]):
                if code not in _CODE_TO_RESULT:
                    raise MalformedRecord(f"{path}:{line_no}: unknown result code {code!r}")
                results[virus] = _CODE_TO_RESULT[code]
            try:
                records.append(
                    EpisodeRecord(
                        patient_id=pid,
                        date=when,
                        age=age,
                        sex=_CODE_TO_SEX[sex_code],
                        severity=_CODE_TO_SEV[sev_code],
                        results=results,
                    )
                )
            except MalformedRecord as exc:
                raise MalformedRecord(f"{path}:{line_no}: {exc}") from None
    return records, virus_names


# -- panel CSV -------------------------------------------------------------------


def write_panel_csv(path, panel: CountPanel) -> None:
    n_tested = panel.n_tested
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PANEL_COLUMNS)
        for t in range(panel.years):
            for m in range(MONTHS):
                for j, virus in enumerate(panel.virus_names):
                    writer.writerow(
                        [
                            m + 1,
                            t + 1,
                            virus,
                            int(panel.observed[m, t, j]),
                            _fmt(panel.expected[m, t, j]),
                            int(n_tested[m, t, j]) if n_tested is not None else 0,
                        ]
                    )


def read_panel_csv(path) -> CountPanel:
    """Parse a panel CSV into a complete (12, T, V) grid; raises ``SchemaError``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != _PANEL_COLUMNS:
            raise SchemaError(f"{path}: header must be {','.join(_PANEL_COLUMNS)}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(_PANEL_COLUMNS):
                raise SchemaError(f"{path}:{line_no}: expected {len(_PANEL_COLUMNS)} fields")
            try:
                rows.append(
                    (int(row[0]), int(row[1]), row[2], int(row[3]), float(row[4]), int(row[5]))
                )
            except ValueError as exc:
                raise SchemaError(f"{path}:{line_no}: {exc}") from None
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    virus_names = []
    for r in rows:
        if r[2] not in virus_names:
            virus_names.append(r[2])
    years = sorted({r[1] for r in rows})
    if years != list(range(1, len(years) + 1)):
        raise SchemaError(f"{path}: year indices must be 1..T, got {years}")
    t_count, v_count = len(years), len(virus_names)
    observed = np.full((MONTHS, t_count, v_count), -1, dtype=int)
    expected = np.zeros((MONTHS, t_count, v_count))
    n_tested = np.zeros((MONTHS, t_count, v_count), dtype=int)
    vidx = {name: j for j, name in enumerate(virus_names)}
    for m, t, virus, obs, exp_val, tested in rows:
        if not 1 <= m <= MONTHS:
            raise SchemaError(f"{path}: month {m} out of range")
        observed[m - 1, t - 1, vidx[virus]] = obs
        expected[m - 1, t - 1, vidx[virus]] = exp_val
        n_tested[m - 1, t - 1, vidx[virus]] = tested
    if np.any(observed < 0):
        raise SchemaError(f"{path}: incomplete grid (missing month/year/virus rows)")
    try:
        return CountPanel(
            observed=observed, expected=expected, virus_names=virus_names, n_tested=n_tested
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


# -- expected-count CSV ------------------------------------------------------------


def write_expected_csv(
    path, probs: StandardizedProbs, n_tested: np.ndarray, expected: np.ndarray
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", "year", "virus", "n_tested", "p_standardized", "expected"])
        for t in range(n_tested.shape[1]):
            for m in range(MONTHS):
                for j, virus in enumerate(probs.virus_names):
                    writer.writerow(
                        [
                            m + 1,
                            t + 1,
                            virus,
                            int(n_tested[m, t, j]),
                            _fmt(probs.p_s[m, j]),
                            _fmt(expected[m, t, j]),
                        ]
                    )


# -- posterior draws CSV -------------------------------------------------------------


def write_draws_csv(path, samples: PosteriorSamples) -> None:
    if not samples.draws:
        raise ValueError("no draws to write")
    first = samples.draws[0]
    names = param_names(first.viruses, first.years, include_rho=samples.sampled_rho)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration"] + names)
        for k, state in enumerate(samples.draws):
            vec = state_vector(state, include_rho=samples.sampled_rho)
            writer.writerow(
                [int(samples.chain[k]), int(samples.iteration[k])] + [_fmt(x) for x in vec]
            )


def _parse_indexed(name: str, prefix: str) -> list[int] | None:
    if not name.startswith(prefix + "[") or not name.endswith("]"):
        return None
    try:
        return [int(p) for p in name[len(prefix) + 1 : -1].split(",")]
    except ValueError:
        return None


def read_draws_csv(path, virus_names: list[str] | None = None) -> PosteriorSamples:
    """Rebuild posterior draws from a draws CSV (diagnostics are not stored there)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header[:2] != ["chain", "iteration"]:
            raise SchemaError(f"{path}: header must start with chain,iteration")
        cols = header[2:]
        v = sum(1 for c in cols if _parse_indexed(c, "alpha"))
        phi_idx = [_parse_indexed(c, "phi") for c in cols]
        t_count = max((ix[1] for ix in phi_idx if ix), default=0)
        sampled_rho = "rho" in cols
        expected_cols = param_names(v, t_count, include_rho=sampled_rho)
        if v == 0 or t_count == 0 or cols != expected_cols:
            raise SchemaError(f"{path}: parameter columns do not match the documented layout")

        rows, chains, iters = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{line_no}: expected {len(header)} fields")
            chains.append(int(row[0]))
            iters.append(int(row[1]))
            rows.append(np.array([float(x) for x in row[2:]]))
    if not rows:
        raise SchemaError(f"{path}: no draws")

    draws = []
    for vec in rows:
        pos = 0
        alpha = vec[pos : pos + v]; pos += v
        s = vec[pos : pos + v]; pos += v
        lam = float(vec[pos]); pos += 1
        rho = 0.5
        if sampled_rho:
            rho = float(vec[pos]); pos += 1
        sigma = vec[pos : pos + v]; pos += v
        gamma = np.eye(v)
        for i in range(v):
            for j in range(i):
                gamma[i, j] = vec[pos]; pos += 1
        phi = vec[pos:].reshape(v, t_count, MONTHS).transpose(2, 1, 0)
        draws.append(
            ModelState(alpha=alpha, phi=phi, s=s, lam=lam, rho=rho, sigma=sigma, gamma=gamma)
        )
    return PosteriorSamples(
        draws=draws,
        chain=np.array(chains),
        iteration=np.array(iters),
        accept_rates={},
        rhat=None,
        virus_names=list(virus_names) if virus_names else [f"virus{i+1}" for i in range(v)],
        sampled_rho=sampled_rho,
    )


# -- truth JSON -----------------------------------------------------------------


def write_truth_json(path, sim_output) -> None:
    payload = {
        "seed": sim_output.seed,
        "virus_names": list(sim_output.scenario.virus_names),
        "n_years": sim_output.scenario.n_years,
        "samples_per_month": sim_output.scenario.samples_per_month,
        "observed_mode": sim_output.scenario.observed_mode,
        "lambda_true": sim_output.scenario.lambda_true,
        "rho_true": sim_output.scenario.rho_true,
        "s_true": np.asarray(sim_output.scenario.s_true).tolist(),
        "alpha_true": np.asarray(sim_output.scenario.alpha_true).tolist(),
        "true_cov": np.asarray(sim_output.scenario.true_cov).tolist(),
        "true_rr": np.asarray(sim_output.true_rr).tolist(),
        "true_phi": np.asarray(sim_output.true_phi).tolist(),
        "proximity": {
            "kind": sim_output.scenario.proximity.kind,
            "neighbor_order": sim_output.scenario.proximity.neighbor_order,
            "circular": sim_output.scenario.proximity.circular,
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_truth_json(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("true_cov", "true_rr", "true_phi", "s_true", "alpha_true"):
        payload[key] = np.asarray(payload[key], dtype=float)
    return payload


# -- manifests and reports -----------------------------------------------------------


def write_manifest(path, payload: dict) -> None:
    def default(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, Path):
            return str(obj)
        raise TypeError(f"cannot serialise {type(obj)!r}")

    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=default)
        fh.write("\n")


def _pair_row(pair) -> list:
    return [
        pair.virus_a,
        pair.virus_b,
        _fmt(pair.posterior_mean),
        _fmt(pair.ci_low),
        _fmt(pair.ci_high),
        _fmt(pair.p_raw),
        _fmt(pair.p_adjusted),
        str(pair.significant).lower(),
    ]


def write_covariance_report_json(path, report: CovarianceReport) -> None:
    payload = {
        "level": report.level,
        "fdr_level": report.fdr_level,
        "pairs": [
            {
                "virus_a": p.virus_a,
                "virus_b": p.virus_b,
                "posterior_mean": p.posterior_mean,
                "ci_low": p.ci_low,
                "ci_high": p.ci_high,
                "p_raw": p.p_raw,
                "p_adjusted": p.p_adjusted,
                "significant": p.significant,
            }
            for p in report.pairs
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_covariance_report_csv(path, report: CovarianceReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["virus_a", "virus_b", "posterior_mean", "ci_low", "ci_high", "p_raw", "p_adjusted", "significant"]
        )
        for pair in report.pairs:
            writer.writerow(_pair_row(pair))


def write_rr_summary_csv(path, summary: RelativeRiskSummary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", "year", "virus", "rr_mean", "rr_low", "rr_high"])
        _, t_count, _ = summary.mean.shape
        for t in range(t_count):
            for m in range(MONTHS):
                for j, virus in enumerate(summary.virus_names):
                    writer.writerow(
                        [
                            m + 1,
                            t + 1,
                            virus,
                            _fmt(summary.mean[m, t, j]),
                            _fmt(summary.ci_low[m, t, j]),
                            _fmt(summary.ci_high[m, t, j]),
                        ]
                    )


def write_rolling_report_csv(path, reports: dict[int, CovarianceReport]) -> None:
    """One row per (year cut, virus pair) with that cut's FDR-adjusted flags."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "year_cut",
                "virus_a",
                "virus_b",
                "posterior_mean",
                "ci_low",
                "ci_high",
                "p_raw",
                "p_adjusted",
                "significant",
            ]
        )
        for cut in sorted(reports):
            for pair in reports[cut].pairs:
                writer.writerow([cut] + _pair_row(pair))
