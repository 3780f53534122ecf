"""Descriptive statistics and rank/contingency tests for listener score tables.

Score tables hold, for every respondent and melody, a 1-5 grade and the
background application the respondent picked for that melody.  Melodies
map to generation methods, three melodies per method.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from quartet import kernels
from quartet.special import chi2_sf, norm_cdf, norm_ppf, norm_sf

APPLICATIONS = ("movie", "game", "creativity", "internet-search")
EXACT_MAX_N = 25

# Reference per-melody (mean, variance, standard deviation) for the 12-melody study.
REFERENCE_TABLE = {
    1: (2.65, 2.00, 1.4), 2: (3.44, 1.33, 1.14), 3: (3.31, 1.35, 1.15),
    4: (3.09, 1.65, 1.28), 5: (3.15, 1.49, 1.21), 6: (2.06, 0.84, 0.91),
    7: (3.38, 1.20, 1.09), 8: (2.57, 1.44, 1.19), 9: (3.43, 1.25, 1.11),
    10: (2.35, 1.35, 1.15), 11: (3.10, 1.66, 1.28), 12: (3.62, 1.17, 1.07),
}


class DegenerateError(ValueError):
    pass


@dataclass
class TestResult:
    statistic: float
    p_value: float
    df: float | None = None
    effect_size: float | None = None
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not math.isfinite(self.statistic):
            raise ValueError("statistic must be finite")
        self.p_value = min(1.0, max(0.0, float(self.p_value)))

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# tables


@dataclass
class ScoreTable:
    respondents: list[str]
    melodies: list[str]
    grades: np.ndarray  # [R, M] ints 1..5
    picks: np.ndarray  # [R, M] index into APPLICATIONS
    methods: dict[str, int]  # melody id -> method number

    def __post_init__(self):
        self.grades = np.asarray(self.grades, dtype=np.int64)
        self.picks = np.asarray(self.picks, dtype=np.int64)
        shape = (len(self.respondents), len(self.melodies))
        if self.grades.shape != shape or self.picks.shape != shape:
            raise ValueError(f"grade/pick matrices must be {shape}")
        if self.grades.size == 0:
            raise ValueError("score table is empty")
        if self.grades.min() < 1 or self.grades.max() > 5:
            raise ValueError("grades must be integers in [1, 5]")
        if self.picks.min() < 0 or self.picks.max() >= len(APPLICATIONS):
            raise ValueError("unknown application pick")
        per = {}
        for mel in self.melodies:
            if mel not in self.methods:
                raise ValueError(f"melody {mel} has no method")
            per.setdefault(self.methods[mel], []).append(mel)
        if any(len(v) != 3 for v in per.values()):
            raise ValueError("every method must own exactly 3 melodies")

    @property
    def method_ids(self) -> list[int]:
        return sorted(set(self.methods[m] for m in self.melodies))

    def method_columns(self, method: int) -> list[int]:
        return [j for j, m in enumerate(self.melodies) if self.methods[m] == method]


def load_scores(scores_csv, mapping_csv=None) -> ScoreTable:
    """Long-format CSV (respondent_id, melody_id, grade, application) into a table.

    Without a mapping file, melodies 1-3 belong to method 1, 4-6 to method 2, and so on.
    """
    cells: dict[tuple[str, str], tuple[int, int]] = {}
    resp: list[str] = []
    mels: list[str] = []
    with Path(scores_csv).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            r, m = row["respondent_id"].strip(), row["melody_id"].strip()
            app = row["application"].strip()
            if app not in APPLICATIONS:
                raise ValueError(f"unknown application {app!r}")
            if r not in resp:
                resp.append(r)
            if m not in mels:
                mels.append(m)
            cells[(r, m)] = (int(row["grade"]), APPLICATIONS.index(app))
    mels.sort(key=lambda s: (int(s) if s.isdigit() else math.inf, s))
    grades = np.zeros((len(resp), len(mels)), dtype=np.int64)
    picks = np.zeros_like(grades)
    for i, r in enumerate(resp):
        for j, m in enumerate(mels):
            if (r, m) not in cells:
                raise ValueError(f"missing score for respondent {r}, melody {m}")
            grades[i, j], picks[i, j] = cells[(r, m)]
    if mapping_csv is not None:
        with Path(mapping_csv).open(newline="", encoding="utf-8") as fh:
            methods = {row["melody_id"].strip(): int(row["method"]) for row in csv.DictReader(fh)}
    else:
        methods = {m: j // 3 + 1 for j, m in enumerate(mels)}
    return ScoreTable(resp, mels, grades, picks, methods)


def write_scores(table: ScoreTable, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["respondent_id", "melody_id", "grade", "application"])
        for i, r in enumerate(table.respondents):
            for j, m in enumerate(table.melodies):
                w.writerow([r, m, int(table.grades[i, j]), APPLICATIONS[table.picks[i, j]]])


def synthetic_table(n_respondents: int = 108, seed: int = 0, effect: Sequence[float] = (0, 0, 0, 0)) -> ScoreTable:
    """Random grades, optionally shifted per method by ``effect`` before clipping to 1..5."""
    rng = np.random.default_rng(seed)
    base = rng.integers(1, 6, size=(n_respondents, 12))
    shift = np.repeat(np.asarray(effect, dtype=float), 3)
    grades = np.clip(np.rint(base + shift), 1, 5).astype(np.int64)
    picks = rng.integers(0, len(APPLICATIONS), size=(n_respondents, 12))
    melodies = [str(j + 1) for j in range(12)]
    return ScoreTable([f"r{i + 1}" for i in range(n_respondents)], melodies, grades, picks,
                      {m: j // 3 + 1 for j, m in enumerate(melodies)})


# --------------------------------------------------------------------------
# descriptive


def describe(table: ScoreTable) -> list[dict]:
    """Per-melody sample mean, variance (n-1) and standard deviation."""
    out = []
    g = table.grades.astype(np.float64)
    n = g.shape[0]
    for j, mel in enumerate(table.melodies):
        col = g[:, j]
        mean = col.mean()
        var = float(((col - mean) ** 2).sum() / (n - 1)) if n > 1 else 0.0
        out.append({"melody": mel, "method": table.methods[mel], "mean": float(mean),
                    "variance": var, "std": math.sqrt(var)})
    return out


def render_descriptives(rows: list[dict]) -> str:
    """Three melodies per method block, two decimals."""
    lines = []
    by_method: dict[int, list[dict]] = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
    for method in sorted(by_method):
        block = by_method[method]
        lines.append(f"Method {method}\t" + "\t".join(f"Melody {r['melody']}" for r in block))
        lines.append("Scores mean\t" + "\t".join(f"{r['mean']:.2f}" for r in block))
        lines.append("Variance\t" + "\t".join(f"{r['variance']:.2f}" for r in block))
        lines.append("Standard deviation\t" + "\t".join(f"{r['std']:.2f}" for r in block))
    return "\n".join(lines)


def audit_reference_table(table=REFERENCE_TABLE, tol: float = 0.02) -> dict[int, float]:
    """|std - sqrt(variance)| per reference row; raises if any exceeds ``tol``."""
    gaps = {k: abs(std - math.sqrt(var)) for k, (_, var, std) in table.items()}
    bad = {k: v for k, v in gaps.items() if v > tol}
    if bad:
        raise ValueError(f"rows inconsistent beyond {tol}: {bad}")
    return gaps


def per_respondent_method_means(table: ScoreTable) -> np.ndarray:
    cols = [table.method_columns(m) for m in table.method_ids]
    g = table.grades.astype(np.float64)
    return np.stack([g[:, c].mean(axis=1) for c in cols], axis=1)


# --------------------------------------------------------------------------
# tests


def chi_square_independence(counts) -> TestResult:
    O = np.asarray(counts, dtype=np.float64)
    if O.ndim != 2 or min(O.shape) < 2:
        raise ValueError("need an r x c table with r, c >= 2")
    rows = O.sum(axis=1)
    cols = O.sum(axis=0)
    if (rows == 0).any() or (cols == 0).any():
        raise DegenerateError("contingency table has an all-zero row or column")
    E = np.outer(rows, cols) / O.sum()
    stat = float(((O - E) ** 2 / E).sum())
    df = (O.shape[0] - 1) * (O.shape[1] - 1)
    n = O.sum()
    cramer = math.sqrt(stat / (n * (min(O.shape) - 1)))
    return TestResult(stat, chi2_sf(stat, df), df, cramer)


def cochran_q(binary) -> TestResult:
    """Cochran's Q over subjects x treatments; all-equal rows carry no information."""
    X = np.asarray(binary)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need subjects x k>=2 treatments")
    if not np.isin(X, (0, 1)).all():
        raise ValueError("entries must be 0 or 1")
    X = X.astype(np.float64)
    k = X.shape[1]
    C = X.sum(axis=0)
    R = X.sum(axis=1)
    N = X.sum()
    denom = k * N - (R ** 2).sum()
    if denom == 0:
        raise DegenerateError("every subject gave the same response to all treatments")
    q = (k - 1) * (k * (C ** 2).sum() - N ** 2) / denom
    return TestResult(float(q), chi2_sf(q, k - 1), k - 1)


def mcnemar(b: int, c: int) -> TestResult:
    if b + c == 0:
        raise DegenerateError("no discordant pairs")
    stat = (b - c) ** 2 / (b + c)
    return TestResult(float(stat), chi2_sf(stat, 1), 1)


def _swilk_coefficients(n: int) -> np.ndarray:
    m = np.array([norm_ppf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
    mm = float((m ** 2).sum())
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    u = 1.0 / math.sqrt(n)
    c = m / math.sqrt(mm)
    a = np.empty(n)
    an = c[-1] + 0.221157 * u - 0.147981 * u ** 2 - 2.071190 * u ** 3 + 4.434685 * u ** 4 - 2.706056 * u ** 5
    if n > 5:
        an1 = c[-2] + 0.042981 * u - 0.293762 * u ** 2 - 1.752461 * u ** 3 + 5.682633 * u ** 4 - 3.582633 * u ** 5
        phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
        a[:] = m / math.sqrt(phi)
        a[-1], a[-2], a[0], a[1] = an, an1, -an, -an1
    else:
        phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
        a[:] = m / math.sqrt(phi)
        a[-1], a[0] = an, -an
    return a


def shapiro_wilk(sample) -> TestResult:
    """W and p by Royston's (1995) polynomial approximations for coefficients and tail."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    if not 3 <= n <= 5000:
        raise ValueError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    if x[-1] - x[0] < 1e-12 * max(1.0, abs(x[0])):
        raise DegenerateError("sample has (near) zero range")
    a = _swilk_coefficients(n)
    ssq = float(((x - x.mean()) ** 2).sum())
    w = float(np.dot(a, x)) ** 2 / ssq
    w = min(w, 1.0)
    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return TestResult(w, max(p, 0.0))
    if n <= 11:
        gamma = 0.459 * n - 2.273
        mu = 0.544 - 0.39978 * n + 0.025054 * n ** 2 - 0.0006714 * n ** 3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n ** 2 - 0.0020322 * n ** 3)
        y = -math.log(gamma - math.log1p(-w)) if w < 1 else math.inf
    else:
        ln = math.log(n)
        mu = -1.5861 - 0.31082 * ln - 0.083751 * ln ** 2 + 0.0038915 * ln ** 3
        sigma = math.exp(-0.4803 - 0.082676 * ln + 0.0030302 * ln ** 2)
        y = math.log1p(-w) if w < 1 else -math.inf
    p = norm_sf((y - mu) / sigma)
    return TestResult(w, p)


def _row_ranks(M: np.ndarray) -> np.ndarray:
    return np.stack([kernels.midrank(row) for row in M])


def friedman(matrix) -> TestResult:
    """Friedman chi-square with midranks and tie correction; Kendall's W as effect size."""
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 2 or M.shape[1] < 2:
        raise ValueError("need n >= 2 subjects and k >= 2 treatments")
    n, k = M.shape
    ranks = _row_ranks(M)
    Rj = ranks.sum(axis=0)
    ties = 0.0
    for row in M:
        _, counts = np.unique(row, return_counts=True)
        ties += float((counts ** 3 - counts).sum())
    correction = 1.0 - ties / (n * k * (k * k - 1))
    if correction <= 0:
        return TestResult(0.0, 1.0, k - 1, 0.0, {"rank_sums": Rj.tolist(), "all_tied": True})
    q = (12.0 / (n * k * (k + 1)) * float((Rj ** 2).sum()) - 3.0 * n * (k + 1)) / correction
    q = max(q, 0.0)
    w = q / (n * (k - 1))
    return TestResult(q, chi2_sf(q, k - 1), k - 1, w, {"rank_sums": Rj.tolist()})


def wilcoxon_signed_rank(x, y=None, alternative: str = "two-sided", method: str = "auto") -> TestResult:
    """Signed-rank test on paired samples (or on differences when ``y`` is None).

    Zero differences are dropped.  ``statistic`` is min(W+, W-); the signed
    difference W+ - W- is in ``details["signed"]``.  Exact null distribution
    for n <= 25, otherwise normal with tie and continuity corrections.
    """
    d = np.asarray(x, dtype=np.float64)
    if y is not None:
        d = d - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise DegenerateError("all paired differences are zero")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    ranks = kernels.midrank(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    use_exact = method == "exact" or (method == "auto" and n <= EXACT_MAX_N)
    if use_exact:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = kernels.signed_rank_counts(doubled)
        total = counts.sum()
        obs = int(round(2 * w_plus))
        p_greater = counts[obs:].sum() / total
        p_less = counts[:obs + 1].sum() / total
        used = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tcounts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tcounts ** 3 - tcounts).sum()) / 48.0
        sd = math.sqrt(var)
        p_greater = norm_sf((w_plus - mean - 0.5) / sd)
        p_less = norm_cdf((w_plus - mean + 0.5) / sd)
        used = "normal"
    if alternative == "greater":
        p = p_greater
    elif alternative == "less":
        p = p_less
    else:
        p = min(1.0, 2.0 * min(p_greater, p_less))
    return TestResult(min(w_plus, w_minus), float(p), None, None,
                      {"n": n, "w_plus": w_plus, "w_minus": w_minus, "signed": w_plus - w_minus,
                       "method": used, "alternative": alternative})


def holm(pvalues: Sequence[float]) -> list[float]:
    p = np.asarray(pvalues, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="mergesort")
    adj = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[idx]))
        adj[idx] = running
    return adj.tolist()


def pairwise_wilcoxon(matrix, labels: Sequence, correction: str = "none", alternative: str = "two-sided") -> list[dict]:
    M = np.asarray(matrix, dtype=np.float64)
    pairs = list(itertools.combinations(range(M.shape[1]), 2))
    out = []
    for i, j in pairs:
        try:
            r = wilcoxon_signed_rank(M[:, i], M[:, j], alternative)
            out.append({"a": labels[i], "b": labels[j], **r.to_dict()})
        except DegenerateError as exc:
            out.append({"a": labels[i], "b": labels[j], "statistic": 0.0, "p_value": 1.0,
                        "details": {"degenerate": str(exc)}})
    adj = holm([o["p_value"] for o in out])
    for o, a in zip(out, adj):
        o["p_holm"] = a
        o["p_reported"] = a if correction == "holm" else o["p_value"]
    return out


# --------------------------------------------------------------------------
# end-to-end


def category_counts(table: ScoreTable) -> np.ndarray:
    """Melodies x applications count matrix of picks."""
    out = np.zeros((len(table.melodies), len(APPLICATIONS)), dtype=np.int64)
    for j in range(len(table.melodies)):
        out[j] = np.bincount(table.picks[:, j], minlength=len(APPLICATIONS))
    return out


def study_report(table: ScoreTable, correction: str = "none", alpha: float = 0.05) -> dict:
    """Descriptives, normality per method, Friedman + Kendall's W, pairwise Wilcoxon, Chi-square, Cochran's Q."""
    desc = describe(table)
    means = per_respondent_method_means(table)
    methods = table.method_ids
    normality = {}
    for c, m in enumerate(methods):
        try:
            normality[str(m)] = shapiro_wilk(means[:, c]).to_dict()
        except DegenerateError as exc:
            normality[str(m)] = {"degenerate": str(exc)}
    fr = friedman(means)
    pairs = pairwise_wilcoxon(means, [f"method {m}" for m in methods], correction)
    counts = category_counts(table)
    keep_cols = counts.sum(axis=0) > 0
    keep_rows = counts.sum(axis=1) > 0
    try:
        chi = chi_square_independence(counts[keep_rows][:, keep_cols]).to_dict()
    except (DegenerateError, ValueError) as exc:
        chi = {"degenerate": str(exc)}
    cochran = {}
    for a, app in enumerate(APPLICATIONS):
        try:
            cochran[app] = cochran_q((table.picks == a).astype(int)).to_dict()
        except DegenerateError as exc:
            cochran[app] = {"degenerate": str(exc)}
    return {
        "respondents": len(table.respondents),
        "descriptives": desc,
        "descriptives_text": render_descriptives(desc),
        "method_means": {str(m): float(means[:, c].mean()) for c, m in enumerate(methods)},
        "normality": normality,
        "friedman": fr.to_dict(),
        "pairwise": pairs,
        "significant_pairs": [f"{p['a']} vs {p['b']}" for p in pairs if p["p_reported"] < alpha],
        "application_counts": {"applications": list(APPLICATIONS), "melodies": table.melodies,
                               "counts": counts.tolist()},
        "chi_square": chi,
        "cochran_q": cochran,
        "correction": correction,
    }


def _fmt(r: dict) -> str:
    if "degenerate" in r:
        return f"degenerate ({r['degenerate']})"
    s = f"statistic={r['statistic']:.4f}"
    if r.get("df") is not None:
        s += f", df={r['df']:g}"
    s += f", p={r['p_value']:.4g}"
    if r.get("effect_size") is not None:
        s += f", effect={r['effect_size']:.4f}"
    return s


def report_text(rep: dict) -> str:
    lines = [f"Respondents: {rep['respondents']}", "", rep["descriptives_text"], "", "Normality (Shapiro-Wilk, per-method means):"]
    lines += [f"  method {m}: {_fmt(r)}" for m, r in rep["normality"].items()]
    lines += ["", f"Friedman: {_fmt(rep['friedman'])} (effect = Kendall's W)", "", f"Pairwise Wilcoxon (correction: {rep['correction']}):"]
    lines += [f"  {p['a']} vs {p['b']}: W={p['statistic']:.1f}, p={p['p_value']:.4g}, p_holm={p['p_holm']:.4g}"
              for p in rep["pairwise"]]
    lines += ["", "Application picks (melody x " + ", ".join(rep["application_counts"]["applications"]) + "):"]
    for mel, row in zip(rep["application_counts"]["melodies"], rep["application_counts"]["counts"]):
        lines.append(f"  melody {mel}: " + " ".join(f"{c:4d}" for c in row))
    lines += ["", f"Chi-square independence: {_fmt(rep['chi_square'])}", "Cochran Q per application:"]
    lines += [f"  {app}: {_fmt(r)}" for app, r in rep["cochran_q"].items()]
    return "\n".join(lines) + "\n"


def write_report(rep: dict, out_dir, stem: str = "study_report") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp = out / f"{stem}.json"
    tp = out / f"{stem}.txt"
    jp.write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tp.write_text(report_text(rep), encoding="utf-8")
    return jp, tp
