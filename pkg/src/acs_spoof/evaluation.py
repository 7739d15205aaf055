"""Detection metrics, score files and embedding dumps.

Score polarity throughout: higher means bonafide.  At threshold ``tau`` a
bonafide trial is rejected when ``score < tau`` and a spoof trial is
accepted when ``score >= tau``.

EER convention
--------------
Candidate thresholds are ``-inf``, the midpoints between adjacent distinct
scores (pooled over both classes), and ``+inf``.  ``FAR - FRR`` is
non-increasing along this grid.  The EER is read off the first grid segment
on which it changes sign, by linear interpolation between the segment's two
operating points; if it hits zero exactly on a grid point, that point's
rate is the EER.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, NonFiniteError


def _scores(x, what):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError(f"no {what} scores")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} scores contain non-finite values")
    return x


def threshold_grid(bonafide, spoof):
    u = np.unique(np.concatenate([bonafide, spoof]))
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])


def error_rates(bonafide, spoof, thresholds):
    """FRR(tau) = P(bona < tau), FAR(tau) = P(spoof >= tau) on a sorted grid."""
    b = np.sort(bonafide)
    s = np.sort(spoof)
    frr = np.searchsorted(b, thresholds, side="left") / b.size
    far = (s.size - np.searchsorted(s, thresholds, side="left")) / s.size
    return frr, far


def _interp_threshold(t0, t1, lam, bonafide):
    if lam == 1.0:
        return float(t1)
    if np.isfinite(t0) and np.isfinite(t1):
        return float(t0 + lam * (t1 - t0))
    if np.isfinite(t0):
        return float(t0)
    if np.isfinite(t1):
        return float(t1)
    # a single distinct score: the only meaningful cut is that value
    return float(bonafide[0])


def eer_from_rates(frr, far, thresholds, bonafide):
    d = far - frr
    # d[0] = 1 and d[-1] = -1; i is the last grid point before d first drops to <= 0
    i = int(np.argmax(d[1:] <= 0))
    lam = d[i] / (d[i] - d[i + 1])
    eer = frr[i + 1] if lam == 1.0 else frr[i] + lam * (frr[i + 1] - frr[i])
    return float(eer), _interp_threshold(thresholds[i], thresholds[i + 1], lam, bonafide)


def compute_eer(bonafide_scores, spoof_scores):
    """Equal error rate and the threshold where it is attained.

    >>> compute_eer([0.9, 0.8, 0.7], [0.1, 0.2, 0.75])[0]
    0.3333333333333333
    """
    b = _scores(bonafide_scores, "bonafide")
    s = _scores(spoof_scores, "spoof")
    grid = threshold_grid(b, s)
    frr, far = error_rates(b, s, grid)
    return eer_from_rates(frr, far, grid, b)


@dataclass
class TdcfParams:
    """Cost model and ASV operating point for the tandem detection cost.

    Defaults follow the ASVspoof cost model (spoof prior 0.05, target prior
    0.99 of the remainder, C_miss = 1, C_fa = C_fa_spoof = 10).  The ASV
    error rates are placeholders; pass the ones measured on your ASV system
    (see :func:`asv_operating_point`).
    """
    prior_spoof: float = 0.05
    prior_target: float = 0.95 * 0.99
    prior_nontarget: float = 0.95 * 0.01
    c_miss: float = 1.0
    c_fa: float = 10.0
    c_fa_spoof: float = 10.0
    p_miss_asv: float = 0.05
    p_fa_asv: float = 0.05
    p_miss_spoof_asv: float = 0.10

    def validate(self):
        priors = (self.prior_spoof, self.prior_target, self.prior_nontarget)
        if any(p < 0 for p in priors) or abs(sum(priors) - 1.0) > 1e-12:
            raise ValueError(f"priors must be non-negative and sum to 1, got {priors}")
        for name in ("c_miss", "c_fa", "c_fa_spoof"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("p_miss_asv", "p_fa_asv", "p_miss_spoof_asv"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        c1, c2 = self.cm_costs()[1:]
        if c1 <= 0 or c2 <= 0:
            raise ValueError("cost model makes a CM error free; check the ASV operating point")
        return self

    def cm_costs(self):
        """(C0, C1, C2) with cascade cost C0 + C1 P_miss_cm + C2 P_fa_cm.

    C0 is what the ASV alone costs; the CM cannot change it.
    """
        asv_cost = (self.prior_target * self.c_miss * self.p_miss_asv
                    + self.prior_nontarget * self.c_fa * self.p_fa_asv)
        c0 = asv_cost
        c1 = self.prior_target * self.c_miss - asv_cost
        c2 = self.prior_spoof * self.c_fa_spoof * (1.0 - self.p_miss_spoof_asv)
        return c0, c1, c2

    @classmethod
    def from_mapping(cls, mapping):
        known = set(cls.__dataclass_fields__)
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown t-DCF parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in mapping.items()}).validate()


def asv_operating_point(target_scores, nontarget_scores, spoof_scores):
    """ASV error rates at the ASV system's own EER threshold."""
    tar = _scores(target_scores, "target")
    non = _scores(nontarget_scores, "nontarget")
    spf = _scores(spoof_scores, "spoof")
    _, tau = compute_eer(tar, non)
    return {"p_miss_asv": float(np.mean(tar < tau)),
            "p_fa_asv": float(np.mean(non >= tau)),
            "p_miss_spoof_asv": float(np.mean(spf < tau))}


def tdcf_curve(bonafide_scores, spoof_scores, params=None):
    """Normalised t-DCF at every CM threshold of the grid.

    ``(C1 P_miss_cm + C2 P_fa_cm) / min(C1, C2)``: the constant ASV-only
    cost is left out and the result is scaled by the better default CM
    (accept all or reject all), so a perfect CM scores 0 and a useless one 1.
    """
    params = (params or TdcfParams()).validate()
    b = _scores(bonafide_scores, "bonafide")
    s = _scores(spoof_scores, "spoof")
    grid = threshold_grid(b, s)
    p_miss, p_fa = error_rates(b, s, grid)
    _, c1, c2 = params.cm_costs()
    return grid, (c1 * p_miss + c2 * p_fa) / min(c1, c2)


def min_tdcf(bonafide_scores, spoof_scores, params=None):
    _, norm = tdcf_curve(bonafide_scores, spoof_scores, params)
    return float(norm.min())


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    n_bonafide: int
    n_spoof: int
    min_tdcf: float | None = None

    def lines(self):
        out = [f"EER: {100 * self.eer:.2f}%"]
        if self.min_tdcf is not None:
            out.append(f"min t-DCF: {self.min_tdcf:.4f}")
        return out


def evaluate_scores(bonafide_scores, spoof_scores, tdcf_params=None):
    eer, tau = compute_eer(bonafide_scores, spoof_scores)
    report = EvalReport(eer, tau, len(bonafide_scores), len(spoof_scores))
    if tdcf_params is not None:
        report.min_tdcf = min_tdcf(bonafide_scores, spoof_scores, tdcf_params)
    return report


# -- score files -------------------------------------------------------------

@dataclass
class ScoreRecord:
    utterance_id: str
    score: float
    key: str | None = field(default=None, compare=False)


def format_score(x):
    return f"{x:.6f}"


def quantize(x):
    """Round to what a score file can hold, so file and in-memory EER agree."""
    return float(format_score(x))


def write_score_file(records, path):
    seen = set()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            if not rec.utterance_id or any(ch.isspace() for ch in rec.utterance_id):
                raise ValueError(f"invalid utterance id {rec.utterance_id!r}")
            if rec.utterance_id in seen:
                raise ValueError(f"duplicate utterance id {rec.utterance_id!r}")
            if not math.isfinite(rec.score):
                raise NonFiniteError(f"non-finite score for {rec.utterance_id}")
            seen.add(rec.utterance_id)
            fh.write(f"{rec.utterance_id} {format_score(rec.score)}\n")


def read_score_file(path):
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(path, lineno, f"expected 'utterance_id score', got {line.rstrip()!r}")
            utt, raw = parts
            try:
                value = float(raw)
            except ValueError:
                raise FormatError(path, lineno, f"score {raw!r} is not a number") from None
            if not math.isfinite(value):
                raise FormatError(path, lineno, f"score {raw!r} is not finite")
            if utt in seen:
                raise FormatError(path, lineno, f"duplicate utterance id {utt!r}")
            seen.add(utt)
            records.append(ScoreRecord(utt, value))
    return records


def split_by_key(records, keys):
    """Partition scores into (bonafide, spoof) using ``keys[utt_id]``."""
    bona, spoof = [], []
    for rec in records:
        key = rec.key if rec.key is not None else keys[rec.utterance_id]
        (bona if key == "bonafide" else spoof).append(rec.score)
    return np.array(bona), np.array(spoof)


def write_embeddings(path, utt_ids, keys, embeddings):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    D = embeddings.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["utt_id", "key"] + [f"e{i}" for i in range(D)])
        for utt, key, row in zip(utt_ids, keys, embeddings):
            writer.writerow([utt, key] + [repr(float(x)) for x in row])


def dump_embeddings(model, dataset, path):
    """Write one CSV row of pooled embeddings per utterance."""
    emb = model.embed(dataset.frames)
    write_embeddings(path, dataset.utt_ids, dataset.keys, emb)
    return path
