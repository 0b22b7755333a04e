"""BLEU, stored model size, and inference timing."""

import math
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field

from .errors import DomainError


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def modified_precision(candidate, references, n):
    """Clipped n-gram matches and total candidate n-grams, as ``(matches, total)``.

    A candidate shorter than ``n`` gives ``(0, 0)``.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    counts = Counter(ngrams(candidate, n))
    if not counts:
        return 0, 0
    max_ref = Counter()
    for ref in references:
        for gram, c in Counter(ngrams(ref, n)).items():
            if c > max_ref[gram]:
                max_ref[gram] = c
    matches = sum(min(c, max_ref[gram]) for gram, c in counts.items())
    return matches, sum(counts.values())


def brevity_penalty(c_len, r_len):
    if c_len <= 0:
        return 0.0
    if c_len >= r_len:
        return 1.0
    return math.exp(1.0 - r_len / c_len)


def closest_ref_length(c_len, references):
    """Reference length nearest the candidate's; ties go to the shorter one."""
    return min((len(r) for r in references), key=lambda r: (abs(r - c_len), r))


def corpus_bleu(pairs, max_n=4, weights=None, smoothing=False):
    """Corpus-level BLEU over ``(candidate_tokens, [reference_tokens, ...])`` pairs.

    Clipped counts and lengths are summed over the corpus before the
    precisions are combined. Without smoothing, any zero precision gives a
    score of 0; ``smoothing=True`` adds 1e-9 to every precision's numerator.
    """
    pairs = list(pairs)
    if not pairs:
        raise DomainError("BLEU needs at least one candidate/reference pair")
    if weights is None:
        weights = [1.0 / max_n] * max_n
    if len(weights) != max_n or abs(sum(weights) - 1.0) > 1e-9:
        raise DomainError("need max_n weights summing to 1")
    matches = [0] * max_n
    totals = [0] * max_n
    c_total = 0
    r_total = 0
    for cand, refs in pairs:
        if not refs:
            raise DomainError("every candidate needs at least one reference")
        c_total += len(cand)
        r_total += closest_ref_length(len(cand), refs)
        for n in range(1, max_n + 1):
            m, t = modified_precision(cand, refs, n)
            matches[n - 1] += m
            totals[n - 1] += t
    log_sum = 0.0
    for w, m, t in zip(weights, matches, totals):
        if w == 0:
            continue
        if smoothing:
            p = (m + 1e-9) / (t + 1e-9) if t else 1e-9
        else:
            if m == 0 or t == 0:
                return 0.0
            p = m / t
        log_sum += w * math.log(p)
    return brevity_penalty(c_total, r_total) * math.exp(log_sum)


def bleu_scores(pairs, max_n=4, smoothing=False):
    """Cumulative BLEU-1..BLEU-max_n with uniform weights."""
    return [corpus_bleu(pairs, n, [1.0 / n] * n, smoothing) for n in range(1, max_n + 1)]


# --------------------------------------------------------------------------
# size and time


def model_size(model, schemes=None):
    """Exact byte length of the model's weight container under ``schemes``."""
    from .serialize import container_entries
    from .container import dumps

    return len(dumps(container_entries(model, schemes)))


@dataclass
class Timing:
    total_s: float
    per_sample_s: float
    samples: int
    repetitions: int
    runs_s: list = field(default_factory=list)


def time_inference(run_one, eval_items, repetitions=3):
    """Median wall time of calling ``run_one(item)`` over every eval item."""
    if repetitions < 1:
        raise DomainError("repetitions must be >= 1")
    items = list(eval_items)
    runs = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for item in items:
            run_one(item)
        runs.append(time.perf_counter() - t0)
    total = statistics.median(runs)
    return Timing(total, total / max(1, len(items)), len(items), repetitions, runs)


def percent_change(new, base):
    if base == 0:
        return 0.0
    return (new - base) / base * 100.0


@dataclass
class EvalReport:
    label: str
    bleu: list                 # BLEU-1..4
    model_size_bytes: int
    inference_time_s: float
    per_sample_s: float = 0.0
    status: str = "ok"
    deltas: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status == "ok":
            if any(not (0.0 <= b <= 1.0) for b in self.bleu):
                raise DomainError("BLEU scores must lie in [0, 1]")
            if self.model_size_bytes <= 0:
                raise DomainError("model size must be positive")

    def compare(self, base):
        """Fill percent deltas against ``base`` (BLEU-1, size, time)."""
        if self.status != "ok" or base.status != "ok":
            self.deltas = {}
            return self
        self.deltas = {
            "bleu1_pct": percent_change(self.bleu[0], base.bleu[0]),
            "size_reduction_pct": -percent_change(self.model_size_bytes, base.model_size_bytes),
            "time_pct": percent_change(self.inference_time_s, base.inference_time_s),
        }
        return self


def _fmt_delta(value, is_base):
    if is_base or value is None:
        return "-"
    return f"{value:+.1f}"


def format_table(reports, baseline_label=None):
    """Text table with one row per configuration and percent deltas vs. the first row."""
    head = (f"{'#':>2}  {'config (enc-dec)':<22} {'BLEU-1':>7} {'%chg':>7} "
            f"{'size MB':>9} {'%red':>7} {'time s':>8} {'%chg':>7}")
    lines = [head, "-" * len(head)]
    base = baseline_label or (reports[0].label if reports else None)
    for i, r in enumerate(reports, 1):
        if r.status != "ok":
            lines.append(f"{i:>2}  {r.label:<22} FAILED: {r.status}")
            continue
        is_base = r.label == base
        d = r.deltas
        red = d.get("size_reduction_pct")
        lines.append(
            f"{i:>2}  {r.label:<22} {r.bleu[0]:>7.3f} {_fmt_delta(d.get('bleu1_pct'), is_base):>7} "
            f"{r.model_size_bytes / 1e6:>9.4f} "
            f"{('-' if is_base or red is None else f'{red:.1f}'):>7} "
            f"{r.inference_time_s:>8.3f} {_fmt_delta(d.get('time_pct'), is_base):>7}")
    return "\n".join(lines)


def to_kv(reports):
    """Line-oriented ``key=value`` dump, one block per report."""
    out = []
    for i, r in enumerate(reports, 1):
        p = f"row{i}"
        out.append(f"{p}.label={r.label}")
        out.append(f"{p}.status={'ok' if r.status == 'ok' else 'FAILED'}")
        if r.status != "ok":
            out.append(f"{p}.error={r.status}")
            continue
        for n, b in enumerate(r.bleu, 1):
            out.append(f"{p}.bleu{n}={b:.6f}")
        out.append(f"{p}.size_bytes={r.model_size_bytes}")
        out.append(f"{p}.time_s={r.inference_time_s:.6f}")
        out.append(f"{p}.per_sample_s={r.per_sample_s:.6f}")
        for k, v in r.deltas.items():
            out.append(f"{p}.{k}={v:.4f}")
    return "\n".join(out) + "\n"
