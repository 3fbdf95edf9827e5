"""Downstream speech evaluation: WER through an ASR endpoint plus STOI,
with paired significance tests between ground-truth and generated RIRs.

Each utterance's clean speech is convolved with both RIRs; transcripts of
the reverberant renders are scored against the reference text, and
intelligibility is measured against the clean signal. WER is aggregated
both as the mean of per-utterance rates and as a corpus-level pooled rate,
since the two differ and reports should say which is which.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, ImpulseResponse, convolve, peak_normalize, resample
from .errors import RirbenchError, ValidationError
from .stats import METHOD_DROP_ZEROS, METHOD_PRATT, stats_to_json, wilcoxon_signed_rank
from .stoi import stoi
from .wer import tokenize, wer

CONDITION_GT = "ground_truth"
CONDITION_GEN = "generated"


@dataclass
class SpeechEvalItem:
    id: str
    clean: AudioBuffer
    gt_rir: ImpulseResponse
    gen_rir: ImpulseResponse
    transcript: str


def _render(clean: AudioBuffer, rir: ImpulseResponse) -> AudioBuffer:
    if rir.sample_rate != clean.sample_rate:
        rir = resample(rir, clean.sample_rate)
    return peak_normalize(convolve(clean, rir), 0.9)


def _condition_block(wers, stois):
    if not wers:
        return {
            "wer_mean_pct": None, "wer_median_pct": None, "wer_corpus_pct": None,
            "pesq_mean": None, "pesq_median": None,
            "stoi_mean": None, "stoi_median": None, "n": 0,
        }
    rates = [100.0 * w.wer for w in wers]
    pooled = 100.0 * sum(w.errors for w in wers) / sum(w.reference_length for w in wers)
    return {
        "wer_mean_pct": float(np.mean(rates)),
        "wer_median_pct": float(np.median(rates)),
        "wer_corpus_pct": pooled,
        "pesq_mean": None,  # externally computed when available
        "pesq_median": None,
        "stoi_mean": float(np.mean(stois)),
        "stoi_median": float(np.median(stois)),
        "n": len(wers),
    }


def _evaluate_item(item: SpeechEvalItem, asr_endpoint) -> dict:
    reference = tokenize(item.transcript)
    rev_gt = _render(item.clean, item.gt_rir)
    rev_gen = _render(item.clean, item.gen_rir)
    wer_gt = wer(reference, tokenize(asr_endpoint.transcribe(rev_gt, f"{item.id}/gt")))
    wer_gen = wer(reference, tokenize(asr_endpoint.transcribe(rev_gen, f"{item.id}/gen")))
    return {
        "id": item.id,
        "wer_gt": wer_gt,
        "wer_gen": wer_gen,
        "stoi_gt": stoi(item.clean, rev_gt),
        "stoi_gen": stoi(item.clean, rev_gen),
    }


def speech_report(items, asr_endpoint, run_id: str = "speech-eval", jobs: int = 1) -> dict:
    """Evaluate aligned (clean, ground-truth RIR, generated RIR) triplets.

    jobs bounds per-utterance parallelism (and with it concurrent ASR calls);
    aggregation is single-threaded and order-stable.
    """
    items = list(items)
    if not items:
        raise ValidationError("need at least one evaluation item")

    outcomes: list = [None] * len(items)

    def run(idx: int) -> None:
        try:
            outcomes[idx] = ("ok", _evaluate_item(items[idx], asr_endpoint))
        except RirbenchError as exc:
            outcomes[idx] = ("err", {"id": items[idx].id, "error": str(exc)})

    if jobs <= 1:
        for i in range(len(items)):
            run(i)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, range(len(items))))

    per_item = [payload for kind, payload in outcomes if kind == "ok"]
    failures = [payload for kind, payload in outcomes if kind == "err"]

    gt_block = _condition_block([r["wer_gt"] for r in per_item], [r["stoi_gt"] for r in per_item])
    gen_block = _condition_block([r["wer_gen"] for r in per_item], [r["stoi_gen"] for r in per_item])

    statistics = {"n": len(per_item), "n_zero": None, "pratt": None, "wilcox_nonzero": None,
                  "pairing": "per-utterance WER", "note": None}
    if len(per_item) >= 5:
        gen_rates = [100.0 * r["wer_gen"].wer for r in per_item]
        gt_rates = [100.0 * r["wer_gt"].wer for r in per_item]
        pratt = wilcoxon_signed_rank(gen_rates, gt_rates, method=METHOD_PRATT)
        statistics["pratt"] = stats_to_json(pratt)
        statistics["n_zero"] = pratt.n_zero_diffs
        try:
            nonzero = wilcoxon_signed_rank(gen_rates, gt_rates, method=METHOD_DROP_ZEROS)
            statistics["wilcox_nonzero"] = stats_to_json(nonzero)
        except ValidationError as exc:
            statistics["note"] = str(exc)
    else:
        statistics["note"] = "fewer than 5 scored pairs; significance tests skipped"

    return {
        "run_id": run_id,
        "common_rate_hz": items[0].clean.sample_rate,
        "per_item": [
            {
                "id": r["id"],
                "wer_gt_pct": 100.0 * r["wer_gt"].wer,
                "wer_gen_pct": 100.0 * r["wer_gen"].wer,
                "stoi_gt": r["stoi_gt"],
                "stoi_gen": r["stoi_gen"],
            }
            for r in per_item
        ],
        "conditions": {CONDITION_GT: gt_block, CONDITION_GEN: gen_block},
        "statistics": statistics,
        "failures": failures,
        "n_failed": len(failures),
    }
