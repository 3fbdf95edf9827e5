"""Caption, judge, filter, and fuse: turning image-RIR datasets into text-RIR pairs.

Several vision-language captioners describe each room image as acousticians;
a judge model scores every caption 1..5 against the room's ground-truth
metadata; records survive only if at least two captions score above 3; the
best caption is fused with the metadata into the final training prompt.
A separate two-stage exchange rewrites free-form user text into the same
standardized prompt format using five in-context example pairs.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .endpoints import DEFAULT_ATTEMPTS, DEFAULT_BACKOFF_S, call_with_retry
from .errors import RirbenchError, ValidationError

STATUS_PENDING = "pending"
STATUS_FILTERED_OUT = "filtered_out"
STATUS_LABELED = "labeled"

REQUIRED_ICL_EXAMPLES = 5
DEFAULT_PARALLELISM = 4


class ScoreParseError(RirbenchError):
    """The judge reply contained no usable score."""

    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


class ContentError(RirbenchError):
    """An endpoint answered, but with unusable content."""


def load_template(name: str) -> str:
    return resources.files("rirbench").joinpath("templates", name).read_text()


@dataclass(frozen=True)
class Caption:
    model_name: str
    text: str


@dataclass(frozen=True)
class CaptionScore:
    model_name: str
    caption: str
    score: int

    def __post_init__(self):
        if not 1 <= self.score <= 5:
            raise ValidationError(f"score must be in 1..5, got {self.score}")


@dataclass(frozen=True)
class IclExample:
    raw_caption: str
    refined_prompt: str

    def __post_init__(self):
        if not self.raw_caption or not self.refined_prompt:
            raise ValidationError("ICL example fields must be non-empty")


@dataclass
class DatasetRecord:
    id: str
    room_id: str = ""
    rir_path: str = ""
    image_ref: str = ""
    metadata: dict = field(default_factory=dict)
    captions: list = field(default_factory=list)
    final_prompt: str | None = None
    status: str = STATUS_PENDING
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "room_id": self.room_id,
            "rir_path": self.rir_path,
            "image_ref": self.image_ref,
            "metadata": self.metadata,
            "captions": [
                {"model_name": c.model_name, "caption": c.caption, "score": c.score} for c in self.captions
            ],
            "final_prompt": self.final_prompt,
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "DatasetRecord":
        rec = cls(
            id=str(blob["id"]),
            room_id=blob.get("room_id", ""),
            rir_path=blob.get("rir_path", ""),
            image_ref=blob.get("image_ref", ""),
            metadata=blob.get("metadata", {}),
            final_prompt=blob.get("final_prompt"),
            status=blob.get("status", STATUS_PENDING),
            error=blob.get("error"),
        )
        rec.captions = [
            CaptionScore(c["model_name"], c["caption"], c["score"]) for c in blob.get("captions", [])
        ]
        return rec


def load_manifest(path) -> list[DatasetRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(DatasetRecord.from_json(json.loads(line)))
    return records


def save_manifest(path, records) -> None:
    lines = [json.dumps(r.to_json(), sort_keys=True, ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# Pipeline operations.

def caption_image(endpoint, image_ref: str, system_prompt: str | None = None, *,
                  attempts: int = DEFAULT_ATTEMPTS, base_delay: float = DEFAULT_BACKOFF_S,
                  sleep=None) -> Caption:
    """Ask one captioner to describe the room image; returns its text verbatim."""
    system = system_prompt if system_prompt is not None else load_template("captioner_system.txt")
    kwargs = {} if sleep is None else {"sleep": sleep}
    text = call_with_retry(
        lambda: endpoint.complete(system, f"Image: {image_ref}", images=[image_ref]),
        attempts=attempts, base_delay=base_delay, **kwargs,
    )
    text = text.strip()
    if not text:
        raise ContentError(f"captioner {endpoint.name} returned an empty caption")
    return Caption(endpoint.name, text)


_SCORE_TOKEN = re.compile(r"(?<![\d.])([1-5])(?![\d.])")


def _parse_score(reply: str) -> int | None:
    m = _SCORE_TOKEN.search(reply)
    return int(m.group(1)) if m else None


def judge_caption(endpoint, caption: Caption, metadata: dict, system_prompt: str | None = None, *,
                  attempts: int = DEFAULT_ATTEMPTS, base_delay: float = DEFAULT_BACKOFF_S,
                  sleep=None) -> CaptionScore:
    """Score a caption 1..5 against room metadata; re-asks once on parse failure."""
    if not metadata:
        raise ValidationError("metadata must be non-empty for judging")
    system = system_prompt if system_prompt is not None else load_template("judge_system.txt")
    content = f"Room metadata:\n{json.dumps(metadata, sort_keys=True)}\n\nCaption:\n{caption.text}"
    kwargs = {} if sleep is None else {"sleep": sleep}

    reply = call_with_retry(lambda: endpoint.complete(system, content),
                            attempts=attempts, base_delay=base_delay, **kwargs)
    score = _parse_score(reply)
    if score is None:
        stricter = content + "\n\nReply with only one integer between 1 and 5."
        retry_reply = call_with_retry(lambda: endpoint.complete(system, stricter),
                                      attempts=attempts, base_delay=base_delay, **kwargs)
        score = _parse_score(retry_reply)
        if score is None:
            raise ScoreParseError(
                f"judge {endpoint.name} reply contained no score in 1..5", raw_reply=retry_reply
            )
    return CaptionScore(caption.model_name, caption.text, score)


def filter_record(scores) -> bool:
    """Keep a record only when at least two captions scored above 3."""
    scores = list(scores)
    if not scores:
        raise ValidationError("need at least one caption score")
    return sum(1 for s in scores if s.score > 3) >= 2


def select_best_caption(scores) -> CaptionScore:
    """Highest score wins; ties break on the lexicographically first captioner name."""
    best = max(s.score for s in scores)
    return min((s for s in scores if s.score == best), key=lambda s: s.model_name)


def fuse_prompt(endpoint, best: CaptionScore, metadata: dict, system_prompt: str | None = None, *,
                attempts: int = DEFAULT_ATTEMPTS, base_delay: float = DEFAULT_BACKOFF_S,
                sleep=None) -> str:
    """Combine the winning caption with the room metadata into the final prompt."""
    if not metadata:
        raise ValidationError("metadata must be non-empty for fusion")
    system = system_prompt if system_prompt is not None else load_template("fusion_system.txt")
    content = f"Caption:\n{best.caption}\n\nRoom metadata:\n{json.dumps(metadata, sort_keys=True)}"
    kwargs = {} if sleep is None else {"sleep": sleep}
    text = call_with_retry(lambda: endpoint.complete(system, content),
                           attempts=attempts, base_delay=base_delay, **kwargs).strip()
    if not text:
        raise ContentError(f"fuser {endpoint.name} returned an empty prompt")
    return text


@dataclass(frozen=True)
class RefinementResult:
    intermediate_caption: str
    standardized_prompt: str


def refine_prompt_icl(endpoint, free_form_text: str, examples, *,
                      attempts: int = DEFAULT_ATTEMPTS, base_delay: float = DEFAULT_BACKOFF_S,
                      sleep=None) -> RefinementResult:
    """Two-stage rewrite of free-form text into the standardized prompt format.

    Stage one extracts an intermediate acoustic caption; stage two shows the
    five raw-to-refined example pairs and formats the caption accordingly.
    """
    examples = list(examples)
    if len(examples) != REQUIRED_ICL_EXAMPLES:
        raise ValidationError(f"exactly {REQUIRED_ICL_EXAMPLES} in-context examples required, got {len(examples)}")
    kwargs = {} if sleep is None else {"sleep": sleep}

    stage1_system = load_template("refiner_system.txt")
    caption = call_with_retry(lambda: endpoint.complete(stage1_system, free_form_text),
                              attempts=attempts, base_delay=base_delay, **kwargs).strip()
    if not caption:
        raise ContentError(f"refiner {endpoint.name} returned an empty intermediate caption")

    stage2_system = load_template("refiner_format_system.txt")
    blocks = [
        f"Raw caption:\n{ex.raw_caption}\nRefined prompt:\n{ex.refined_prompt}" for ex in examples
    ]
    stage2_content = "\n\n".join(blocks) + f"\n\nRaw caption:\n{caption}\nRefined prompt:"
    prompt = call_with_retry(lambda: endpoint.complete(stage2_system, stage2_content),
                             attempts=attempts, base_delay=base_delay, **kwargs).strip()
    if not prompt:
        raise ContentError(f"refiner {endpoint.name} returned an empty standardized prompt")
    return RefinementResult(caption, prompt)


def load_icl_examples(path) -> list[IclExample]:
    """Examples file: JSON list of {raw_caption, refined_prompt}."""
    blob = json.loads(Path(path).read_text())
    return [IclExample(e["raw_caption"], e["refined_prompt"]) for e in blob]


# ---------------------------------------------------------------------------
# Batch labeling.

@dataclass(frozen=True)
class LabelingStats:
    total: int
    kept: int
    dropped: int
    errored: int
    per_model_mean_score: dict

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "kept": self.kept,
            "dropped": self.dropped,
            "errored": self.errored,
            "per_model_mean_score": self.per_model_mean_score,
        }


def run_labeling(records, captioners, judge, fuser, *, parallelism: int = DEFAULT_PARALLELISM,
                 attempts: int = DEFAULT_ATTEMPTS, base_delay: float = DEFAULT_BACKOFF_S,
                 sleep=None) -> tuple[list[DatasetRecord], LabelingStats]:
    """Label every record; failures isolate the record, never the batch."""
    if len(captioners) < 2:
        raise ValidationError(f"need at least two captioners, got {len(captioners)}")
    records = list(records)
    results: dict[int, DatasetRecord] = {}
    lock = threading.Lock()

    def process(idx: int, record: DatasetRecord) -> None:
        rec = DatasetRecord.from_json(record.to_json())  # work on a copy
        try:
            captions = [
                caption_image(ep, rec.image_ref, attempts=attempts, base_delay=base_delay, sleep=sleep)
                for ep in captioners
            ]
            scores = [
                judge_caption(judge, cap, rec.metadata, attempts=attempts, base_delay=base_delay, sleep=sleep)
                for cap in captions
            ]
            rec.captions = scores
            if filter_record(scores):
                best = select_best_caption(scores)
                rec.final_prompt = fuse_prompt(
                    fuser, best, rec.metadata, attempts=attempts, base_delay=base_delay, sleep=sleep
                )
                rec.status = STATUS_LABELED
            else:
                rec.status = STATUS_FILTERED_OUT
            rec.error = None
        except RirbenchError as exc:
            rec.status = STATUS_PENDING
            rec.error = str(exc)
        with lock:
            results[idx] = rec

    if parallelism <= 1:
        for i, record in enumerate(records):
            process(i, record)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(lambda args: process(*args), enumerate(records)))

    out = [results[i] for i in range(len(records))]
    kept = sum(1 for r in out if r.status == STATUS_LABELED)
    dropped = sum(1 for r in out if r.status == STATUS_FILTERED_OUT)
    errored = sum(1 for r in out if r.error)
    by_model: dict[str, list[int]] = {}
    for rec in out:
        for cs in rec.captions:
            by_model.setdefault(cs.model_name, []).append(cs.score)
    means = {m: sum(v) / len(v) for m, v in sorted(by_model.items())}
    stats = LabelingStats(len(out), kept, dropped, errored, means)
    return out, stats
