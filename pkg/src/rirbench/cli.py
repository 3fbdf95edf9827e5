"""Single command-line entry point for the whole workbench.

Subcommands: analyze, simulate, convolve, label, refine, eval-rt60,
eval-embed, eval-speech, and the mushra service commands. Every run is
deterministic given --seed plus cached or mocked endpoints, and writes a
config snapshot next to its outputs. Exit codes: 0 success, 1 invalid
input, 2 runtime failure; --json switches stderr errors to machine-readable
JSON.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import RirbenchError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

ENV_API_KEY = "RIRBENCH_API_KEY"
ENV_CAPTIONERS = "RIRBENCH_CAPTIONER_URLS"
ENV_JUDGE = "RIRBENCH_JUDGE_URL"
ENV_FUSER = "RIRBENCH_FUSER_URL"
ENV_EMBED = "RIRBENCH_EMBED_URL"
ENV_ASR = "RIRBENCH_ASR_URL"
ENV_GENERATOR = "RIRBENCH_GENERATOR_URL"


def _run_id(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:12]


def write_config_snapshot(out_path, command: str, args: argparse.Namespace) -> None:
    """Reproducibility record written next to each output artifact."""
    blob = {
        "tool": "rirbench",
        "version": __version__,
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
    }
    snapshot = Path(str(out_path) + ".run.json")
    snapshot.write_text(json.dumps(blob, indent=2, sort_keys=True, default=str))


def _emit(result: dict, args) -> None:
    out = json.dumps(result, indent=2, sort_keys=True)
    if getattr(args, "out", None):
        Path(args.out).write_text(out + "\n")
        write_config_snapshot(args.out, args.command, args)
    print(out)


# ---------------------------------------------------------------------------
# Endpoint spec parsing ("name=url", "name=mock:file", "hash", "echo", ...).

def _chat_endpoint(spec: str, default_name: str, cache_dir=None, api_key=None):
    from .endpoints import CachedChatEndpoint, HttpChatEndpoint, ResponseCache, ScriptedChatEndpoint

    name, sep, target = spec.partition("=")
    if not sep:
        name, target = default_name, spec
    if target.startswith("mock:"):
        endpoint = ScriptedChatEndpoint.from_file(name, target[len("mock:") :])
    elif target.startswith("http://") or target.startswith("https://"):
        endpoint = HttpChatEndpoint(name, target, api_key=api_key)
    else:
        raise ValidationError(f"bad endpoint spec {spec!r}: expected name=URL or name=mock:FILE")
    if cache_dir:
        endpoint = CachedChatEndpoint(endpoint, ResponseCache(Path(cache_dir) / f"{name}.jsonl"))
    return endpoint


def _embedding_endpoint(spec: str, cache_dir=None, api_key=None):
    from .endpoints import CachedEmbeddingEndpoint, HashEmbeddingEndpoint, HttpEmbeddingEndpoint, ResponseCache

    if spec == "hash" or spec.startswith("hash:"):
        dim = int(spec.partition(":")[2] or 64)
        endpoint = HashEmbeddingEndpoint(dim=dim)
    elif spec.startswith("http://") or spec.startswith("https://"):
        endpoint = HttpEmbeddingEndpoint("embedder", spec, api_key=api_key)
    else:
        raise ValidationError(f"bad embedding endpoint spec {spec!r}: expected URL, 'hash', or 'hash:DIM'")
    if cache_dir:
        endpoint = CachedEmbeddingEndpoint(endpoint, ResponseCache(Path(cache_dir) / "embeddings.jsonl"))
    return endpoint


def _asr_endpoint(spec: str, api_key=None):
    from .endpoints import FileReplayAsrEndpoint, HttpAsrEndpoint

    if spec == "echo":
        return None  # sentinel resolved against each item's reference transcript
    if spec.startswith("replay:"):
        return FileReplayAsrEndpoint(spec[len("replay:") :])
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpAsrEndpoint("asr", spec, api_key=api_key)
    raise ValidationError(f"bad asr endpoint spec {spec!r}: expected URL, 'echo', or 'replay:FILE'")


# ---------------------------------------------------------------------------
# Subcommand implementations.

def cmd_analyze(args) -> int:
    from .acoustics import analyze, params_to_json
    from .audio import read_rir

    params = analyze(read_rir(args.rir))
    _emit(params_to_json(params), args)
    return EXIT_OK


def _parse_triple(text: str, flag: str):
    parts = [p for p in text.replace("x", ",").replace("×", ",").split(",") if p.strip()]
    if len(parts) != 3:
        raise ValidationError(f"{flag} expects three comma- or x-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def cmd_simulate(args) -> int:
    from .audio import write_wav
    from .roomsim import ShoeboxRoom, eyring_rt60, sabine_rt60, simulate_shoebox

    from .roomsim import _DEFAULT_RECEIVER_FRAC, _DEFAULT_SOURCE_FRAC

    dims = _parse_triple(args.dims, "--dims")
    if args.absorption:
        alphas = [float(a) for a in args.absorption.split(",")]
        absorption = alphas[0] if len(alphas) == 1 else tuple(alphas)
    else:
        absorption = args.alpha
    source = (
        _parse_triple(args.source, "--source") if args.source
        else tuple(d * f for d, f in zip(dims, _DEFAULT_SOURCE_FRAC))
    )
    receiver = (
        _parse_triple(args.receiver, "--receiver") if args.receiver
        else tuple(d * f for d, f in zip(dims, _DEFAULT_RECEIVER_FRAC))
    )
    if args.max_order is not None:
        kwargs = {"max_order": args.max_order}
    elif args.max_time is not None:
        kwargs = {"max_time": args.max_time}
    else:
        probe = ShoeboxRoom(dims, source, receiver, absorption, max_order=0)
        kwargs = {"max_time": 3.0 * sabine_rt60(probe)}
    room = ShoeboxRoom(dims, source, receiver, absorption, **kwargs)
    rir = simulate_shoebox(room, args.rate)
    write_wav(args.out, rir, "float32")
    result = {
        "out": str(args.out),
        "sample_rate": args.rate,
        "n_samples": len(rir),
        "room": {
            "dims": list(room.dims),
            "source": list(room.source),
            "receiver": list(room.receiver),
            "absorption": list(room.absorption),
            "max_order": room.max_order,
            "max_time": room.max_time,
            "sabine_rt60_s": sabine_rt60(room),
            "eyring_rt60_s": eyring_rt60(room) if max(room.absorption) < 1.0 else None,
        },
    }
    write_config_snapshot(args.out, "simulate", args)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_convolve(args) -> int:
    from .audio import convolve, peak_normalize, read_rir, read_wav, write_wav

    signal = read_wav(args.speech)
    rir = read_rir(args.rir)
    if rir.sample_rate != signal.sample_rate:
        from .audio import resample

        rir = resample(rir, signal.sample_rate)
    out = convolve(signal, rir)
    if args.normalize:
        out = peak_normalize(out, 0.9)
    write_wav(args.out, out, args.format)
    write_config_snapshot(args.out, "convolve", args)
    print(json.dumps({"out": str(args.out), "sample_rate": out.sample_rate, "n_samples": len(out)},
                     indent=2, sort_keys=True))
    return EXIT_OK


def cmd_label(args) -> int:
    from .labeling import load_manifest, run_labeling, save_manifest

    api_key = os.environ.get(ENV_API_KEY)
    captioner_specs = [s for s in args.captioners.split(",") if s]
    captioners = [
        _chat_endpoint(s, f"captioner{i}", cache_dir=args.cache, api_key=api_key)
        for i, s in enumerate(captioner_specs)
    ]
    judge = _chat_endpoint(args.judge, "judge", cache_dir=args.cache, api_key=api_key)
    fuser = _chat_endpoint(args.fuser, "fuser", cache_dir=args.cache, api_key=api_key)
    records = load_manifest(args.manifest)
    base_delay = 0.0 if args.no_backoff else 1.0
    labeled, stats = run_labeling(
        records, captioners, judge, fuser, parallelism=args.jobs, base_delay=base_delay
    )
    save_manifest(args.out, labeled)
    write_config_snapshot(args.out, "label", args)
    print(json.dumps(stats.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_refine(args) -> int:
    from .labeling import load_icl_examples, refine_prompt_icl

    endpoint = _chat_endpoint(args.endpoint, "refiner", cache_dir=args.cache,
                              api_key=os.environ.get(ENV_API_KEY))
    examples = load_icl_examples(args.examples)
    result = refine_prompt_icl(endpoint, args.text, examples)
    _emit(
        {"intermediate_caption": result.intermediate_caption, "standardized_prompt": result.standardized_prompt},
        args,
    )
    return EXIT_OK


def cmd_eval_rt60(args) -> int:
    from .acoustics import build_rt60_report, rt60
    from .audio import read_rir, resample
    from .roomsim import generator_from_spec

    generator = generator_from_spec(args.generator)
    manifest_text = Path(args.manifest).read_text()
    rows = [json.loads(line) for line in manifest_text.splitlines() if line.strip()]

    def evaluate(item):
        gt = read_rir(item["gt_rir"])
        if gt.sample_rate != args.rate:
            gt = resample(gt, args.rate)
        gen, _meta = generator.generate(item["prompt"], sample_rate=args.rate, seed=args.seed)
        if gen.sample_rate != args.rate:
            gen = resample(gen, args.rate)
        est = rt60(gen, method=args.method)
        ref = rt60(gt, method=args.method)
        return {"id": str(item["id"]), "rt60_est": est.seconds, "rt60_gt": ref.seconds,
                "method": est.method}

    if args.jobs <= 1:
        entries = [evaluate(item) for item in rows]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(evaluate, rows))
    report = build_rt60_report(_run_id("eval-rt60", manifest_text, args.generator, args.rate, args.seed),
                               args.rate, entries)
    _emit(report, args)
    return EXIT_OK


def cmd_eval_embed(args) -> int:
    from .embeddings import comparison_report, similarity_report

    endpoint = _embedding_endpoint(args.endpoint, cache_dir=args.cache,
                                   api_key=os.environ.get(ENV_API_KEY))
    blob = json.loads(Path(args.pairs).read_text())
    conditions = blob.get("conditions") if isinstance(blob, dict) else None
    if conditions is None:
        conditions = {"default": blob}
    reports = []
    for name in conditions:
        pair_list = [(p["candidate"], p["reference"]) for p in conditions[name]]
        reports.append(similarity_report(pair_list, endpoint, name))
    _emit(comparison_report(reports, endpoint.name), args)
    return EXIT_OK


def cmd_eval_speech(args) -> int:
    from .audio import read_rir, read_wav
    from .endpoints import MockAsrEndpoint
    from .speecheval import SpeechEvalItem, speech_report

    items = []
    manifest_text = Path(args.manifest).read_text()
    transcripts = {}
    for line in manifest_text.splitlines():
        if not line.strip():
            continue
        blob = json.loads(line)
        items.append(
            SpeechEvalItem(
                id=str(blob["id"]),
                clean=read_wav(blob["clean_wav"]),
                gt_rir=read_rir(blob["gt_rir"]),
                gen_rir=read_rir(blob["gen_rir"]),
                transcript=blob["transcript"],
            )
        )
        transcripts[f"{blob['id']}/gt"] = blob["transcript"]
        transcripts[f"{blob['id']}/gen"] = blob["transcript"]
    asr = _asr_endpoint(args.asr, api_key=os.environ.get(ENV_API_KEY))
    if asr is None:  # echo mock: perfect transcripts
        asr = MockAsrEndpoint(transcripts=transcripts, name="echo-asr")
    report = speech_report(items, asr, run_id=_run_id("eval-speech", manifest_text, args.asr),
                           jobs=args.jobs)
    _emit(report, args)
    return EXIT_OK


def cmd_mushra_build(args) -> int:
    from .mushra import build_session

    session = build_session(args.manifest, args.out, seed=args.seed,
                            trials_per_listener=args.trials, anchor_mode=args.anchor)
    write_config_snapshot(Path(args.out) / "session", "mushra-build", args)
    print(json.dumps({"session_id": session.session_id, "out": str(args.out),
                      "n_trials": len(session.trials)}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_mushra_serve(args) -> int:
    import uvicorn

    from .mushra_api import make_app

    config = json.loads(Path(args.config).read_text())
    data_dir = Path(config["data_dir"])
    ui_dir = config.get("ui_dir")
    app = make_app(data_dir, ui_dir=ui_dir)
    if config.get("manifest"):
        from .mushra import build_session

        out_dir = data_dir / config.get("session_name", "session-0")
        if not (out_dir / "session.json").exists():
            session = build_session(
                config["manifest"], out_dir, seed=int(config.get("seed", 0)),
                trials_per_listener=int(config["trials_per_listener"]),
                anchor_mode=config.get("anchor", "lowpass"),
            )
        else:
            from .mushra import MushraSession

            session = MushraSession.load(out_dir)
        app.state.registry.register(session)
        print(json.dumps({"session_id": session.session_id}), flush=True)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_mushra_report(args) -> int:
    from .mushra import MushraSession, RatingStore, mushra_report

    session = MushraSession.load(args.session_dir)
    ratings = RatingStore(Path(args.session_dir) / "ratings.jsonl").load()
    _emit(mushra_report(session, ratings), args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser wiring.

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rirbench",
                                     description="Room-impulse-response research workbench")
    parser.add_argument("--version", action="version", version=f"rirbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="machine-readable error JSON on stderr")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("analyze", help="extract RT60/EDT/C50/D50 from a RIR")
    p.add_argument("rir")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="render a shoebox RIR")
    p.add_argument("--dims", required=True, help="LxWxH in meters, e.g. 6x5x3")
    p.add_argument("--alpha", type=float, default=0.25, help="uniform absorption coefficient")
    p.add_argument("--absorption", help="six per-wall coefficients, comma separated")
    p.add_argument("--source")
    p.add_argument("--receiver")
    p.add_argument("--rate", type=int, default=16000)
    p.add_argument("--max-time", type=float, dest="max_time")
    p.add_argument("--max-order", type=int, dest="max_order")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("convolve", help="convolve speech with a RIR")
    p.add_argument("speech")
    p.add_argument("rir")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["float32", "pcm16"], default="float32")
    p.add_argument("--normalize", action="store_true")
    common(p)
    p.set_defaults(func=cmd_convolve)

    p = sub.add_parser("label", help="run the caption/judge/filter/fuse pipeline")
    p.add_argument("manifest")
    p.add_argument("--captioners", default=os.environ.get(ENV_CAPTIONERS, ""), required=False,
                   help="comma-separated endpoint specs (name=URL or name=mock:FILE)")
    p.add_argument("--judge", default=os.environ.get(ENV_JUDGE, ""))
    p.add_argument("--fuser", default=os.environ.get(ENV_FUSER, ""))
    p.add_argument("--out", required=True)
    p.add_argument("--cache", help="endpoint cache directory")
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--no-backoff", action="store_true", help="skip retry delays (tests)")
    common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("refine", help="rewrite free-form text into a standardized prompt")
    p.add_argument("text")
    p.add_argument("--examples", required=True, help="JSON file with five raw/refined pairs")
    p.add_argument("--endpoint", default=os.environ.get(ENV_FUSER, ""))
    p.add_argument("--out")
    p.add_argument("--cache")
    common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval-rt60", help="RT60 error report for a generator")
    p.add_argument("manifest", help="JSONL of {id, prompt, gt_rir}")
    p.add_argument("--generator", default=os.environ.get(ENV_GENERATOR, "ism"))
    p.add_argument("--rate", type=int, default=16000)
    p.add_argument("--method", choices=["auto", "T20", "T30"], default="T20")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_eval_rt60)

    p = sub.add_parser("eval-embed", help="embedding-similarity report")
    p.add_argument("pairs", help="JSON pairs file")
    p.add_argument("--endpoint", default=os.environ.get(ENV_EMBED, "hash"))
    p.add_argument("--out")
    p.add_argument("--cache")
    common(p)
    p.set_defaults(func=cmd_eval_embed)

    p = sub.add_parser("eval-speech", help="WER/STOI report through an ASR endpoint")
    p.add_argument("manifest", help="JSONL of {id, clean_wav, gt_rir, gen_rir, transcript}")
    p.add_argument("--asr", default=os.environ.get(ENV_ASR, "echo"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_eval_speech)

    p = sub.add_parser("mushra", help="listening-test service")
    msub = p.add_subparsers(dest="mushra_command", required=True)

    mp = msub.add_parser("build", help="materialize a session from a manifest")
    mp.add_argument("--manifest", required=True)
    mp.add_argument("--out", required=True)
    mp.add_argument("--trials", type=int, required=True)
    mp.add_argument("--anchor", choices=["lowpass", "average_rir"], default="lowpass")
    common(mp)
    mp.set_defaults(func=cmd_mushra_build)

    mp = msub.add_parser("serve", help="serve sessions over HTTP")
    mp.add_argument("--config", required=True)
    mp.add_argument("--host", default="127.0.0.1")
    mp.add_argument("--port", type=int, default=8765)
    common(mp)
    mp.set_defaults(func=cmd_mushra_serve)

    mp = msub.add_parser("report", help="screening and score report for a session")
    mp.add_argument("session_dir")
    mp.add_argument("--out")
    common(mp)
    mp.set_defaults(func=cmd_mushra_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        _report_error(args, exc)
        return EXIT_VALIDATION
    except RirbenchError as exc:
        _report_error(args, exc)
        return EXIT_RUNTIME
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        _report_error(args, exc)
        return EXIT_RUNTIME


def _report_error(args, exc: Exception) -> None:
    if getattr(args, "json", False):
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
    else:
        print(f"rirbench: error: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
