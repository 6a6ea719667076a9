"""Command-line entry point for the full pipeline.

Subcommands mirror the pipeline stages: cohort synthesis, feature extraction,
the per-user evaluation experiment, and the enrollment/authentication service.
Every random choice is driven by an explicit --seed; reports avoid wall-clock
fields so reruns with the same seeds (and --max-evals) are byte-identical.

Exit codes: 0 success / access granted, 1 error, 2 access denied,
3 evaluation finished with failed users.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from . import classifiers, service
from .autoselect import SearchBudget, cross_val_predict, select_model
from .dataset import (
    Instance,
    LABEL_GENUINE,
    LABEL_UNLABELED,
    assemble_user_dataset,
    load_features_csv,
    save_features_csv,
    stratified_kfold,
)
from .errors import EegAuthError, NoModelError
from .evaluation import (
    ConfusionCounts,
    METRIC_COLUMNS,
    cohort_report,
    compare_to_chance,
    metrics,
)
from .features import extract_features
from .seeds import derive_seed
from .signal import DEFAULT_BAND, bandpass_filter, random_segments, read_recording_csv
from .synth import CohortSpec, write_cohort

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DENY = 2
EXIT_PARTIAL = 3

STORE_ROOT_ENV = "EEGAUTH_STORE_ROOT"


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_ERROR


# --- synth-cohort ------------------------------------------------------------

def _cmd_synth_cohort(args) -> int:
    spec = CohortSpec(
        n_subjects=args.subjects,
        duration_s=args.duration,
        sample_rate_hz=args.rate,
        separability=args.separability,
        seed=args.seed,
        intra_jitter=args.jitter,
        noise_floor=args.noise_floor,
    )
    write_cohort(spec, args.out)
    print(f"wrote {spec.n_subjects} recordings to {args.out}")
    return EXIT_OK


# --- extract-features ----------------------------------------------------------

def _cmd_extract_features(args) -> int:
    in_dir = Path(args.in_dir)
    recordings = sorted(p for p in in_dir.glob("*.csv"))
    if not recordings:
        return _fail(f"no recordings found in {in_dir}")
    instances = []
    for csv_path in recordings:
        rec = read_recording_csv(csv_path)
        filtered = bandpass_filter(rec, args.lo, args.hi)
        seed = derive_seed(args.seed, "segments", rec.subject_id)
        for idx, seg in enumerate(random_segments(filtered, args.segments, seed)):
            instances.append(Instance(extract_features(seg), LABEL_UNLABELED,
                                      rec.subject_id, idx))
    save_features_csv(instances, args.out)
    print(f"wrote {len(instances)} instances from {len(recordings)} subjects "
          f"to {args.out}")
    return EXIT_OK


# --- evaluate-cohort -------------------------------------------------------------

_REPORT_COLUMNS = (
    ("subject",)
    + ("genuine_granted", "genuine_denied", "impostor_granted", "impostor_denied")
    + METRIC_COLUMNS
    + ("algorithm", "cv_accuracy", "status")
)


def _counts_from_predictions(instances, predicted) -> ConfusionCounts:
    tp = fn = fp = tn = 0
    for inst, label in zip(instances, predicted):
        if inst.label == LABEL_GENUINE:
            if label == LABEL_GENUINE:
                tp += 1
            else:
                fn += 1
        else:
            if label == LABEL_GENUINE:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp, fn, fp, tn)


def _cmd_evaluate_cohort(args) -> int:
    instances = load_features_csv(args.features)
    by_subject: dict[str, list[Instance]] = {}
    for inst in instances:
        by_subject.setdefault(inst.source_subject, []).append(inst)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        return _fail("evaluation needs at least 2 subjects in the feature file")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    failed = []
    confusions = []
    for subject in subjects:
        own = by_subject[subject]
        pool = [i for s in subjects if s != subject for i in by_subject[s]]
        seed = derive_seed(args.seed, "user", subject)
        ds = assemble_user_dataset(subject, own, pool, seed)
        budget = SearchBudget(args.budget, args.max_evals, seed)
        try:
            model, trace = select_model(ds, budget, k_folds=args.folds)
        except NoModelError:
            failed.append(subject)
            rows.append({"subject": subject, "status": "failed"})
            print(f"{subject}: failed (no model within budget)")
            continue
        if args.traces:
            traces_dir = Path(args.traces)
            traces_dir.mkdir(parents=True, exist_ok=True)
            trace.write_csv(traces_dir / f"{subject}-trace.csv")
        split = stratified_kfold(ds, args.folds, seed)
        predicted = cross_val_predict(ds, model.algorithm, model.params, split, seed)
        counts = _counts_from_predictions(ds.instances, predicted)
        report = metrics(counts)
        confusions.append((subject, counts))
        row = {"subject": subject, "status": "ok",
               "genuine_granted": counts.genuine_granted,
               "genuine_denied": counts.genuine_denied,
               "impostor_granted": counts.impostor_granted,
               "impostor_denied": counts.impostor_denied,
               "algorithm": model.algorithm,
               "cv_accuracy": model.cv_accuracy}
        row.update({k: getattr(report, k) for k in METRIC_COLUMNS})
        rows.append(row)
        print(f"{subject}: accuracy {report.accuracy:.3f} kappa {report.kappa:.3f} "
              f"({model.algorithm})")

    if not confusions:
        return _fail("no user produced a model")

    cohort = cohort_report(confusions)
    stats = {}
    for metric in ("accuracy", "fpr", "fnr"):
        values = np.array([getattr(r, metric) for r in cohort.rows])
        try:
            result = compare_to_chance(values, null_value=0.5, alpha=args.alpha)
            stats[metric] = {
                "metric": metric,
                "test": result.test,
                "branch": "t" if result.test == "t_one_sample" else "wilcoxon",
                "statistic": result.statistic,
                "p": result.p_value,
                "null_value": result.null_value,
                "n": result.n,
                "shapiro_w": result.normality.statistic,
                "shapiro_p": result.normality.p_value,
            }
        except EegAuthError as exc:
            stats[metric] = {"metric": metric, "error": str(exc)}

    _write_report_csv(out_dir / "report.csv", rows, cohort)
    with open(out_dir / "report.json", "w") as fh:
        json.dump({
            "users": rows,
            "mean": cohort.mean.as_dict(),
            "sd": cohort.sd.as_dict(),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "stats.json", "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"mean accuracy {cohort.mean.accuracy:.4f} "
          f"(sd {cohort.sd.accuracy:.4f}) over {len(confusions)} users")
    return EXIT_PARTIAL if failed else EXIT_OK


def _write_report_csv(path, rows, cohort) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row.get(col)) for col in _REPORT_COLUMNS])
        for tag, report in (("MEAN", cohort.mean), ("SD", cohort.sd)):
            summary = {"subject": tag, "status": ""}
            summary.update({k: getattr(report, k) for k in METRIC_COLUMNS})
            writer.writerow([_format_cell(summary.get(col)) for col in _REPORT_COLUMNS])


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return value


# --- service commands -------------------------------------------------------------

def _cmd_serve(args) -> int:
    budget = SearchBudget(args.budget, args.max_evals, args.seed)
    server = service.make_server(
        args.store, port=args.port, budget=budget, server_seed=args.seed,
        enroll_count=args.enroll_count, k_folds=args.folds,
        max_workers=args.workers)
    host, port = server.server_address
    print(f"serving on http://{host}:{port} (store: {args.store})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _post_json(url: str, payload: dict) -> dict:
    body = json.dumps(payload).encode("utf-8")
    request = urllib.request.Request(url, data=body,
                                     headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(request) as response:
            return json.loads(response.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode("utf-8", errors="replace")
        raise EegAuthError(f"server returned {exc.code}: {detail}") from exc
    except urllib.error.URLError as exc:
        raise EegAuthError(f"cannot reach server: {exc.reason}") from exc


def _cmd_enroll(args) -> int:
    instances = load_features_csv(args.features)
    own = [i for i in instances if i.source_subject == args.user]
    if not own:
        return _fail(f"feature file has no rows for subject {args.user!r}")
    if len(own) < args.count:
        return _fail(f"subject {args.user!r} has {len(own)} rows, need {args.count}")
    vectors = [inst.features.tolist() for inst in own[:args.count]]
    payload = {"user_id": args.user, "instances": vectors,
               "client_nonce": args.nonce}
    reply = _post_json(args.server.rstrip("/") + "/api/v1/enroll", payload)
    model = classifiers.model_from_dict(reply["model"])
    if args.out:
        Path(args.out).write_bytes(classifiers.serialize(model))
    summary = reply["summary"]
    print(f"enrolled {args.user}: {summary['algorithm']} "
          f"cv_accuracy {summary['cv_accuracy']:.4f} "
          f"({summary['evaluations']} evaluations, {summary['elapsed_s']:.1f}s)"
          + (f" -> {args.out}" if args.out else ""))
    return EXIT_OK


def _cmd_authenticate(args) -> int:
    try:
        model = classifiers.deserialize(Path(args.model).read_bytes())
    except OSError as exc:
        return _fail(f"cannot read model: {exc}")
    instances = load_features_csv(args.features)
    if not instances:
        return _fail(f"feature file {args.features} has no instances")
    session = np.stack([i.features for i in instances[:args.n]])
    decision = service.authenticate(model, session, threshold=args.threshold)
    print(json.dumps(decision.to_dict(), sort_keys=True))
    return EXIT_OK if decision.outcome == service.GRANT else EXIT_DENY


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegauth",
        description="EEG band-power authentication pipeline",
    )
    parser.add_argument("--config", default=None,
                        help="JSON file of default option values")
    parser.add_argument("--serial", action="store_true", default=True,
                        help="force deterministic serial execution (default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-cohort", help="generate a synthetic EEG cohort")
    p.add_argument("--subjects", type=int, default=15)
    p.add_argument("--duration", type=float, default=30.0, help="seconds per recording")
    p.add_argument("--rate", type=float, default=250.0, help="sample rate in Hz")
    p.add_argument("--separability", type=float, default=1.0)
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--noise-floor", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_cohort)

    p = sub.add_parser("extract-features", help="filter, segment, and extract features")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--segments", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lo", type=float, default=DEFAULT_BAND[0])
    p.add_argument("--hi", type=float, default=DEFAULT_BAND[1])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract_features)

    p = sub.add_parser("evaluate-cohort", help="per-user model selection and metrics")
    p.add_argument("--features", required=True)
    p.add_argument("--budget", type=float, default=60.0, help="seconds per user")
    p.add_argument("--max-evals", type=int, default=None,
                   help="cap evaluations per user (needed for byte-reproducible reports)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--traces", default=None,
                   help="directory for per-user search trace CSVs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate_cohort)

    p = sub.add_parser("serve", help="run the enrollment/authentication server")
    p.add_argument("--store", default=os.environ.get(STORE_ROOT_ENV, "store"))
    p.add_argument("--port", type=int, default=8470)
    p.add_argument("--budget", type=float, default=60.0)
    p.add_argument("--max-evals", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--enroll-count", type=int, default=service.DEFAULT_ENROLL_COUNT)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("enroll", help="enroll a user against a running server")
    p.add_argument("--server", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--count", type=int, default=service.DEFAULT_ENROLL_COUNT)
    p.add_argument("--nonce", default="cli")
    p.add_argument("--out", default=None, help="file for the returned model JSON")
    p.set_defaults(func=_cmd_enroll)

    p = sub.add_parser("authenticate", help="apply a saved model to session features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--threshold", type=float, default=service.DEFAULT_THRESHOLD)
    p.set_defaults(func=_cmd_authenticate)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Pull --config out of argv and fold its values into parser defaults."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    path = argv[at + 1]
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise EegAuthError(f"{path}: config must be a JSON object")
    for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        action.set_defaults(**{k.replace("-", "_"): v for k, v in config.items()
                               if any(k.replace("-", "_") == a.dest
                                      for a in action._actions)})  # noqa: SLF001
    return argv[:at] + argv[at + 2:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except EegAuthError as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
