"""File-emitting command line interface.

Subcommands bind the pipeline end to end: spectrogram extraction, synthetic
dataset generation, training, evaluation, Grad-CAM heatmaps, and ad-insertion
selection. A JSON config file can mirror any flag; explicit flags win. Every
run writes its fully resolved configuration next to its outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="melharm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="JSON file whose keys mirror flags (flags win)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrogram",
                       help="write mel (and optionally STFT) grids per 6 s clip")
    p.add_argument("--audio", required=True, help="input WAV file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stft", action="store_true", help="also write power spectrogram grids")
    p.add_argument("--pgm", action="store_true", help="also write PGM renders")

    p = sub.add_parser("synth",
                       help="generate the labeled synthetic WAV dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-quadrant", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="harmonics")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5,
                   help="song-level stratified folds; fold 0 is held out")
    p.add_argument("--balance-cap", type=float, default=1.5)
    p.add_argument("--kfold", action="store_true",
                   help="full cross-validation over all folds instead of a single split")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcam",
                       help="heatmaps and brightness report for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--render", action="store_true", help="also write PGM heatmap renders")

    p = sub.add_parser("insert",
                       help="choose the JS-closest insertion slot per content/ad pair")
    p.add_argument("--content-preds", required=True,
                   help="predictions CSV; entity_id is '<content>:<slot>'")
    p.add_argument("--ad-preds", required=True, help="predictions CSV; entity_id is the ad id")
    p.add_argument("--out", required=True, help="output JSON plan")
    p.add_argument("--outcomes", help="optional CSV: content,ad,slot,skip_rate,recall_rate")
    return parser


def _apply_config(argv, parser):
    """Merge a --config JSON file under the flags: config values become
    defaults, explicit flags override them."""
    # find --config by hand so subcommand requirements are not tripped yet
    cfg_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif a.startswith("--config="):
            cfg_path = a.split("=", 1)[1]
    if cfg_path is None:
        return argv
    with open(cfg_path) as fh:
        cfg = json.load(fh)
    extra = []
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, value in cfg.items():
        flag = "--" + key.replace("_", "-")
        if flag in given or flag == "--config":
            continue
        if isinstance(value, bool):
            if value:
                extra.append(flag)
        else:
            extra.extend([flag, str(value)])
    return argv + extra


def _write_resolved_config(out_dir, args):
    os.makedirs(out_dir, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k != "config"}
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)


def _cmd_spectrogram(args):
    from .audio_io import read_wav, resample, segment_clips, CANONICAL_RATE
    from .spectro import (
        StftConfig, build_mel_filterbank, export_pgm, mel_spectrogram,
        save_grid, stft, to_decibel_normalized,
    )

    _write_resolved_config(args.out, args)
    w = read_wav(args.audio)
    if w.sample_rate_hz != CANONICAL_RATE:
        w = resample(w, CANONICAL_RATE)
    clips = segment_clips(w, 6.0)
    if not clips:
        raise ValueError("input shorter than one 6-second clip")
    cfg = StftConfig()
    bank = build_mel_filterbank()
    for i, clip in enumerate(clips):
        power = stft(clip, cfg)
        mel = to_decibel_normalized(mel_spectrogram(power, bank))
        base = os.path.join(args.out, f"clip{i:04d}_mel")
        save_grid(base, mel.grid, mel.scale, mel.bin_hz, mel.frame_hop_s)
        if args.pgm:
            export_pgm(base + ".pgm", mel.grid[::-1])  # low bands at the bottom
        if args.stft:
            sbase = os.path.join(args.out, f"clip{i:04d}_stft")
            save_grid(sbase, power.grid, "power", power.bin_hz, power.frame_hop_s)
            if args.pgm:
                export_pgm(sbase + ".pgm", np.log10(np.maximum(power.grid, 1e-10))[::-1])
    print(f"wrote {len(clips)} clip(s) to {args.out}")
    return 0


def _cmd_synth(args):
    from .dataset import synth_dataset

    _write_resolved_config(args.out, args)
    clipset = synth_dataset(args.per_quadrant, args.seed, args.out)
    print(f"wrote {len(clipset)} clips and manifest.csv to {args.out}")
    return 0


def _train_one(x, y, train_idx, test_idx, spec, cfg):
    from .model import train

    return train(x[train_idx], y[train_idx], spec, cfg,
                 x_val=x[test_idx], y_val=y[test_idx])


def _cmd_train(args):
    from .dataset import features_for_clipset, load_manifest, ClipSet
    from .model import (
        ArchitectureSpec, TrainConfig, balance_subsample, evaluate,
        predict_label, save_checkpoint, stratified_song_folds,
    )

    _write_resolved_config(args.out, args)
    clipset = load_manifest(args.manifest)
    records = balance_subsample(clipset.records, cap=args.balance_cap, seed=args.seed)
    clipset = ClipSet(records=tuple(records), provenance=clipset.provenance)
    x, y = features_for_clipset(clipset)

    spec = ArchitectureSpec(variant=args.variant)
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        fold_count=args.folds,
        balance_cap=args.balance_cap,
    )
    folds = stratified_song_folds(clipset.records, k=args.folds, seed=args.seed)
    run_folds = folds if args.kfold else folds[:1]

    log_path = os.path.join(args.out, "training_log.ndjson")
    with open(log_path, "w") as log_fh:
        for fold_no, (train_idx, test_idx) in enumerate(run_folds):
            model, log = _train_one(x, y, train_idx, test_idx, spec, cfg)
            for entry in log:
                log_fh.write(json.dumps({"fold": fold_no, **entry}, sort_keys=True) + "\n")
            report = evaluate(predict_label(model, x[test_idx]), y[test_idx])
            ckpt = os.path.join(args.out, f"fold{fold_no}.ckpt")
            save_checkpoint(ckpt, model, seed=cfg.seed,
                            metrics={"val_f1": report.weighted_f1,
                                     "val_accuracy": report.accuracy})
            print(f"fold {fold_no}: held-out accuracy {report.accuracy:.3f} "
                  f"F1 {report.weighted_f1:.3f} -> {ckpt}")
    return 0


def _load_features(manifest_path):
    from .dataset import features_for_clipset, load_manifest

    clipset = load_manifest(manifest_path)
    x, y = features_for_clipset(clipset)
    return clipset, x, y


def _cmd_eval(args):
    from .model import evaluate, load_checkpoint, predict_label

    _write_resolved_config(args.out, args)
    model, _ = load_checkpoint(args.checkpoint)
    _, x, y = _load_features(args.manifest)
    report = evaluate(predict_label(model, x), y)
    with open(os.path.join(args.out, "eval_report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    text = report.to_text()
    with open(os.path.join(args.out, "eval_report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def _cmd_gradcam(args):
    from .explain import brightness_report, grad_cam, render_heatmap
    from .model import load_checkpoint
    from .spectro import save_grid

    _write_resolved_config(args.out, args)
    model, _ = load_checkpoint(args.checkpoint)
    clipset, x, y = _load_features(args.manifest)
    ids = [f"{rec.song_id}@{rec.start_s:g}s" for rec in clipset.records]

    report = brightness_report(x, y, model, clip_ids=ids)
    with open(os.path.join(args.out, "brightness_report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    for grid, label, cid in zip(x, y, ids):
        h = grad_cam(grid, model, int(label), clip_id=cid)
        safe = cid.replace("/", "_").replace("@", "_")
        base = os.path.join(args.out, f"heatmap_{safe}_q{label + 1}")
        save_grid(base, h.grid.astype(np.float32), "heatmap",
                  bin_hz=0.0, frame_hop_s=512 / 44100)
        if args.render:
            render_heatmap(base + ".pgm", h)
    verdicts = report.to_dict()["verdicts"]
    print("brightness means:", np.array2string(report.means, precision=2))
    print("ordering verdicts:", verdicts)
    return 0


def _cmd_insert(args):
    from .adinsert import (
        InsertionPlan, load_outcomes_csv, load_predictions_csv, plan_report,
        report_to_text, save_plans_json, select_insertion,
    )

    content = load_predictions_csv(args.content_preds)
    ads = load_predictions_csv(args.ad_preds)

    slots_by_content = {}
    for entity_id, dist in content.items():
        try:
            content_id, slot = entity_id.rsplit(":", 1)
            slot = int(slot)
        except ValueError:
            raise ValueError(f"content entity_id {entity_id!r} is not '<content>:<slot>'")
        slots_by_content.setdefault(content_id, {})[slot] = dist

    plans = []
    for content_id, slots in sorted(slots_by_content.items()):
        ordered = [slots[i] for i in sorted(slots)]
        for ad_id, ad_dist in sorted(ads.items()):
            plans.append(select_insertion(ordered, ad_dist,
                                          content_id=content_id, ad_id=ad_id))

    outcomes = load_outcomes_csv(args.outcomes) if args.outcomes else None
    report = plan_report({"melharm": plans}, outcomes=outcomes)
    save_plans_json(args.out, plans, report=report)
    print(report_to_text(report))
    return 0


_COMMANDS = {
    "spectrogram": _cmd_spectrogram,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcam": _cmd_gradcam,
    "insert": _cmd_insert,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config(argv, parser)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1

    try:
        with np.errstate(over="raise", invalid="raise"):
            return _COMMANDS[args.command](args)
    except (FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 3
    except (ValueError, OSError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
