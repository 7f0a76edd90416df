# main.py
import argparse
import asyncio
import logging
import os
import sys
import time
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from scipy.stats import pearsonr

from oefd.checkpoint import load_checkpoint, save_checkpoint
from oefd.config import EmbedConfig, EvalConfig, GenDataConfig, GradCheckConfig, RunConfig, ToyConfig, \
    TrainRunConfig, load_run_config
from oefd.datagen import SampleArrays, as_arrays, generate, make_cross_age_split, make_pairs
from oefd.errors import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, OefdError, ShapeError
from oefd.evaluation import EmbeddingSet, distractor_rank1, kfold_accuracy, leave_one_out_rank1, pair_scores, \
    rank1_identification, roc_auc
from oefd.extraction import extract_dataset, extract_embeddings, extract_pairs, extract_split
from oefd.gradcheck import run_grad_check
from oefd.loading import SCATTER_COLUMNS, SUMMARY_COLUMNS, write_dataset, write_embeddings, \
    write_metrics_log, write_pairs, write_report, write_split, write_tsv
from oefd.losses import predict_age
from oefd.model import forward
from oefd.numerics import row_norms
from oefd.schemas import LOSS_MODES, ErrorRecord, EvalReport
from oefd.training import TrainResult, embed, relabel_dense, train

logger = logging.getLogger("oefd")

GRAD_CHECK_COLUMNS = ["config", "m", "s", "lambda", "anneal_weight", "worst_error", "worst_part", "passed"]
ROC_COLUMNS = ["fpr", "tpr"]


def _out(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out, name)


# --- Commands ---

def cmd_gen_data(cfg: GenDataConfig) -> int:
    samples = generate(cfg.synthetic_spec())
    split = make_cross_age_split(samples, cfg.test_fraction, cfg.seed)
    pairs = make_pairs(samples, cfg.num_positive, cfg.num_negative, cfg.seed)
    write_dataset(_out(cfg, "dataset.txt"), samples)
    write_split(_out(cfg, "split.txt"), split)
    write_pairs(_out(cfg, "pairs.txt"), pairs)
    print(f"Samples: {len(samples)} ({cfg.num_identities} identities x {cfg.samples_per_identity})")
    print(f"Split: train {len(split.train)}, gallery {len(split.gallery)}, probe {len(split.probe)}")
    print(f"Pairs: {sum(p.same for p in pairs)} positive, {sum(not p.same for p in pairs)} negative")
    return EXIT_OK


def _training_data(cfg: TrainRunConfig) -> SampleArrays:
    samples = extract_dataset(cfg.dataset)
    if not samples:
        raise ShapeError(f"{cfg.dataset} holds no samples")
    data = as_arrays(samples)
    if cfg.split:
        split = extract_split(cfg.split)
        if any(i >= len(data) for i in split.train):
            raise ShapeError(f"split refers past the {len(data)} samples of the dataset", field_name="split")
        data = data.subset(split.train)
        data = SampleArrays(data.inputs, relabel_dense(data.identities), data.ages)
    return data


def cmd_train(cfg: TrainRunConfig) -> int:
    data = _training_data(cfg)
    spec = cfg.encoder_spec(data.inputs.shape[1], cfg.embedding_dim)
    result = train(data, spec, cfg.margin(), cfg.multitask(), cfg.train_config(cfg.loss_mode, cfg.freeze_age_head))
    save_checkpoint(result.checkpoint, _out(cfg, "checkpoint.json"))
    write_metrics_log(_out(cfg, "metrics.csv"), [row.model_dump() for row in result.metrics])
    print(f"Trained {cfg.loss_mode} for {cfg.epochs} epochs ({result.checkpoint.step} steps) "
          f"in {result.duration:.2f} seconds.")
    if result.metrics:
        last = result.metrics[-1]
        print(f"Final loss {last.total_loss:.6f}, train accuracy {last.train_accuracy:.4f}")
    return EXIT_OK


def cmd_embed(cfg: EmbedConfig) -> int:
    ckpt = load_checkpoint(cfg.checkpoint)
    data = as_arrays(extract_dataset(cfg.dataset))
    if len(data) == 0:
        raise ShapeError(f"{cfg.dataset} holds no samples")
    embeddings = embed(ckpt, data.inputs)
    write_embeddings(_out(cfg, "embeddings.txt"), embeddings, data.identities, data.ages)
    print(f"Embedded {len(data)} samples into {embeddings.shape[1]} dimensions.")
    return EXIT_OK


def _gallery_and_probe(cfg: EvalConfig, embeddings: EmbeddingSet):
    if cfg.split:
        split = extract_split(cfg.split)
        return embeddings.subset(split.gallery), embeddings.subset(split.probe)
    if cfg.probe:
        return embeddings, extract_embeddings(cfg.probe)
    return embeddings, embeddings


def _pair_report(cfg: EvalConfig, embeddings: EmbeddingSet) -> EvalReport:
    pairs = extract_pairs(cfg.pairs)
    scores = pair_scores(embeddings.embeddings, [(p.index_a, p.index_b, p.same) for p in pairs])
    if cfg.protocol == "kfold":
        return kfold_accuracy(scores, cfg.folds or 10)
    curve = roc_auc(scores)
    write_tsv(_out(cfg, "roc.tsv"), ROC_COLUMNS, curve.points)
    report = EvalReport(protocol="roc", metrics={"auc": curve.auc},
                        counts={"pairs": len(scores), "points": len(curve.points)})
    if cfg.folds:
        folded = kfold_accuracy(scores, cfg.folds)
        report.metrics.update(folded.metrics)
        report.per_fold = folded.per_fold
        report.config["folds"] = cfg.folds
    return report


def cmd_eval(cfg: EvalConfig) -> int:
    cfg.check_protocol_args()
    embeddings = extract_embeddings(cfg.embeddings)
    if cfg.protocol in ("roc", "kfold"):
        report = _pair_report(cfg, embeddings)
    elif cfg.protocol == "loo_rank1":
        report = leave_one_out_rank1(embeddings)
    else:
        gallery, probe = _gallery_and_probe(cfg, embeddings)
        if cfg.protocol == "rank1":
            report = rank1_identification(gallery, probe, cfg.subjects)
        else:
            distractors = extract_embeddings(cfg.distractors).embeddings
            report = distractor_rank1(gallery, distractors, probe, cfg.subjects)
    write_report(_out(cfg, "report.json"), report)
    headline = ", ".join(f"{k} {v:.6f}" for k, v in report.metrics.items())
    print(f"{report.protocol}: {headline}")
    return EXIT_OK


# --- Toy experiment ---

async def train_mode_async(data: SampleArrays, cfg: ToyConfig, mode: str) -> TrainResult:
    loop = asyncio.get_event_loop()
    start_time = time.time()
    spec = cfg.encoder_spec(data.inputs.shape[1], 2)
    result = await loop.run_in_executor(
        None, train, data, spec, cfg.margin(), cfg.multitask(), cfg.train_config(mode, freeze_age_head=True)
    )
    print(f"{mode} training completed in {time.time() - start_time:.2f} seconds.")
    return result


def _norm_age_pearson(norms: np.ndarray, ages: np.ndarray) -> float:
    if np.ptp(norms) == 0.0 or np.ptp(ages) == 0.0:
        logger.warning("Norm-age correlation is undefined for constant inputs")
        return float('nan')
    return float(pearsonr(norms, ages)[0])


async def toy_fig3_async(cfg: ToyConfig) -> int:
    data = as_arrays(generate(cfg.synthetic_spec()))
    results = await asyncio.gather(*(train_mode_async(data, cfg, mode) for mode in LOSS_MODES))
    summary = []
    for mode, result in zip(LOSS_MODES, results):
        ckpt = result.checkpoint
        embeddings = forward(ckpt.encoder, data.inputs)
        norms = row_norms(embeddings)
        accuracy = result.metrics[-1].train_accuracy if result.metrics else float('nan')
        pearson = _norm_age_pearson(norms, data.ages)
        age_mae = float(np.mean(np.abs(predict_age(norms, ckpt.age_head) - data.ages)))
        rows = [(float(e[0]), float(e[1]), int(i), float(a), float(n))
                for e, i, a, n in zip(embeddings, data.identities, data.ages, norms)]
        write_tsv(_out(cfg, f"scatter_{mode}.tsv"), SCATTER_COLUMNS, rows)
        summary.append((mode, float(accuracy), pearson, age_mae))
    write_tsv(_out(cfg, "summary.tsv"), SUMMARY_COLUMNS, summary)

    print("\n--- Toy Summary ---")
    for mode, accuracy, pearson, age_mae in summary:
        print(f"{mode:>10}: train accuracy {accuracy:.4f}, norm-age pearson {pearson:.4f}, age MAE {age_mae:.3f}")
    return EXIT_OK


def cmd_toy_fig3(cfg: ToyConfig) -> int:
    return asyncio.run(toy_fig3_async(cfg))


def cmd_grad_check(cfg: GradCheckConfig) -> int:
    report = run_grad_check(seed=cfg.seed, h=cfg.h, tolerance=cfg.tolerance, corrupt=cfg.corrupt_gradient)
    rows = []
    for r in report.results:
        worst_part = max(r.errors, key=r.errors.get)
        rows.append((r.name, r.m, r.s, r.lam, r.anneal_weight, r.worst, worst_part, "pass" if r.passed else "FAIL"))
        print(f"{'pass' if r.passed else 'FAIL'}  {r.worst:.3e}  {r.name}")
    write_tsv(_out(cfg, "grad_check.tsv"), GRAD_CHECK_COLUMNS, rows)
    print(f"{len(report.results) - len(report.failures)}/{len(report.results)} configurations "
          f"below {report.tolerance:g}")
    if not report.passed:
        for failure in report.failures:
            print(f"Failing configuration: {failure.name} (worst {failure.worst:.3e})", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS: Dict[str, Callable[..., int]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "toy-fig3": cmd_toy_fig3,
    "grad-check": cmd_grad_check,
}


# --- Entry point ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oefd", description="Orthogonal embedding experiments.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", help="flat key=value config file")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--out", help="output directory")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return parser


def report_error(reference: str, error: Exception, exit_code: int, field_name: Optional[str] = None,
                 original_value=None) -> int:
    record = ErrorRecord(
        reference=reference,
        field_name=field_name,
        error_type=getattr(error, "error_type", type(error).__name__),
        case_description=str(error),
        original_value=original_value,
        exit_code=exit_code,
    )
    print(record.model_dump_json(), file=sys.stderr)
    return exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    start_total_time = time.time()
    try:
        cfg = load_run_config(args.command, args.config, args.overrides, args.seed, args.out)
        code = COMMANDS[args.command](cfg)
    except OefdError as e:
        return report_error(args.command, e, e.exit_code, e.field_name, getattr(e, "original_value", None))
    except ValidationError as e:
        first_error = e.errors()[0]
        field = str(first_error['loc'][0]) if first_error['loc'] else None
        return report_error(args.command, e, EXIT_CONFIG, field)
    except OSError as e:
        return report_error(args.command, e, EXIT_IO, getattr(e, "filename", None))
    logger.info("%s finished in %.2f seconds", args.command, time.time() - start_total_time)
    return code


if __name__ == "__main__":
    sys.exit(main())
