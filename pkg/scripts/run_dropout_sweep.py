"""Dropout-rate ablation for the contrastive fine-tuning stage.

For every model seed: MLM-pretrain a base encoder once, fine-tune it at
each dropout value in --grid, and score WiC dev accuracy and AUC. The
combined table goes to --out-dir/sweep.csv; the script prints one line
per seed and reports for how many seeds the accuracy peaks strictly
inside the grid rather than at an endpoint.
"""

import argparse
import csv
import sys
import time
from pathlib import Path

from wicrep import (
    EncoderConfig,
    LayerSpec,
    MlmConfig,
    Rng,
    TrainConfig,
    build_vocab,
    finetune,
    init_model,
    mlm_pretrain,
)
from wicrep.evaluation import auc, pair_similarities, threshold_search
from wicrep.syncorpus import CorpusSpec, default_sense_specs, gen_corpus, gen_wic_pairs


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--grid", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 0.9])
    p.add_argument("--corpus-seed", type=int, default=100)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--n-sentences", type=int, default=2000)
    p.add_argument("--n-ambiguous", type=int, default=10)
    p.add_argument("--n-senses", type=int, default=2)
    p.add_argument("--n-topical", type=int, default=6)
    p.add_argument("--quota", type=int, default=50)
    p.add_argument("--n-filler-words", type=int, default=300)
    p.add_argument("--n-dev-pairs", type=int, default=600)
    p.add_argument("--mlm-epochs", type=int, default=2)
    p.add_argument("--mlm-lr", type=float, default=1e-3)
    p.add_argument("--ft-epochs", type=int, default=6)
    p.add_argument("--ft-lr", type=float, default=2e-4)
    p.add_argument("--mask-k", type=int, default=1)
    p.add_argument("--temperature", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=100)
    return p.parse_args(argv)


def interior_max(grid: list[float], accs: list[float]) -> bool:
    """Strict: the best interior point beats both endpoints."""
    if len(grid) < 3:
        return False
    return max(accs[1:-1]) > max(accs[0], accs[-1])


def main(argv=None) -> int:
    args = parse_args(argv)
    if sorted(args.grid) != args.grid or len(set(args.grid)) != len(args.grid):
        raise SystemExit("--grid must be strictly increasing")
    args.out_dir.mkdir(parents=True, exist_ok=True)

    spec = CorpusSpec(
        sense_specs=default_sense_specs(
            args.n_ambiguous, args.n_senses, args.n_topical, args.quota
        ),
        n_sentences=args.n_sentences,
        sentence_len_range=(8, 14),
        n_filler_words=args.n_filler_words,
    )
    corpus = gen_corpus(spec, seed=args.corpus_seed)
    dev = gen_wic_pairs(corpus, args.n_dev_pairs, Rng(args.corpus_seed).child(1))
    vocab = build_vocab(corpus.sentences)
    labels = [p.label for p in dev]
    feature_spec = LayerSpec(n_layers=4)

    def dev_metrics(model) -> tuple[float, float]:
        sims = pair_similarities(model, dev, feature_spec)
        return threshold_search(sims, labels)[1], auc(sims, labels)

    rows = []
    n_interior = 0
    for seed in args.seeds:
        t0 = time.time()
        model = init_model(EncoderConfig(dropout=0.1), vocab, seed=seed)
        base, _ = mlm_pretrain(
            model, corpus.sentences,
            MlmConfig(epochs=args.mlm_epochs, lr=args.mlm_lr, seed=seed),
        )
        accs = []
        for d in args.grid:
            tuned, _ = finetune(
                base, corpus.sentences,
                TrainConfig(
                    seed=seed, epochs=args.ft_epochs, lr=args.ft_lr, dropout=d,
                    mask_k=args.mask_k, temperature=args.temperature,
                    batch_size=args.batch_size,
                ),
            )
            acc, roc = dev_metrics(tuned)
            accs.append(acc)
            rows.append((seed, "dropout", d, acc, roc))
        hit = interior_max(args.grid, accs)
        n_interior += hit
        curve = " ".join(f"{d}:{a:.3f}" for d, a in zip(args.grid, accs))
        print(f"seed {seed}: {curve} | interior max: {'yes' if hit else 'no'} "
              f"| {time.time() - t0:.0f}s", flush=True)

    with open(args.out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["seed", "knob", "value", "accuracy", "auc"])
        for seed, knob, value, acc, roc in rows:
            w.writerow([seed, knob, value, f"{acc:.10g}", f"{roc:.10g}"])

    print(f"interior maximum on {n_interior}/{len(args.seeds)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
