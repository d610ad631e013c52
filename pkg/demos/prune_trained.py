"""Train a small model, derive diagonal block masks and measure what pruning costs.

Prints the counted block reduction per layer and the NDCG@10 kept under each
pruning ratio.
"""

from dualrec.data import query_windows, split_leave_one_out, synth_generate
from dualrec.evaluation import evaluate_ranks, metrics
from dualrec.model import ModelConfig, layer_keys
from dualrec.positional import flops_count, generate_sparse_mask, materialize
from dualrec.training import TrainConfig, train

STRIDE = 8


def main() -> None:
    split = split_leave_one_out(synth_generate(2000, 200, 0))
    cfg = ModelConfig()
    params = train(split, cfg, TrainConfig(epochs=6, seed=0)).best_params
    queries = query_windows(split.test, cfg.n)
    base = metrics(evaluate_ranks(cfg, params, queries), 10).ndcg
    print(f"unpruned NDCG@10 {base:.4f}")
    for tau in (0.25, 0.5, 0.6, 0.75):
        masks = [generate_sparse_mask(materialize(params[layer_keys(l)["pos_w"]], cfg.n), STRIDE, tau)
                 for l in range(cfg.num_layers)]
        cuts = [flops_count(cfg.n, STRIDE, m)[2] for m in masks]
        ndcg = metrics(evaluate_ranks(cfg, params, queries, masks), 10).ndcg
        print(f"tau {tau:.2f}: block cut per layer {', '.join(f'{c:.1f}%' for c in cuts)}; "
              f"NDCG@10 {ndcg:.4f} ({ndcg / base:.1%} kept)")


if __name__ == "__main__":
    main()
