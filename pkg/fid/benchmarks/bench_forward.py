"""Forward-pass scaling: wall time versus pair count at fixed per-pair length.

The encoder runs once per pair, so encoder compute should grow linearly with
the pair count.  This harness times the full forward (fuse + one decode step)
for k = 1..5 identical-length pairs and prints the time ratio against k=1;
a ratio near k confirms the linear scaling that the exact token counter in
the test suite asserts structurally.

Usage: python3 benchmarks/bench_forward.py [--repeats 30] [--words 120]
"""

from __future__ import annotations

import argparse
import statistics
import time

import torch

from fidreader.inputs import build_input
from fidreader.model import FidModel, ModelConfig
from fidreader.tokenizer import BOS_ID, HashTokenizer


def time_forward(model: FidModel, fid_input, repeats: int) -> float:
    target = torch.tensor([BOS_ID], dtype=torch.long)
    samples = []
    with torch.no_grad():
        model.forward(fid_input, target)  # warm up
        for _ in range(repeats):
            start = time.perf_counter()
            model.forward(fid_input, target)
            samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--words", type=int, default=120, help="Words per context.")
    args = parser.parse_args()

    torch.set_num_threads(1)
    config = ModelConfig(max_len=256)
    model = FidModel(config).eval()
    tokenizer = HashTokenizer(config.vocab_size)
    context = " ".join(f"word{i}" for i in range(args.words))

    print(f"{'pairs':>5}  {'tokens':>7}  {'median ms':>10}  {'vs k=1':>7}")
    base = None
    for k in range(1, 6):
        fid_input = build_input(
            "Which option applies to the measured case?",
            ["first", "second", "third", "fourth"],
            [context] * k,
            tokenizer=tokenizer,
            budget=config.max_len,
        )
        median = time_forward(model, fid_input, args.repeats)
        tokens = sum(len(p.token_ids) for p in fid_input.pairs)
        base = base or median
        print(f"{k:>5}  {tokens:>7}  {median * 1e3:>10.2f}  {median / base:>6.2f}x")


if __name__ == "__main__":
    main()
