"""Train pairwise and unary scorers, then compare them with cosine potentials.

A shortened version of the acceptance experiment (fewer steps, fewer test
episodes), so it finishes in about a minute.
"""
from cofind import GeneratorConfig, Potentials, TrainConfig, cosine_baseline_provider, generate_episodes, train
from cofind.bench import BenchConfig, grid_search_eta, run_benchmark
from cofind.synth import iter_episodes

cfg = GeneratorConfig(dim=4, noise_sigma=0.05).with_separation(3.0)
tc = TrainConfig(learning_rate=2.0, num_steps=6000, decay_every=1500, init_scale=3.0)

pairwise = train("pairwise", iter_episodes(cfg, "train"), tc)
unary = train("unary", iter_episodes(cfg, "train", start=10**6), tc)
print(f"pairwise loss {pairwise.trace[0][1]:.3f} -> {pairwise.trace[-1][1]:.3f}; "
      f"unary temperature {unary.model.nu:.2f}")

learned = Potentials(pairwise.model, unary.model, "softmax")
cosine = cosine_baseline_provider(cfg.dim)
val = generate_episodes(cfg, "val", 40)
grid = [0.0, 0.5, 1.0, 1.5, 2.0]
etas = {"greedy": grid_search_eta(val, learned, "greedy", grid),
        "cosine-greedy": grid_search_eta(val, cosine, "greedy", grid)}

test = generate_episodes(cfg, "test", 200)
report = run_benchmark(test, learned, ["greedy", "loopy-bp", "pairwise-only", "cosine-greedy"],
                       BenchConfig(k=100), baseline=cosine, etas=etas)
for row in report.rows:
    print(f"{row.method:>14}: success {row.success_mean:.3f} +/- {row.success_ci:.3f}  "
          f"time {row.seconds_mean * 1e3:.1f} ms")
