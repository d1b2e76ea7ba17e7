#include <benchmark/benchmark.h>

#include <random>

#include "recgoat/alignment.hpp"
#include "recgoat/encoders.hpp"
#include "recgoat/graphs.hpp"
#include "recgoat/rng.hpp"
#include "recgoat/synthetic.hpp"
#include "recgoat/trainer.hpp"

using namespace recgoat;

namespace {

Eigen::MatrixXd rand_mat(int r, int c, std::uint64_t seed) {
    auto rng = substream(seed, "bench");
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = gauss(rng);
    return m;
}

void BM_Sinkhorn(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    Eigen::MatrixXd c = rand_mat(d, d, 1).cwiseAbs();
    const Eigen::VectorXd marg = Eigen::VectorXd::Constant(d, 1.0 / d);
    for (auto _ : state) {
        auto res = sinkhorn(c, marg, marg, 0.05 * c.mean(), 200, 1e-6);
        benchmark::DoNotOptimize(res.cost);
    }
}
BENCHMARK(BM_Sinkhorn)->Arg(16)->Arg(32)->Arg(64);

void BM_KnnGraph(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    FeatureMatrix f = FeatureMatrix::from_dense(rand_mat(n, 64, 2));
    for (auto _ : state) {
        auto g = build_knn_graph(f, 10, 2);
        benchmark::DoNotOptimize(g.n_nodes);
    }
}
BENCHMARK(BM_KnnGraph)->Arg(500)->Arg(1000)->Arg(2000);

void BM_GatEncode(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    FeatureMatrix f = FeatureMatrix::from_dense(rand_mat(n, 64, 3));
    auto g = build_knn_graph(f, 10, 2);
    auto rng = substream(4, "bench-gat");
    GatParams p = init_gat_params(64, 32, 2, 0.2, rng);
    Eigen::MatrixXd x = f.to_dense();
    for (auto _ : state) {
        auto out = gat_encode(g, x, p);
        benchmark::DoNotOptimize(out.sum());
    }
}
BENCHMARK(BM_GatEncode)->Arg(1000)->Arg(2000);

void BM_LightGcn(benchmark::State& state) {
    SyntheticConfig cfg;
    cfg.n_users = 2000;
    cfg.n_items = 1000;
    cfg.n_clusters = 5;
    cfg.d_text = 16;
    cfg.d_visual = 16;
    cfg.interactions_per_user = 15;
    auto data = generate_synthetic(cfg, 5);
    auto g = build_interaction_graph(data.interactions);
    Eigen::MatrixXd eu = rand_mat(cfg.n_users, 32, 6), ei = rand_mat(cfg.n_items, 32, 7);
    for (auto _ : state) {
        auto out = lightgcn_propagate(g, eu, ei, static_cast<int>(state.range(0)));
        benchmark::DoNotOptimize(out.users.sum());
    }
}
BENCHMARK(BM_LightGcn)->Arg(2)->Arg(3);

void BM_InfoNce(benchmark::State& state) {
    const int batch = static_cast<int>(state.range(0));
    Eigen::MatrixXd a = rand_mat(batch, 32, 8), p = rand_mat(batch, 32, 9);
    for (auto _ : state) benchmark::DoNotOptimize(infonce_pair_loss(a, p, 0.2));
}
BENCHMARK(BM_InfoNce)->Arg(128)->Arg(256)->Arg(512);

void BM_CostMatrix(benchmark::State& state) {
    const int batch = static_cast<int>(state.range(0));
    Eigen::MatrixXd a = rand_mat(batch, 32, 10), b = rand_mat(batch, 32, 11);
    for (auto _ : state) benchmark::DoNotOptimize(cost_matrix(a, b, 1.0).sum());
}
BENCHMARK(BM_CostMatrix)->Arg(128)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
