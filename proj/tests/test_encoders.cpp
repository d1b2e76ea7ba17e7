#include <doctest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "recgoat/encoders.hpp"
#include "recgoat/rng.hpp"

using namespace recgoat;

namespace {

SparseGraph empty_graph(int n) {
    SparseGraph g;
    g.n_nodes = n;
    g.neighbors.resize(n);
    g.weights.resize(n);
    return g;
}

GatParams make_params(int d_in, int d_out, int heads, std::uint64_t seed) {
    auto rng = substream(seed, "gat-test");
    return init_gat_params(d_in, d_out, heads, 0.2, rng);
}

}  // namespace

TEST_CASE("gat_encode on isolated nodes reduces to sigma(W x) per head") {
    auto p = make_params(3, 4, 2, 1);
    Eigen::MatrixXd x(2, 3);
    x << 0.5, -0.2, 1.0, -0.3, 0.8, 0.1;
    auto out = gat_encode(empty_graph(2), x, p);
    const int dh = p.head_dim();
    for (int i = 0; i < 2; ++i)
        for (int h = 0; h < p.heads; ++h) {
            Eigen::RowVectorXd proj = x.row(i) * p.W[h];
            for (int c = 0; c < dh; ++c) {
                const double expected = proj[c] > 0 ? proj[c] : std::expm1(proj[c]);
                CHECK(out(i, h * dh + c) == doctest::Approx(expected).epsilon(1e-12));
            }
        }
}

TEST_CASE("gat attention is uniform over identical neighbors") {
    // all nodes share one feature row, so every edge score ties and the
    // aggregate equals the single projected vector
    auto p = make_params(3, 4, 2, 2);
    Eigen::MatrixXd x(4, 3);
    for (int r = 0; r < 4; ++r) x.row(r) << 0.4, -0.1, 0.7;
    SparseGraph g;
    g.n_nodes = 4;
    g.neighbors = {{1, 2, 3}, {0}, {0, 1}, {}};
    g.weights = {{1, 1, 1}, {1}, {1, 1}, {}};
    GatCache cache;
    auto out = gat_encode(g, x, p, &cache);
    auto iso = gat_encode(empty_graph(4), x, p);
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < p.d_out; ++c) CHECK(out(i, c) == doctest::Approx(iso(i, c)).epsilon(1e-12));
    // attention over node 0's 3 neighbors plus self is 1/4 each
    for (int e = 0; e < 4; ++e) CHECK(cache.alpha[0][e] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gat attention rows sum to one") {
    auto p = make_params(4, 6, 3, 3);
    auto rng = substream(4, "gat-row-sum");
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd x(5, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = gauss(rng);
    SparseGraph g;
    g.n_nodes = 5;
    g.neighbors = {{1, 2}, {0, 3, 4}, {4}, {0, 1, 2, 4}, {2}};
    g.weights = {{1, 1}, {1, 1, 1}, {1}, {1, 1, 1, 1}, {1}};
    GatCache cache;
    gat_encode(g, x, p, &cache);
    for (int h = 0; h < p.heads; ++h) {
        std::size_t cursor = 0;
        for (int i = 0; i < 5; ++i) {
            double sum = 0.0;
            for (std::size_t e = 0; e <= g.neighbors[i].size(); ++e) sum += cache.alpha[h][cursor + e];
            CHECK(std::abs(sum - 1.0) <= 1e-9);
            cursor += g.neighbors[i].size() + 1;
        }
    }
}

TEST_CASE("gat_encode matches the dense reference on a 5-node graph") {
    auto p = make_params(4, 4, 2, 5);
    auto rng = substream(6, "gat-oracle");
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd x(5, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = gauss(rng);
    SparseGraph g;
    g.n_nodes = 5;
    g.neighbors = {{2, 4}, {0, 3}, {1}, {0, 1, 2}, {3}};
    g.weights = {{1, 1}, {1, 1}, {1}, {1, 1, 1}, {1}};
    auto ours = gat_encode(g, x, p);
    auto ref = oracles::dense_gat(g, x, p);
    CHECK((ours - ref).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("gat permutation equivariance") {
    auto p = make_params(3, 4, 2, 7);
    auto rng = substream(8, "gat-perm");
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd x(4, 3);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) x(r, c) = gauss(rng);
    SparseGraph g;
    g.n_nodes = 4;
    g.neighbors = {{1, 3}, {2}, {0, 1}, {2}};
    g.weights = {{1, 1}, {1}, {1, 1}, {1}};
    auto base = gat_encode(g, x, p);

    const std::vector<int> perm = {2, 0, 3, 1};  // new index of old node i
    Eigen::MatrixXd xp(4, 3);
    SparseGraph gp;
    gp.n_nodes = 4;
    gp.neighbors.resize(4);
    gp.weights.resize(4);
    for (int i = 0; i < 4; ++i) {
        xp.row(perm[i]) = x.row(i);
        for (std::int32_t j : g.neighbors[i]) gp.neighbors[perm[i]].push_back(perm[j]);
        std::sort(gp.neighbors[perm[i]].begin(), gp.neighbors[perm[i]].end());
        gp.weights[perm[i]].assign(gp.neighbors[perm[i]].size(), 1.0);
    }
    auto permuted = gat_encode(gp, xp, p);
    for (int i = 0; i < 4; ++i)
        CHECK((permuted.row(perm[i]) - base.row(i)).cwiseAbs().maxCoeff() <= 1e-12);
}

namespace {

BipartiteGraph random_bipartite(int nu, int ni, std::uint64_t seed, int per_user = 4) {
    auto rng = substream(seed, "bip");
    InteractionTable t;
    t.n_users = nu;
    t.n_items = ni;
    std::uniform_int_distribution<int> pi(0, ni - 1);
    std::uniform_real_distribution<double> pr(1.0, 5.0);
    std::set<std::pair<int, int>> seen;
    for (int u = 0; u < nu; ++u) {
        int added = 0;
        while (added < per_user) {
            int i = pi(rng);
            if (seen.insert({u, i}).second) {
                t.records.push_back({u, i, pr(rng), 0});
                ++added;
            }
        }
    }
    return build_interaction_graph(t);
}

}  // namespace

TEST_CASE("lightgcn_propagate identity at L=0 and the forced single-pair case") {
    InteractionTable t;
    t.n_users = 1;
    t.n_items = 1;
    t.records = {{0, 0, 1.0, 0}};
    auto g = build_interaction_graph(t);
    Eigen::MatrixXd eu(1, 3), ei(1, 3);
    eu << 1, 2, 3;
    ei << -1, 0.5, 2;

    auto l0 = lightgcn_propagate(g, eu, ei, 0);
    CHECK((l0.users - eu).norm() == 0.0);
    CHECK((l0.items - ei).norm() == 0.0);

    auto l1 = lightgcn_propagate(g, eu, ei, 1);
    CHECK((l1.users - 0.5 * (eu + ei)).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((l1.items - 0.5 * (eu + ei)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("lightgcn_propagate matches the dense adjacency-power oracle") {
    auto g = random_bipartite(10, 10, 21);
    auto rng = substream(22, "lg-emb");
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd eu(10, 6), ei(10, 6);
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 6; ++c) {
            eu(r, c) = gauss(rng);
            ei(r, c) = gauss(rng);
        }
    auto ours = lightgcn_propagate(g, eu, ei, 3);
    auto [ru, ri] = oracles::dense_lightgcn(g, eu, ei, 3);
    CHECK((ours.users - ru).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((ours.items - ri).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("lightgcn_propagate is linear in the embeddings") {
    auto g = random_bipartite(8, 9, 23);
    auto rng = substream(24, "lg-lin");
    std::normal_distribution<double> gauss(0, 1);
    auto rand_mat = [&](int r, int c) {
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = gauss(rng);
        return m;
    };
    Eigen::MatrixXd xu = rand_mat(8, 4), yu = rand_mat(8, 4), xi = rand_mat(9, 4), yi = rand_mat(9, 4);
    const double a = 0.7, b = -1.3;
    auto combo = lightgcn_propagate(g, a * xu + b * yu, a * xi + b * yi, 2);
    auto fx = lightgcn_propagate(g, xu, xi, 2);
    auto fy = lightgcn_propagate(g, yu, yi, 2);
    CHECK((combo.users - (a * fx.users + b * fy.users)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((combo.items - (a * fx.items + b * fy.items)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("gat_encode_stack chains layers") {
    auto rng = substream(9, "gat-stack");
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd x(4, 3);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) x(r, c) = gauss(rng);
    SparseGraph g;
    g.n_nodes = 4;
    g.neighbors = {{1}, {0, 2}, {3}, {0}};
    g.weights = {{1}, {1, 1}, {1}, {1}};
    auto l1 = init_gat_params(3, 4, 2, 0.2, rng);
    auto l2 = init_gat_params(4, 4, 2, 0.2, rng);
    auto stacked = gat_encode_stack(g, x, {l1, l2});
    auto manual = gat_encode(g, gat_encode(g, x, l1), l2);
    CHECK((stacked - manual).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS(static_cast<void>(gat_encode_stack(g, x, {})));
}

TEST_CASE("lightgcn permutation equivariance over relabeled users") {
    auto rng = substream(25, "lg-perm");
    InteractionTable t;
    t.n_users = 5;
    t.n_items = 4;
    t.records = {{0, 0, 2.0, 0}, {0, 1, 1.0, 0}, {1, 1, 3.0, 0}, {2, 2, 1.0, 0},
                 {3, 3, 4.0, 0}, {4, 0, 1.0, 0}, {4, 3, 2.0, 0}};
    auto g = build_interaction_graph(t);
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd eu(5, 3), ei(4, 3);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c) eu(r, c) = gauss(rng);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) ei(r, c) = gauss(rng);
    auto base = lightgcn_propagate(g, eu, ei, 2);

    const std::vector<int> perm = {3, 1, 4, 0, 2};
    InteractionTable tp = t;
    for (auto& r : tp.records) r.user_id = perm[r.user_id];
    auto gp = build_interaction_graph(tp);
    Eigen::MatrixXd eup(5, 3);
    for (int r = 0; r < 5; ++r) eup.row(perm[r]) = eu.row(r);
    auto permuted = lightgcn_propagate(gp, eup, ei, 2);
    for (int r = 0; r < 5; ++r)
        CHECK((permuted.users.row(perm[r]) - base.users.row(r)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((permuted.items - base.items).cwiseAbs().maxCoeff() <= 1e-12);
}
