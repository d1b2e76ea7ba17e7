#include "recgoat/graphs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>

namespace recgoat {

void SparseGraph::validate() const {
    if (static_cast<std::int32_t>(neighbors.size()) != n_nodes || weights.size() != neighbors.size())
        throw std::runtime_error("sparse graph: ragged adjacency");
    for (std::int32_t i = 0; i < n_nodes; ++i) {
        if (neighbors[i].size() != weights[i].size()) throw std::runtime_error("sparse graph: ragged weights");
        for (std::size_t e = 0; e < neighbors[i].size(); ++e) {
            if (neighbors[i][e] < 0 || neighbors[i][e] >= n_nodes)
                throw std::runtime_error("sparse graph: neighbor out of range");
            if (e > 0 && neighbors[i][e] <= neighbors[i][e - 1])
                throw std::runtime_error("sparse graph: neighbors not strictly ascending");
            if (!std::isfinite(weights[i][e])) throw std::runtime_error("sparse graph: non-finite weight");
        }
    }
}

void parallel_for(std::int64_t n, int n_threads, const std::function<void(std::int64_t)>& fn) {
    n_threads = std::max(1, n_threads);
    if (n_threads == 1 || n < 2 * n_threads) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::int64_t i = t; i < n; i += n_threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b, long* zero_norm_events) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        if (zero_norm_events) ++*zero_norm_events;
        return 0.0;
    }
    return a.dot(b) / (na * nb);
}

namespace {

SparseGraph knn_from_dense(const Eigen::MatrixXd& x, int k, int n_threads, long* zero_norm_rows) {
    const std::int32_t n = static_cast<std::int32_t>(x.rows());
    if (k < 1) throw std::invalid_argument("knn: K must be >= 1");
    if (k >= n) throw std::invalid_argument("knn: K must be < number of rows");

    Eigen::VectorXd norms(n);
    for (std::int32_t i = 0; i < n; ++i) norms[i] = x.row(i).norm();
    std::atomic<long> zero_rows{0};

    SparseGraph g;
    g.n_nodes = n;
    g.neighbors.resize(n);
    g.weights.resize(n);

    parallel_for(n, n_threads, [&](std::int64_t i) {
        if (norms[i] == 0.0) zero_rows.fetch_add(1, std::memory_order_relaxed);
        // (negated similarity, index): min-order gives highest sim, then lowest index
        std::vector<std::pair<double, std::int32_t>> cand;
        cand.reserve(n - 1);
        for (std::int32_t j = 0; j < n; ++j) {
            if (j == static_cast<std::int32_t>(i)) continue;
            double sim = 0.0;
            if (norms[i] != 0.0 && norms[j] != 0.0) sim = x.row(i).dot(x.row(j)) / (norms[i] * norms[j]);
            cand.emplace_back(-sim, j);
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        std::vector<std::pair<std::int32_t, double>> picked(k);
        for (int e = 0; e < k; ++e) picked[e] = {cand[e].second, -cand[e].first};
        std::sort(picked.begin(), picked.end());
        auto& nb = g.neighbors[i];
        auto& w = g.weights[i];
        nb.resize(k);
        w.resize(k);
        for (int e = 0; e < k; ++e) {
            nb[e] = picked[e].first;
            w[e] = picked[e].second;
        }
    });

    if (zero_norm_rows) *zero_norm_rows += zero_rows.load();
    return g;
}

}  // namespace

SparseGraph build_knn_graph(const FeatureMatrix& features, int k, int n_threads, long* zero_norm_rows) {
    return knn_from_dense(features.to_dense(), k, n_threads, zero_norm_rows);
}

SparseGraph build_user_user_graph(const FeatureMatrix& user_text, int k, int n_threads, long* zero_norm_rows) {
    return knn_from_dense(user_text.to_dense(), k, n_threads, zero_norm_rows);
}

BipartiteGraph build_interaction_graph(const InteractionTable& train) {
    BipartiteGraph g;
    g.n_users = train.n_users;
    g.n_items = train.n_items;
    std::vector<int> du(train.n_users, 0), di(train.n_items, 0);
    for (const auto& r : train.records) {
        ++du[r.user_id];
        ++di[r.item_id];
    }
    g.user_items.resize(train.n_users);
    g.user_weights.resize(train.n_users);
    g.item_users.resize(train.n_items);
    g.item_weights.resize(train.n_items);
    for (const auto& r : train.records) {
        const double w = r.rating / std::sqrt(static_cast<double>(du[r.user_id]) * di[r.item_id]);
        g.user_items[r.user_id].push_back(r.item_id);
        g.user_weights[r.user_id].push_back(w);
        g.item_users[r.item_id].push_back(r.user_id);
        g.item_weights[r.item_id].push_back(w);
    }
    // canonical sorted order on both sides
    for (std::int32_t u = 0; u < g.n_users; ++u) {
        std::vector<std::size_t> order(g.user_items[u].size());
        for (std::size_t e = 0; e < order.size(); ++e) order[e] = e;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return g.user_items[u][a] < g.user_items[u][b]; });
        std::vector<std::int32_t> ni(order.size());
        std::vector<double> nw(order.size());
        for (std::size_t e = 0; e < order.size(); ++e) {
            ni[e] = g.user_items[u][order[e]];
            nw[e] = g.user_weights[u][order[e]];
        }
        g.user_items[u] = std::move(ni);
        g.user_weights[u] = std::move(nw);
    }
    for (std::int32_t i = 0; i < g.n_items; ++i) {
        std::vector<std::size_t> order(g.item_users[i].size());
        for (std::size_t e = 0; e < order.size(); ++e) order[e] = e;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return g.item_users[i][a] < g.item_users[i][b]; });
        std::vector<std::int32_t> nu(order.size());
        std::vector<double> nw(order.size());
        for (std::size_t e = 0; e < order.size(); ++e) {
            nu[e] = g.item_users[i][order[e]];
            nw[e] = g.item_weights[i][order[e]];
        }
        g.item_users[i] = std::move(nu);
        g.item_weights[i] = std::move(nw);
    }
    return g;
}

void dump_graph_tsv(const SparseGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    char buf[96];
    for (std::int32_t i = 0; i < g.n_nodes; ++i)
        for (std::size_t e = 0; e < g.neighbors[i].size(); ++e) {
            int n = std::snprintf(buf, sizeof(buf), "%d\t%d\t%.17g\n", i, g.neighbors[i][e], g.weights[i][e]);
            out.write(buf, n);
        }
}

}  // namespace recgoat
