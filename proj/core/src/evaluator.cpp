#include "recgoat/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "recgoat/graphs.hpp"
#include "recgoat/logging.hpp"

namespace recgoat {

std::vector<std::int32_t> rank_items(const Eigen::VectorXd& user_rep, const Eigen::MatrixXd& item_reps,
                                     const std::unordered_set<std::int32_t>& mask) {
    const std::int32_t n = static_cast<std::int32_t>(item_reps.rows());
    if (static_cast<std::int32_t>(mask.size()) >= n) throw std::invalid_argument("rank_items: all items masked");
    const Eigen::VectorXd scores = item_reps * user_rep;
    std::vector<std::int32_t> order;
    order.reserve(n - mask.size());
    for (std::int32_t i = 0; i < n; ++i)
        if (!mask.count(i)) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return order;
}

double recall_at_k(const std::vector<std::int32_t>& ranked, const std::unordered_set<std::int32_t>& relevant,
                   int k) {
    if (relevant.empty()) throw std::invalid_argument("recall_at_k: empty relevant set");
    int hits = 0;
    const int top = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int p = 0; p < top; ++p)
        if (relevant.count(ranked[p])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(const std::vector<std::int32_t>& ranked, const std::unordered_set<std::int32_t>& relevant,
                 int k) {
    if (relevant.empty()) throw std::invalid_argument("ndcg_at_k: empty relevant set");
    double dcg = 0.0;
    const int top = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int p = 0; p < top; ++p)
        if (relevant.count(ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    double idcg = 0.0;
    const int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
    for (int p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    return dcg / idcg;
}

EvalResult evaluate_rankings(const Eigen::MatrixXd& user_reps, const Eigen::MatrixXd& item_reps,
                             const InteractionTable& relevant,
                             const std::vector<const InteractionTable*>& masked, int k, int n_threads) {
    const std::int32_t n_users = static_cast<std::int32_t>(user_reps.rows());
    std::vector<std::unordered_set<std::int32_t>> rel(n_users), msk(n_users);
    for (const auto& r : relevant.records)
        if (r.user_id < n_users) rel[r.user_id].insert(r.item_id);
    for (const auto* table : masked)
        for (const auto& r : table->records)
            if (r.user_id < n_users) msk[r.user_id].insert(r.item_id);

    std::vector<UserMetrics> metrics(n_users);
    std::vector<char> active(n_users, 0);
    const std::int32_t n_items = static_cast<std::int32_t>(item_reps.rows());
    parallel_for(n_users, n_threads, [&](std::int64_t u) {
        if (rel[u].empty()) return;
        // top-K selection with the rank_items tie rule (score desc, index asc)
        const Eigen::VectorXd scores = item_reps * user_reps.row(u).transpose();
        std::vector<std::int32_t> order;
        order.reserve(n_items - msk[u].size());
        for (std::int32_t i = 0; i < n_items; ++i)
            if (!msk[u].count(i)) order.push_back(i);
        const std::size_t top = std::min<std::size_t>(k, order.size());
        std::partial_sort(order.begin(), order.begin() + top, order.end(), [&](std::int32_t a, std::int32_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        order.resize(top);
        metrics[u] = {static_cast<std::int32_t>(u), recall_at_k(order, rel[u], k), ndcg_at_k(order, rel[u], k)};
        active[u] = 1;
    });

    EvalResult out;
    for (std::int32_t u = 0; u < n_users; ++u) {
        if (!active[u]) continue;
        out.per_user.push_back(metrics[u]);
        out.recall += metrics[u].recall;
        out.ndcg += metrics[u].ndcg;
        ++out.n_users_evaluated;
    }
    if (out.n_users_evaluated == 0) throw std::runtime_error("evaluate: no users with relevant items");
    out.recall /= out.n_users_evaluated;
    out.ndcg /= out.n_users_evaluated;
    return out;
}

std::string eval_result_json(const EvalResult& r, int k) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "{\"recall@%d\": %.10g, \"ndcg@%d\": %.10g, \"n_users_evaluated\": %d}", k,
                  r.recall, k, r.ndcg, r.n_users_evaluated);
    out << buf;
    return out.str();
}

void save_per_user_tsv(const EvalResult& r, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "user\trecall\tndcg\n";
    for (const auto& m : r.per_user) out << m.user_id << '\t' << m.recall << '\t' << m.ndcg << '\n';
}

}  // namespace recgoat
