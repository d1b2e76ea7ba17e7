#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "recgoat/interactions.hpp"

namespace recgoat {

// Items sorted by u.z descending, masked items removed, ties by ascending
// item index.
std::vector<std::int32_t> rank_items(const Eigen::VectorXd& user_rep, const Eigen::MatrixXd& item_reps,
                                     const std::unordered_set<std::int32_t>& mask);

double recall_at_k(const std::vector<std::int32_t>& ranked, const std::unordered_set<std::int32_t>& relevant,
                   int k);

// Binary relevance; IDCG truncated at min(K, |relevant|).
double ndcg_at_k(const std::vector<std::int32_t>& ranked, const std::unordered_set<std::int32_t>& relevant,
                 int k);

struct UserMetrics {
    std::int32_t user_id = 0;
    double recall = 0.0;
    double ndcg = 0.0;
};

struct EvalResult {
    double recall = 0.0;  // unweighted mean over evaluated users
    double ndcg = 0.0;
    int n_users_evaluated = 0;
    std::vector<UserMetrics> per_user;
};

// Full-ranking evaluation of the relevant table, masking every (user,item)
// pair in the masked tables. Users with no relevant items are skipped.
EvalResult evaluate_rankings(const Eigen::MatrixXd& user_reps, const Eigen::MatrixXd& item_reps,
                             const InteractionTable& relevant,
                             const std::vector<const InteractionTable*>& masked, int k, int n_threads = 1);

std::string eval_result_json(const EvalResult& r, int k);
void save_per_user_tsv(const EvalResult& r, const std::string& path);

}  // namespace recgoat
