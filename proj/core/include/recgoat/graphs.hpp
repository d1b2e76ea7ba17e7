#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "recgoat/feature_matrix.hpp"
#include "recgoat/interactions.hpp"

namespace recgoat {

// Directed weighted adjacency with per-node neighbor lists sorted by index.
struct SparseGraph {
    std::int32_t n_nodes = 0;
    std::vector<std::vector<std::int32_t>> neighbors;  // out-neighbors, sorted ascending
    std::vector<std::vector<double>> weights;          // parallel to neighbors

    void validate() const;
};

// User-item bipartite graph with Eq.-style symmetric degree normalization:
// w_ui = r_ui / sqrt(|N_u| * |N_i|), stored on both sides.
struct BipartiteGraph {
    std::int32_t n_users = 0;
    std::int32_t n_items = 0;
    std::vector<std::vector<std::int32_t>> user_items;
    std::vector<std::vector<double>> user_weights;
    std::vector<std::vector<std::int32_t>> item_users;
    std::vector<std::vector<double>> item_weights;
};

// Cosine of two vectors with 64-bit accumulation. A zero-norm operand yields
// similarity 0; zero_norm_events, when given, is incremented per such call.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b, long* zero_norm_events = nullptr);

// Directed top-K graph: node i links to the K distinct nodes j != i with the
// highest cosine similarity, ties broken by smaller index. Edge weight is the
// similarity. Zero-norm feature rows are counted into zero_norm_rows.
SparseGraph build_knn_graph(const FeatureMatrix& features, int k, int n_threads = 1,
                            long* zero_norm_rows = nullptr);

BipartiteGraph build_interaction_graph(const InteractionTable& train);

// Same contract as build_knn_graph, applied to user text features.
SparseGraph build_user_user_graph(const FeatureMatrix& user_text, int k, int n_threads = 1,
                                  long* zero_norm_rows = nullptr);

// Inspection dump: src<TAB>dst<TAB>weight per edge.
void dump_graph_tsv(const SparseGraph& g, const std::string& path);

// Static-partition deterministic parallel row loop (results independent of
// the thread count because rows are computed in isolation).
void parallel_for(std::int64_t n, int n_threads, const std::function<void(std::int64_t)>& fn);

}  // namespace recgoat
