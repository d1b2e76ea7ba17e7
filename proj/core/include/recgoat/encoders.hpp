#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <vector>

#include "recgoat/graphs.hpp"

namespace recgoat {

// Multi-head GAT parameters. Attention vector a^h = [a_src^h ; a_dst^h] scores
// an edge i<-j as LeakyReLU(a_src . W x_i + a_dst . W x_j).
struct GatParams {
    int d_in = 0;
    int d_out = 0;  // total output dim, heads concatenated
    int heads = 1;
    double leaky_slope = 0.2;
    std::vector<Eigen::MatrixXd> W;      // per head, d_in x (d_out/heads)
    std::vector<Eigen::VectorXd> a_src;  // per head, d_out/heads
    std::vector<Eigen::VectorXd> a_dst;

    int head_dim() const { return d_out / heads; }
    void validate() const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for W and a.
GatParams init_gat_params(int d_in, int d_out, int heads, double leaky_slope, std::mt19937_64& rng);

struct EmbeddingTable {
    std::int32_t n_entities = 0;
    int d = 0;
    Eigen::MatrixXd values;  // n_entities x d
    bool learnable = true;
};

// normal(0, 0.1) init.
EmbeddingTable init_embedding_table(std::int32_t n_entities, int d, std::mt19937_64& rng);

// Per-edge state captured by the forward pass; consumed by the backward pass
// of the training tape.
struct GatCache {
    std::vector<Eigen::MatrixXd> projected;      // per head: n x dh (W x)
    std::vector<Eigen::MatrixXd> preact;         // per head: n x dh, pre-ELU aggregate
    std::vector<std::vector<double>> alpha;      // per head: edge-major, [neighbors..., self] per node
    std::vector<std::vector<double>> raw_score;  // per head: pre-LeakyReLU scores, same layout
};

// One attention layer over the graph: softmax attention over N_i plus an
// implicit self-loop, ELU per head, heads concatenated.
Eigen::MatrixXd gat_encode(const SparseGraph& graph, const Eigen::MatrixXd& features, const GatParams& params,
                           GatCache* cache = nullptr);

// Stacked layers; layer l+1 consumes layer l's output (d_in must chain).
Eigen::MatrixXd gat_encode_stack(const SparseGraph& graph, const Eigen::MatrixXd& features,
                                 const std::vector<GatParams>& layers);

// Alternating rating-weighted neighbor sums over the bipartite graph, output
// is the mean over layers 0..L.
struct LightGcnOutput {
    Eigen::MatrixXd users;
    Eigen::MatrixXd items;
};
LightGcnOutput lightgcn_propagate(const BipartiteGraph& graph, const Eigen::MatrixXd& user_emb,
                                  const Eigen::MatrixXd& item_emb, int layers);

// Adjoint of lightgcn_propagate (the propagation is linear in the inputs).
LightGcnOutput lightgcn_backward(const BipartiteGraph& graph, const Eigen::MatrixXd& grad_users,
                                 const Eigen::MatrixXd& grad_items, int layers);

}  // namespace recgoat
