#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "recgoat/alignment.hpp"
#include "recgoat/autodiff.hpp"
#include "recgoat/encoders.hpp"
#include "recgoat/feature_matrix.hpp"
#include "recgoat/graphs.hpp"
#include "recgoat/interactions.hpp"

namespace recgoat {

enum class Variant { Full, IdOnly, Concat, Sum, CmclOnly, OatOnly };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

struct TrainConfig {
    int d = 32;
    int heads = 2;
    int layers = 2;       // LightGCN propagation depth
    int k_knn = 10;
    int batch_size = 256;
    int epochs = 30;
    double learning_rate = 5e-3;
    double lambda_cl = 0.1;
    double lambda_ot = 0.1;
    double lambda_reg = 1e-4;
    std::uint64_t seed = 1;
    Variant variant = Variant::Full;
    int patience = 10;    // early stopping on validation recall
    int eval_k = 10;
    int n_threads = 1;
    AlignmentConfig alignment;

    void validate() const;
};

// All learnable tensors plus a flat parameter-vector view with stable order.
struct ModelParams {
    EmbeddingTable user_emb, item_emb;
    GatParams gat_text, gat_visual, gat_user;
    Eigen::MatrixXd residual_t, residual_v;  // d x d
    Eigen::MatrixXd concat_proj;             // 3d x d, used by the concat variant

    struct TensorRef {
        std::string name;
        double* data;
        Eigen::Index rows, cols;
        Eigen::Index size() const { return rows * cols; }
    };
    std::vector<TensorRef> tensors();
    std::vector<TensorRef> tensors() const;  // const view (data pointers still mutable-free use)

    Eigen::Index flat_size() const;
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);
    bool all_finite() const;
};

struct ModelDims {
    std::int32_t n_users = 0, n_items = 0;
    int d_text_in = 0, d_visual_in = 0, d_user_in = 0;
};

ModelParams init_model_params(const ModelDims& dims, const TrainConfig& cfg);

// Frozen per-run structures: modality graphs, bipartite graph, dense features.
struct TrainContext {
    BipartiteGraph bipartite;
    SparseGraph item_text_graph, item_visual_graph, user_graph;
    Eigen::MatrixXd x_text, x_visual, x_user;
    long knn_zero_norm_rows = 0;
};

TrainContext build_train_context(const InteractionTable& train, const FeatureMatrix& item_text,
                                 const FeatureMatrix& item_visual, const FeatureMatrix& user_text,
                                 int k_knn, int n_threads);

struct BprTriplet {
    std::int32_t user, pos, neg;
};

// Stateful sampler: uniform over train records; negatives rejection-sampled
// outside the user's train set. Users who interacted with every item are
// skipped with a log line.
class BprSampler {
public:
    explicit BprSampler(const InteractionTable& train);
    std::vector<BprTriplet> sample(int batch_size, std::mt19937_64& rng) const;

private:
    const InteractionTable& train_;
    std::vector<std::vector<std::int32_t>> user_items_;  // sorted
};

std::vector<BprTriplet> sample_bpr_triplets(const InteractionTable& train, int batch_size, std::mt19937_64& rng);

// Mean over triplets of -ln sigma(u.z_pos - u.z_neg).
double bpr_loss(const Eigen::MatrixXd& user_reps, const Eigen::MatrixXd& item_reps,
                const std::vector<BprTriplet>& triplets);

// Tape variables mirroring ModelParams, in the same stable order.
struct VarPack {
    ad::Var user_emb, item_emb;
    std::vector<ad::Var> gat_text_w, gat_text_asrc, gat_text_adst;
    std::vector<ad::Var> gat_visual_w, gat_visual_asrc, gat_visual_adst;
    std::vector<ad::Var> gat_user_w, gat_user_asrc, gat_user_adst;
    ad::Var residual_t, residual_v, concat_proj;

    static VarPack make(ad::Tape& tape, const ModelParams& params);
    std::vector<std::pair<std::string, ad::Var>> named() const;
};

struct LossBreakdown {
    double total = 0, bpr = 0, cmcl = 0, ot = 0, w1_text = 0, w1_visual = 0, reg = 0;
};

// Builds the variant-dependent composite objective on the tape. Sinkhorn runs
// outside the tape (gradients reach the OT term through the cost matrix only);
// when update_ema is set the per-batch base plans are folded into plan_t/plan_v
// before the transport step uses them.
ad::Var build_total_loss(ad::Tape& tape, const VarPack& vars, const TrainContext& ctx,
                         const std::vector<BprTriplet>& batch, const TrainConfig& cfg, TransportPlan& plan_t,
                         TransportPlan& plan_v, bool update_ema, LossBreakdown* breakdown = nullptr);

// Convenience wrapper: loss and component values at the current parameters.
LossBreakdown total_loss(const ModelParams& params, const TrainContext& ctx, const std::vector<BprTriplet>& batch,
                         const TrainConfig& cfg, TransportPlan& plan_t, TransportPlan& plan_v);

// Reverse-mode gradients of an arbitrary tape-built scalar w.r.t. the flat
// parameter vector. Throws naming the tensor if any gradient is non-finite.
std::vector<double> compute_gradients(const ModelParams& params,
                                      const std::function<ad::Var(ad::Tape&, const VarPack&)>& build_loss);

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

void optimizer_step(ModelParams& params, const std::vector<double>& grads, AdamState& state, double lr);

// Variant-dependent fused user/item representations for ranking.
struct Representations {
    Eigen::MatrixXd users, items;
};
Representations forward_representations(const ModelParams& params, const TrainContext& ctx, const TrainConfig& cfg,
                                        const TransportPlan& plan_t, const TransportPlan& plan_v);

// Single aligned representation views (fused / text / visual / id item reps).
enum class ItemRepKind { Fused, Text, Visual, Id };
Representations forward_representations_as(const ModelParams& params, const TrainContext& ctx,
                                           const TrainConfig& cfg, const TransportPlan& plan_t,
                                           const TransportPlan& plan_v, ItemRepKind kind);

struct TrainResult {
    ModelParams params;
    TransportPlan plan_t, plan_v;
    std::vector<std::string> metrics_log;  // one JSON object per epoch
    int best_epoch = -1;
    double best_val_recall = 0.0;
    double best_val_ndcg = 0.0;
    bool diverged = false;
};

TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const TrainContext& ctx);
TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const FeatureMatrix& item_text,
                  const FeatureMatrix& item_visual, const FeatureMatrix& user_text);

// Checkpoint: one RGF1 blob per tensor plus a JSON manifest.
struct Checkpoint {
    ModelParams params;
    TransportPlan plan_t, plan_v;
    TrainConfig cfg;
    int best_epoch = -1;
    double val_recall = 0.0, val_ndcg = 0.0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace recgoat
