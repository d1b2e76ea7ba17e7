#include "recgoat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "recgoat/evaluator.hpp"
#include "recgoat/logging.hpp"
#include "recgoat/rng.hpp"

namespace recgoat {

Variant parse_variant(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "id_only") return Variant::IdOnly;
    if (name == "concat") return Variant::Concat;
    if (name == "sum") return Variant::Sum;
    if (name == "cmcl_only") return Variant::CmclOnly;
    if (name == "oat_only") return Variant::OatOnly;
    throw std::invalid_argument("unknown variant: " + name);
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::IdOnly: return "id_only";
        case Variant::Concat: return "concat";
        case Variant::Sum: return "sum";
        case Variant::CmclOnly: return "cmcl_only";
        case Variant::OatOnly: return "oat_only";
    }
    throw std::invalid_argument("unknown variant enum");
}

void TrainConfig::validate() const {
    if (d < 1 || heads < 1 || d % heads != 0)
        throw std::invalid_argument("train: heads must divide embedding dim d");
    if (layers < 0) throw std::invalid_argument("train: layers must be >= 0");
    if (k_knn < 1) throw std::invalid_argument("train: k_knn must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (learning_rate <= 0.0) throw std::invalid_argument("train: learning_rate must be > 0");
    if (lambda_cl < 0.0 || lambda_ot < 0.0 || lambda_reg < 0.0)
        throw std::invalid_argument("train: loss weights must be >= 0");
    if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
    if (eval_k < 1) throw std::invalid_argument("train: eval_k must be >= 1");
    if (n_threads < 1) throw std::invalid_argument("train: n_threads must be >= 1");
    alignment.validate();
}

// ---------------------------------------------------------------------------
// parameters

std::vector<ModelParams::TensorRef> ModelParams::tensors() {
    std::vector<TensorRef> out;
    auto push_mat = [&](const std::string& name, Eigen::MatrixXd& m) {
        out.push_back({name, m.data(), m.rows(), m.cols()});
    };
    auto push_vec = [&](const std::string& name, Eigen::VectorXd& v) {
        out.push_back({name, v.data(), v.size(), 1});
    };
    push_mat("user_emb", user_emb.values);
    push_mat("item_emb", item_emb.values);
    auto push_gat = [&](const std::string& prefix, GatParams& g) {
        for (int h = 0; h < g.heads; ++h) {
            push_mat(prefix + "/W" + std::to_string(h), g.W[h]);
            push_vec(prefix + "/a_src" + std::to_string(h), g.a_src[h]);
            push_vec(prefix + "/a_dst" + std::to_string(h), g.a_dst[h]);
        }
    };
    push_gat("gat_text", gat_text);
    push_gat("gat_visual", gat_visual);
    push_gat("gat_user", gat_user);
    push_mat("residual_t", residual_t);
    push_mat("residual_v", residual_v);
    push_mat("concat_proj", concat_proj);
    return out;
}

std::vector<ModelParams::TensorRef> ModelParams::tensors() const {
    // const access path shares the layout; callers must not write through it
    return const_cast<ModelParams*>(this)->tensors();
}

Eigen::Index ModelParams::flat_size() const {
    Eigen::Index n = 0;
    for (const auto& t : tensors()) n += t.size();
    return n;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> flat(static_cast<std::size_t>(flat_size()));
    std::size_t off = 0;
    for (const auto& t : tensors()) {
        std::copy(t.data, t.data + t.size(), flat.begin() + static_cast<std::ptrdiff_t>(off));
        off += static_cast<std::size_t>(t.size());
    }
    return flat;
}

void ModelParams::unflatten(const std::vector<double>& flat) {
    if (flat.size() != static_cast<std::size_t>(flat_size()))
        throw std::invalid_argument("unflatten: flat vector size mismatch");
    std::size_t off = 0;
    for (auto& t : tensors()) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.data);
        off += static_cast<std::size_t>(t.size());
    }
}

bool ModelParams::all_finite() const {
    for (const auto& t : tensors())
        for (Eigen::Index i = 0; i < t.size(); ++i)
            if (!std::isfinite(t.data[i])) return false;
    return true;
}

ModelParams init_model_params(const ModelDims& dims, const TrainConfig& cfg) {
    ModelParams p;
    {
        auto rng = substream(cfg.seed, "init/user_emb");
        p.user_emb = init_embedding_table(dims.n_users, cfg.d, rng);
    }
    {
        auto rng = substream(cfg.seed, "init/item_emb");
        p.item_emb = init_embedding_table(dims.n_items, cfg.d, rng);
    }
    {
        auto rng = substream(cfg.seed, "init/gat_text");
        p.gat_text = init_gat_params(dims.d_text_in, cfg.d, cfg.heads, 0.2, rng);
    }
    {
        auto rng = substream(cfg.seed, "init/gat_visual");
        p.gat_visual = init_gat_params(dims.d_visual_in, cfg.d, cfg.heads, 0.2, rng);
    }
    {
        auto rng = substream(cfg.seed, "init/gat_user");
        p.gat_user = init_gat_params(dims.d_user_in, cfg.d, cfg.heads, 0.2, rng);
    }
    p.residual_t = Eigen::MatrixXd::Zero(cfg.d, cfg.d);
    p.residual_v = Eigen::MatrixXd::Zero(cfg.d, cfg.d);
    {
        auto rng = substream(cfg.seed, "init/concat_proj");
        const double b = 1.0 / std::sqrt(3.0 * cfg.d);
        std::uniform_real_distribution<double> u(-b, b);
        p.concat_proj.resize(3 * cfg.d, cfg.d);
        for (Eigen::Index r = 0; r < p.concat_proj.rows(); ++r)
            for (Eigen::Index c = 0; c < p.concat_proj.cols(); ++c) p.concat_proj(r, c) = u(rng);
    }
    return p;
}

TrainContext build_train_context(const InteractionTable& train, const FeatureMatrix& item_text,
                                 const FeatureMatrix& item_visual, const FeatureMatrix& user_text,
                                 int k_knn, int n_threads) {
    if (static_cast<std::int32_t>(item_text.rows) != train.n_items ||
        static_cast<std::int32_t>(item_visual.rows) != train.n_items)
        throw std::invalid_argument("train context: item feature rows must match item count");
    if (static_cast<std::int32_t>(user_text.rows) != train.n_users)
        throw std::invalid_argument("train context: user feature rows must match user count");
    TrainContext ctx;
    ctx.bipartite = build_interaction_graph(train);
    ctx.item_text_graph = build_knn_graph(item_text, k_knn, n_threads, &ctx.knn_zero_norm_rows);
    ctx.item_visual_graph = build_knn_graph(item_visual, k_knn, n_threads, &ctx.knn_zero_norm_rows);
    ctx.user_graph = build_user_user_graph(user_text, k_knn, n_threads, &ctx.knn_zero_norm_rows);
    if (ctx.knn_zero_norm_rows > 0)
        log::warn("knn graphs: " + std::to_string(ctx.knn_zero_norm_rows) + " zero-norm feature rows");
    ctx.x_text = item_text.to_dense();
    ctx.x_visual = item_visual.to_dense();
    ctx.x_user = user_text.to_dense();
    return ctx;
}

// ---------------------------------------------------------------------------
// sampling and plain losses

BprSampler::BprSampler(const InteractionTable& train) : train_(train) {
    if (train.records.empty()) throw std::invalid_argument("bpr sampler: empty train table");
    user_items_.resize(train.n_users);
    for (const auto& r : train.records) user_items_[r.user_id].push_back(r.item_id);
    for (auto& v : user_items_) std::sort(v.begin(), v.end());
}

std::vector<BprTriplet> BprSampler::sample(int batch_size, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick_record(0, train_.records.size() - 1);
    std::uniform_int_distribution<std::int32_t> pick_item(0, train_.n_items - 1);
    std::vector<BprTriplet> out;
    out.reserve(batch_size);
    while (static_cast<int>(out.size()) < batch_size) {
        const auto& rec = train_.records[pick_record(rng)];
        const auto& owned = user_items_[rec.user_id];
        if (static_cast<std::int32_t>(owned.size()) >= train_.n_items) {
            log::debug("bpr sampler: user " + std::to_string(rec.user_id) + " interacted with all items, skipped");
            continue;
        }
        std::int32_t neg;
        do {
            neg = pick_item(rng);
        } while (std::binary_search(owned.begin(), owned.end(), neg));
        out.push_back({rec.user_id, rec.item_id, neg});
    }
    return out;
}

std::vector<BprTriplet> sample_bpr_triplets(const InteractionTable& train, int batch_size, std::mt19937_64& rng) {
    return BprSampler(train).sample(batch_size, rng);
}

double bpr_loss(const Eigen::MatrixXd& user_reps, const Eigen::MatrixXd& item_reps,
                const std::vector<BprTriplet>& triplets) {
    if (triplets.empty()) throw std::invalid_argument("bpr_loss: empty batch");
    double total = 0.0;
    for (const auto& t : triplets) {
        const double margin = user_reps.row(t.user).dot(item_reps.row(t.pos)) -
                              user_reps.row(t.user).dot(item_reps.row(t.neg));
        // -ln sigma(m) == softplus(-m), overflow-safe
        total += std::max(-margin, 0.0) + std::log1p(std::exp(-std::abs(margin)));
    }
    return total / static_cast<double>(triplets.size());
}

// ---------------------------------------------------------------------------
// tape construction

VarPack VarPack::make(ad::Tape& tape, const ModelParams& params) {
    VarPack v;
    v.user_emb = tape.input(params.user_emb.values);
    v.item_emb = tape.input(params.item_emb.values);
    auto push_gat = [&](const GatParams& g, std::vector<ad::Var>& w, std::vector<ad::Var>& as,
                        std::vector<ad::Var>& ad_) {
        for (int h = 0; h < g.heads; ++h) {
            w.push_back(tape.input(g.W[h]));
            as.push_back(tape.input(g.a_src[h]));
            ad_.push_back(tape.input(g.a_dst[h]));
        }
    };
    push_gat(params.gat_text, v.gat_text_w, v.gat_text_asrc, v.gat_text_adst);
    push_gat(params.gat_visual, v.gat_visual_w, v.gat_visual_asrc, v.gat_visual_adst);
    push_gat(params.gat_user, v.gat_user_w, v.gat_user_asrc, v.gat_user_adst);
    v.residual_t = tape.input(params.residual_t);
    v.residual_v = tape.input(params.residual_v);
    v.concat_proj = tape.input(params.concat_proj);
    return v;
}

std::vector<std::pair<std::string, ad::Var>> VarPack::named() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    out.emplace_back("user_emb", user_emb);
    out.emplace_back("item_emb", item_emb);
    auto push_gat = [&](const std::string& prefix, const std::vector<ad::Var>& w, const std::vector<ad::Var>& as,
                        const std::vector<ad::Var>& ad_) {
        for (std::size_t h = 0; h < w.size(); ++h) {
            out.emplace_back(prefix + "/W" + std::to_string(h), w[h]);
            out.emplace_back(prefix + "/a_src" + std::to_string(h), as[h]);
            out.emplace_back(prefix + "/a_dst" + std::to_string(h), ad_[h]);
        }
    };
    push_gat("gat_text", gat_text_w, gat_text_asrc, gat_text_adst);
    push_gat("gat_visual", gat_visual_w, gat_visual_asrc, gat_visual_adst);
    push_gat("gat_user", gat_user_w, gat_user_asrc, gat_user_adst);
    out.emplace_back("residual_t", residual_t);
    out.emplace_back("residual_v", residual_v);
    out.emplace_back("concat_proj", concat_proj);
    return out;
}

namespace {

ad::Var infonce_on_tape(ad::Tape& tape, ad::Var anchors, ad::Var positives, double tau) {
    ad::Var an = tape.row_l2_normalize(anchors);
    ad::Var pn = tape.row_l2_normalize(positives);
    ad::Var sims = tape.scale(tape.matmul_nt(an, pn), 1.0 / tau);
    return tape.mean_all(tape.sub(tape.logsumexp_rows(sims), tape.diagonal(sims)));
}

}  // namespace

ad::Var build_total_loss(ad::Tape& tape, const VarPack& vars, const TrainContext& ctx,
                         const std::vector<BprTriplet>& batch, const TrainConfig& cfg, TransportPlan& plan_t,
                         TransportPlan& plan_v, bool refresh_plans, LossBreakdown* breakdown) {
    if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
    const AlignmentConfig& al = cfg.alignment;
    const Variant variant = cfg.variant;

    // The OT pathway (Sinkhorn + transport + the <T0,C> term) is live only
    // when the variant carries it and lambda_ot is nonzero; likewise CMCL.
    // This makes cmcl_only/oat_only exact restrictions of the full loss.
    const bool use_modalities = variant != Variant::IdOnly;
    const bool use_transport = (variant == Variant::Full || variant == Variant::OatOnly) && cfg.lambda_ot > 0.0;
    const bool use_cmcl = (variant == Variant::Full || variant == Variant::CmclOnly) && cfg.lambda_cl > 0.0;
    const bool use_gamma_fusion =
        variant == Variant::Full || variant == Variant::OatOnly || variant == Variant::CmclOnly;

    std::vector<int> users, pos, neg;
    users.reserve(batch.size());
    pos.reserve(batch.size());
    neg.reserve(batch.size());
    for (const auto& t : batch) {
        users.push_back(t.user);
        pos.push_back(t.pos);
        neg.push_back(t.neg);
    }
    std::vector<int> align_rows = pos;  // positives of the batch, deduplicated
    std::sort(align_rows.begin(), align_rows.end());
    align_rows.erase(std::unique(align_rows.begin(), align_rows.end()), align_rows.end());

    auto [zu_id, zi_id] = tape.lightgcn(ctx.bipartite, vars.user_emb, vars.item_emb, cfg.layers);

    ad::Var zt_all, zv_all, zut_all;
    if (use_modalities) {
        zt_all = tape.gat(ctx.item_text_graph, ctx.x_text, vars.gat_text_w, vars.gat_text_asrc, vars.gat_text_adst,
                          0.2);
        zv_all = tape.gat(ctx.item_visual_graph, ctx.x_visual, vars.gat_visual_w, vars.gat_visual_asrc,
                          vars.gat_visual_adst, 0.2);
        zut_all = tape.gat(ctx.user_graph, ctx.x_user, vars.gat_user_w, vars.gat_user_asrc, vars.gat_user_adst, 0.2);
    }

    ad::Var user_fused = use_modalities
                             ? tape.add(tape.scale(zu_id, 1.0 - al.gamma_u), tape.scale(zut_all, al.gamma_u))
                             : zu_id;

    LossBreakdown bd;

    ad::Var cmcl;
    if (use_cmcl && align_rows.size() >= 2) {
        ad::Var id_b = tape.rows_gather(zi_id, align_rows);
        ad::Var t_b = tape.rows_gather(zt_all, align_rows);
        ad::Var v_b = tape.rows_gather(zv_all, align_rows);
        cmcl = tape.add(tape.add(infonce_on_tape(tape, id_b, t_b, al.tau), infonce_on_tape(tape, id_b, v_b, al.tau)),
                        infonce_on_tape(tape, t_b, v_b, al.tau));
        bd.cmcl = tape.value(cmcl)(0, 0);
    }

    ad::Var ot_term;
    if (use_transport) {
        ad::Var id_b = tape.rows_gather(zi_id, align_rows);
        ad::Var t_b = tape.rows_gather(zt_all, align_rows);
        ad::Var v_b = tape.rows_gather(zv_all, align_rows);
        ad::Var cost_t = tape.l1_cost(t_b, id_b, al.cost_scale);
        ad::Var cost_v = tape.l1_cost(v_b, id_b, al.cost_scale);

        ad::Var ot_t, ot_v;
        if (refresh_plans) {
            const Eigen::VectorXd marg = Eigen::VectorXd::Constant(cfg.d, 1.0 / cfg.d);
            auto solve = [&](const Eigen::MatrixXd& c, TransportPlan& plan) {
                const double eps = std::max(al.epsilon * c.mean(), 1e-12);
                SinkhornResult res = sinkhorn(c, marg, marg, eps, al.sinkhorn_max_iters, al.sinkhorn_tol);
                if (!res.converged)
                    log::debug("sinkhorn did not converge in " + std::to_string(res.iterations) +
                               " iterations (violation " + std::to_string(res.marginal_violation) + ")");
                update_plan_ema(plan, res.plan, eps);
                return res.plan;  // the fresh base is the batch W1 estimate
            };
            ot_t = tape.frob_inner(cost_t, solve(tape.value(cost_t), plan_t));
            ot_v = tape.frob_inner(cost_v, solve(tape.value(cost_v), plan_v));
        } else {
            ot_t = tape.frob_inner(cost_t, plan_t.base);
            ot_v = tape.frob_inner(cost_v, plan_v.base);
        }
        ot_term = tape.add(ot_t, ot_v);
        bd.w1_text = tape.value(ot_t)(0, 0);
        bd.w1_visual = tape.value(ot_v)(0, 0);
        bd.ot = tape.value(ot_term)(0, 0);
    }

    ad::Var items_fused;
    if (!use_modalities) {
        items_fused = zi_id;
    } else if (variant == Variant::Concat) {
        items_fused = tape.matmul(tape.concat_cols({zt_all, zv_all, zi_id}), vars.concat_proj);
    } else if (variant == Variant::Sum) {
        items_fused = tape.add(tape.add(zt_all, zv_all), zi_id);
    } else if (use_gamma_fusion && use_transport) {
        ad::Var t_plan = tape.add(tape.constant(static_cast<double>(plan_t.d) * plan_t.base), vars.residual_t);
        ad::Var v_plan = tape.add(tape.constant(static_cast<double>(plan_v.d) * plan_v.base), vars.residual_v);
        ad::Var zt_hat = tape.matmul(zt_all, t_plan);
        ad::Var zv_hat = tape.matmul(zv_all, v_plan);
        items_fused = tape.add(tape.add(tape.scale(zt_hat, al.gamma_t), tape.scale(zv_hat, al.gamma_v)),
                               tape.scale(zi_id, 1.0 - al.gamma_t - al.gamma_v));
    } else {
        // transport bypassed: fuse the encoder outputs directly
        items_fused = tape.add(tape.add(tape.scale(zt_all, al.gamma_t), tape.scale(zv_all, al.gamma_v)),
                               tape.scale(zi_id, 1.0 - al.gamma_t - al.gamma_v));
    }

    ad::Var u_b = tape.rows_gather(user_fused, users);
    ad::Var zp = tape.rows_gather(items_fused, pos);
    ad::Var zn = tape.rows_gather(items_fused, neg);
    ad::Var bpr =
        tape.mean_all(tape.softplus(tape.sub(tape.rowwise_dot(u_b, zn), tape.rowwise_dot(u_b, zp))));
    bd.bpr = tape.value(bpr)(0, 0);

    ad::Var total = bpr;
    if (cmcl.valid()) total = tape.add(total, tape.scale(cmcl, cfg.lambda_cl));
    if (ot_term.valid()) total = tape.add(total, tape.scale(ot_term, cfg.lambda_ot));

    if (cfg.lambda_reg > 0.0) {
        ad::Var reg;
        for (const auto& [name, var] : vars.named()) {
            (void)name;
            ad::Var sq = tape.sum_squares(var);
            reg = reg.valid() ? tape.add(reg, sq) : sq;
        }
        bd.reg = tape.value(reg)(0, 0);
        total = tape.add(total, tape.scale(reg, cfg.lambda_reg));
    }
    if (al.residual_penalty > 0.0) {
        ad::Var pen = tape.add(tape.sum_squares(vars.residual_t), tape.sum_squares(vars.residual_v));
        total = tape.add(total, tape.scale(pen, al.residual_penalty));
    }

    bd.total = tape.value(total)(0, 0);
    if (breakdown) *breakdown = bd;
    return total;
}

LossBreakdown total_loss(const ModelParams& params, const TrainContext& ctx, const std::vector<BprTriplet>& batch,
                         const TrainConfig& cfg, TransportPlan& plan_t, TransportPlan& plan_v) {
    ad::Tape tape;
    VarPack vars = VarPack::make(tape, params);
    LossBreakdown bd;
    build_total_loss(tape, vars, ctx, batch, cfg, plan_t, plan_v, /*refresh_plans=*/true, &bd);
    return bd;
}

namespace {

std::vector<double> collect_gradients(ad::Tape& tape, const VarPack& vars, const ModelParams& params) {
    std::vector<double> flat(static_cast<std::size_t>(params.flat_size()), 0.0);
    std::size_t off = 0;
    auto refs = params.tensors();
    auto named = vars.named();
    if (refs.size() != named.size()) throw std::logic_error("gradient mapping: tensor count mismatch");
    for (std::size_t k = 0; k < refs.size(); ++k) {
        const Eigen::MatrixXd& g = tape.grad(named[k].second);
        const Eigen::Index size = refs[k].size();
        if (g.size() != 0) {
            if (g.rows() != refs[k].rows || g.cols() != refs[k].cols)
                throw std::logic_error("gradient mapping: shape mismatch for " + named[k].first);
            if (!g.allFinite())
                throw std::runtime_error("non-finite gradient in parameter " + named[k].first);
            std::copy(g.data(), g.data() + size, flat.begin() + static_cast<std::ptrdiff_t>(off));
        }
        off += static_cast<std::size_t>(size);
    }
    return flat;
}

}  // namespace

std::vector<double> compute_gradients(const ModelParams& params,
                                      const std::function<ad::Var(ad::Tape&, const VarPack&)>& build_loss) {
    ad::Tape tape;
    VarPack vars = VarPack::make(tape, params);
    ad::Var loss = build_loss(tape, vars);
    if (!std::isfinite(tape.value(loss)(0, 0))) throw std::runtime_error("loss is non-finite at current parameters");
    tape.backward(loss);
    return collect_gradients(tape, vars, params);
}

void optimizer_step(ModelParams& params, const std::vector<double>& grads, AdamState& state, double lr) {
    std::vector<double> flat = params.flatten();
    if (grads.size() != flat.size()) throw std::invalid_argument("optimizer_step: gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(flat.size(), 0.0);
        state.v.assign(flat.size(), 0.0);
    }
    if (state.m.size() != flat.size()) throw std::invalid_argument("optimizer_step: state size mismatch");
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < flat.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        flat[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    params.unflatten(flat);
}

// ---------------------------------------------------------------------------
// plain forward for ranking

namespace {

struct PlainForward {
    Eigen::MatrixXd zu_id, zi_id, zt, zv, zut;
    bool has_modalities = false;
};

PlainForward plain_forward(const ModelParams& params, const TrainContext& ctx, const TrainConfig& cfg) {
    PlainForward f;
    LightGcnOutput gcn = lightgcn_propagate(ctx.bipartite, params.user_emb.values, params.item_emb.values,
                                            cfg.layers);
    f.zu_id = std::move(gcn.users);
    f.zi_id = std::move(gcn.items);
    if (cfg.variant != Variant::IdOnly) {
        f.has_modalities = true;
        f.zt = gat_encode(ctx.item_text_graph, ctx.x_text, params.gat_text);
        f.zv = gat_encode(ctx.item_visual_graph, ctx.x_visual, params.gat_visual);
        f.zut = gat_encode(ctx.user_graph, ctx.x_user, params.gat_user);
    }
    return f;
}

}  // namespace

Representations forward_representations_as(const ModelParams& params, const TrainContext& ctx,
                                           const TrainConfig& cfg, const TransportPlan& plan_t,
                                           const TransportPlan& plan_v, ItemRepKind kind) {
    PlainForward f = plain_forward(params, ctx, cfg);
    const AlignmentConfig& al = cfg.alignment;
    const bool use_transport =
        (cfg.variant == Variant::Full || cfg.variant == Variant::OatOnly) && cfg.lambda_ot > 0.0;

    Representations out;
    out.users = f.has_modalities ? fuse_users(f.zu_id, f.zut, al.gamma_u) : f.zu_id;

    if (!f.has_modalities) {
        out.items = f.zi_id;
        return out;
    }
    Eigen::MatrixXd zt_hat = f.zt, zv_hat = f.zv;
    if (use_transport) {
        TransportPlan pt = plan_t;
        pt.residual = params.residual_t;
        TransportPlan pv = plan_v;
        pv.residual = params.residual_v;
        zt_hat = transport_features(f.zt, adaptive_plan(pt));
        zv_hat = transport_features(f.zv, adaptive_plan(pv));
    }
    switch (kind) {
        case ItemRepKind::Text: out.items = zt_hat; return out;
        case ItemRepKind::Visual: out.items = zv_hat; return out;
        case ItemRepKind::Id: out.items = f.zi_id; return out;
        case ItemRepKind::Fused: break;
    }
    if (cfg.variant == Variant::Concat) {
        Eigen::MatrixXd cat(f.zt.rows(), 3 * cfg.d);
        cat << f.zt, f.zv, f.zi_id;
        out.items = cat * params.concat_proj;
    } else if (cfg.variant == Variant::Sum) {
        out.items = f.zt + f.zv + f.zi_id;
    } else {
        out.items = fuse_items(zt_hat, zv_hat, f.zi_id, al.gamma_t, al.gamma_v);
    }
    return out;
}

Representations forward_representations(const ModelParams& params, const TrainContext& ctx, const TrainConfig& cfg,
                                        const TransportPlan& plan_t, const TransportPlan& plan_v) {
    return forward_representations_as(params, ctx, cfg, plan_t, plan_v, ItemRepKind::Fused);
}

// ---------------------------------------------------------------------------
// training loop

namespace {

std::string metrics_line(int epoch, const LossBreakdown& bd, double val_recall, double val_ndcg) {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["loss_total"] = bd.total;
    j["loss_bpr"] = bd.bpr;
    j["loss_cmcl"] = bd.cmcl;
    j["loss_ot"] = bd.ot;
    j["w1_text"] = bd.w1_text;
    j["w1_visual"] = bd.w1_visual;
    j["val_recall10"] = val_recall;
    j["val_ndcg10"] = val_ndcg;
    return j.dump();
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const TrainContext& ctx) {
    cfg.validate();
    ModelDims dims;
    dims.n_users = split.train.n_users;
    dims.n_items = split.train.n_items;
    dims.d_text_in = static_cast<int>(ctx.x_text.cols());
    dims.d_visual_in = static_cast<int>(ctx.x_visual.cols());
    dims.d_user_in = static_cast<int>(ctx.x_user.cols());

    TrainResult result;
    result.params = init_model_params(dims, cfg);
    result.plan_t = TransportPlan::uniform(cfg.d, cfg.alignment.ema_decay);
    result.plan_v = TransportPlan::uniform(cfg.d, cfg.alignment.ema_decay);

    if (cfg.epochs == 0) {
        result.best_epoch = 0;
        return result;
    }

    BprSampler sampler(split.train);
    auto rng_sampler = substream(cfg.seed, "sampler");
    AdamState adam;

    ModelParams params = result.params;
    TransportPlan plan_t = result.plan_t, plan_v = result.plan_v;
    ModelParams last_good = params;
    TransportPlan last_good_t = plan_t, last_good_v = plan_v;

    const int n_batches =
        static_cast<int>((split.train.records.size() + cfg.batch_size - 1) / cfg.batch_size);
    double best_recall = -1.0;
    int stale_epochs = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        LossBreakdown epoch_mean;
        bool aborted = false;
        for (int b = 0; b < n_batches; ++b) {
            auto batch = sampler.sample(cfg.batch_size, rng_sampler);
            ad::Tape tape;
            VarPack vars = VarPack::make(tape, params);
            LossBreakdown bd;
            ad::Var loss;
            std::vector<double> grads;
            try {
                loss = build_total_loss(tape, vars, ctx, batch, cfg, plan_t, plan_v, true, &bd);
                if (!std::isfinite(bd.total)) throw std::runtime_error("loss diverged to non-finite value");
                tape.backward(loss);
                grads = collect_gradients(tape, vars, params);
            } catch (const std::exception& e) {
                log::error(std::string("training aborted at epoch ") + std::to_string(epoch) + ": " + e.what());
                result.diverged = true;
                aborted = true;
                break;
            }
            optimizer_step(params, grads, adam, cfg.learning_rate);
            epoch_mean.total += bd.total;
            epoch_mean.bpr += bd.bpr;
            epoch_mean.cmcl += bd.cmcl;
            epoch_mean.ot += bd.ot;
            epoch_mean.w1_text += bd.w1_text;
            epoch_mean.w1_visual += bd.w1_visual;
        }
        if (aborted) break;
        if (!params.all_finite()) {
            log::error("parameters non-finite after epoch " + std::to_string(epoch) + ", reverting to last good");
            result.diverged = true;
            break;
        }
        const double inv = 1.0 / static_cast<double>(n_batches);
        epoch_mean.total *= inv;
        epoch_mean.bpr *= inv;
        epoch_mean.cmcl *= inv;
        epoch_mean.ot *= inv;
        epoch_mean.w1_text *= inv;
        epoch_mean.w1_visual *= inv;

        last_good = params;
        last_good_t = plan_t;
        last_good_v = plan_v;

        double val_recall = 0.0, val_ndcg = 0.0;
        if (!split.validation.records.empty()) {
            Representations reps = forward_representations(params, ctx, cfg, plan_t, plan_v);
            EvalResult val = evaluate_rankings(reps.users, reps.items, split.validation, {&split.train},
                                               cfg.eval_k, cfg.n_threads);
            val_recall = val.recall;
            val_ndcg = val.ndcg;
        }
        result.metrics_log.push_back(metrics_line(epoch, epoch_mean, val_recall, val_ndcg));
        log::info("epoch " + std::to_string(epoch) + " loss " + std::to_string(epoch_mean.total) + " val R@" +
                  std::to_string(cfg.eval_k) + " " + std::to_string(val_recall));

        if (val_recall > best_recall) {
            best_recall = val_recall;
            result.params = params;
            result.plan_t = plan_t;
            result.plan_v = plan_v;
            result.best_epoch = epoch;
            result.best_val_recall = val_recall;
            result.best_val_ndcg = val_ndcg;
            stale_epochs = 0;
        } else if (++stale_epochs >= cfg.patience) {
            log::info("early stop after epoch " + std::to_string(epoch));
            break;
        }
    }

    if (result.diverged) {
        result.params = last_good;
        result.plan_t = last_good_t;
        result.plan_v = last_good_v;
    } else if (split.validation.records.empty()) {
        // nothing to select on: keep the final state
        result.params = params;
        result.plan_t = plan_t;
        result.plan_v = plan_v;
        result.best_epoch = cfg.epochs;
    }
    return result;
}

TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const FeatureMatrix& item_text,
                  const FeatureMatrix& item_visual, const FeatureMatrix& user_text) {
    TrainContext ctx = build_train_context(split.train, item_text, item_visual, user_text, cfg.k_knn,
                                           cfg.n_threads);
    return train(cfg, split, ctx);
}

// ---------------------------------------------------------------------------
// checkpoints and config serialization

std::string train_config_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["d"] = cfg.d;
    j["heads"] = cfg.heads;
    j["layers"] = cfg.layers;
    j["k_knn"] = cfg.k_knn;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["learning_rate"] = cfg.learning_rate;
    j["lambda_cl"] = cfg.lambda_cl;
    j["lambda_ot"] = cfg.lambda_ot;
    j["lambda_reg"] = cfg.lambda_reg;
    j["seed"] = cfg.seed;
    j["variant"] = variant_name(cfg.variant);
    j["patience"] = cfg.patience;
    j["eval_k"] = cfg.eval_k;
    j["device_threads"] = cfg.n_threads;
    j["tau"] = cfg.alignment.tau;
    j["cost_scale"] = cfg.alignment.cost_scale;
    j["gamma_t"] = cfg.alignment.gamma_t;
    j["gamma_v"] = cfg.alignment.gamma_v;
    j["gamma_u"] = cfg.alignment.gamma_u;
    j["epsilon"] = cfg.alignment.epsilon;
    j["sinkhorn_max_iters"] = cfg.alignment.sinkhorn_max_iters;
    j["sinkhorn_tol"] = cfg.alignment.sinkhorn_tol;
    j["ema_decay"] = cfg.alignment.ema_decay;
    j["residual_penalty"] = cfg.alignment.residual_penalty;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig cfg;
    cfg.d = j.value("d", cfg.d);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.k_knn = j.value("k_knn", cfg.k_knn);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.lambda_cl = j.value("lambda_cl", cfg.lambda_cl);
    cfg.lambda_ot = j.value("lambda_ot", cfg.lambda_ot);
    cfg.lambda_reg = j.value("lambda_reg", cfg.lambda_reg);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("variant")) cfg.variant = parse_variant(j["variant"].get<std::string>());
    cfg.patience = j.value("patience", cfg.patience);
    cfg.eval_k = j.value("eval_k", cfg.eval_k);
    cfg.n_threads = j.value("device_threads", cfg.n_threads);
    cfg.alignment.tau = j.value("tau", cfg.alignment.tau);
    cfg.alignment.cost_scale = j.value("cost_scale", cfg.alignment.cost_scale);
    cfg.alignment.gamma_t = j.value("gamma_t", cfg.alignment.gamma_t);
    cfg.alignment.gamma_v = j.value("gamma_v", cfg.alignment.gamma_v);
    cfg.alignment.gamma_u = j.value("gamma_u", cfg.alignment.gamma_u);
    cfg.alignment.epsilon = j.value("epsilon", cfg.alignment.epsilon);
    cfg.alignment.sinkhorn_max_iters = j.value("sinkhorn_max_iters", cfg.alignment.sinkhorn_max_iters);
    cfg.alignment.sinkhorn_tol = j.value("sinkhorn_tol", cfg.alignment.sinkhorn_tol);
    cfg.alignment.ema_decay = j.value("ema_decay", cfg.alignment.ema_decay);
    cfg.alignment.residual_penalty = j.value("residual_penalty", cfg.alignment.residual_penalty);
    return cfg;
}

namespace {

std::string sanitize_tensor_name(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '/') c = '_';
    return out;
}

FeatureMatrix to_rgf(const double* data, Eigen::Index rows, Eigen::Index cols) {
    // column-major Eigen storage -> row-major file payload
    FeatureMatrix m;
    m.rows = static_cast<std::uint32_t>(rows);
    m.cols = static_cast<std::uint32_t>(cols);
    m.data.resize(static_cast<std::size_t>(rows) * cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m.data[static_cast<std::size_t>(r) * cols + c] = static_cast<float>(data[c * rows + r]);
    return m;
}

void from_rgf(const FeatureMatrix& m, double* data, Eigen::Index rows, Eigen::Index cols) {
    if (static_cast<Eigen::Index>(m.rows) != rows || static_cast<Eigen::Index>(m.cols) != cols)
        throw std::runtime_error("checkpoint tensor shape mismatch");
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            data[c * rows + r] = m.data[static_cast<std::size_t>(r) * cols + c];
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "recgoat-checkpoint-v1";
    manifest["config"] = nlohmann::json::parse(train_config_json(ckpt.cfg));
    manifest["best_epoch"] = ckpt.best_epoch;
    manifest["val_recall"] = ckpt.val_recall;
    manifest["val_ndcg"] = ckpt.val_ndcg;
    manifest["plans"] = {{"epsilon_t", ckpt.plan_t.epsilon},
                         {"epsilon_v", ckpt.plan_v.epsilon},
                         {"ema_decay", ckpt.plan_t.ema_decay},
                         {"d", ckpt.plan_t.d}};

    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : ckpt.params.tensors()) {
        const std::string file = sanitize_tensor_name(t.name) + ".rgf1";
        save_feature_matrix(to_rgf(t.data, t.rows, t.cols), (fs::path(dir) / file).string());
        tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"file", file}});
    }
    const std::vector<std::pair<std::string, const Eigen::MatrixXd*>> plan_blobs = {
        {"plan_t_base", &ckpt.plan_t.base}, {"plan_v_base", &ckpt.plan_v.base}};
    for (const auto& [name, mat] : plan_blobs) {
        const std::string file = name + ".rgf1";
        save_feature_matrix(to_rgf(mat->data(), mat->rows(), mat->cols()), (fs::path(dir) / file).string());
        tensors.push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}, {"file", file}});
    }
    manifest["tensors"] = tensors;

    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("cannot open checkpoint manifest in " + dir);
    nlohmann::json manifest = nlohmann::json::parse(in);
    if (manifest.value("format", "") != "recgoat-checkpoint-v1")
        throw std::runtime_error("unrecognized checkpoint format in " + dir);

    Checkpoint ckpt;
    ckpt.cfg = train_config_from_json(manifest["config"].dump());
    ckpt.best_epoch = manifest.value("best_epoch", -1);
    ckpt.val_recall = manifest.value("val_recall", 0.0);
    ckpt.val_ndcg = manifest.value("val_ndcg", 0.0);

    std::map<std::string, nlohmann::json> by_name;
    for (const auto& t : manifest["tensors"]) by_name[t["name"].get<std::string>()] = t;

    auto shape_of = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint missing tensor " + name);
        return std::pair<Eigen::Index, Eigen::Index>(it->second["rows"].get<Eigen::Index>(),
                                                     it->second["cols"].get<Eigen::Index>());
    };

    ModelDims dims;
    dims.n_users = static_cast<std::int32_t>(shape_of("user_emb").first);
    dims.n_items = static_cast<std::int32_t>(shape_of("item_emb").first);
    dims.d_text_in = static_cast<int>(shape_of("gat_text/W0").first);
    dims.d_visual_in = static_cast<int>(shape_of("gat_visual/W0").first);
    dims.d_user_in = static_cast<int>(shape_of("gat_user/W0").first);
    ckpt.params = init_model_params(dims, ckpt.cfg);

    for (auto& t : ckpt.params.tensors()) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint missing tensor " + t.name);
        FeatureMatrix m = load_feature_matrix((fs::path(dir) / it->second["file"].get<std::string>()).string());
        from_rgf(m, t.data, t.rows, t.cols);
    }

    const auto& plans = manifest["plans"];
    const int d = plans["d"].get<int>();
    ckpt.plan_t = TransportPlan::uniform(d, plans.value("ema_decay", 0.9));
    ckpt.plan_v = TransportPlan::uniform(d, plans.value("ema_decay", 0.9));
    ckpt.plan_t.epsilon = plans.value("epsilon_t", 0.0);
    ckpt.plan_v.epsilon = plans.value("epsilon_v", 0.0);
    const std::vector<std::pair<std::string, TransportPlan*>> plan_blobs = {{"plan_t_base", &ckpt.plan_t},
                                                                            {"plan_v_base", &ckpt.plan_v}};
    for (auto& [name, plan] : plan_blobs) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint missing tensor " + name);
        FeatureMatrix m = load_feature_matrix((fs::path(dir) / it->second["file"].get<std::string>()).string());
        from_rgf(m, plan->base.data(), plan->base.rows(), plan->base.cols());
    }
    ckpt.plan_t.residual = ckpt.params.residual_t;
    ckpt.plan_v.residual = ckpt.params.residual_v;
    return ckpt;
}

}  // namespace recgoat
