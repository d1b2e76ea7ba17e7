#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "recgoat/pipeline.hpp"
#include "recgoat/rng.hpp"
#include "recgoat/synthetic.hpp"
#include "recgoat/trainer.hpp"

using namespace recgoat;

namespace {

SyntheticConfig small_synth() {
    SyntheticConfig cfg;
    cfg.n_users = 60;
    cfg.n_items = 40;
    cfg.n_clusters = 4;
    cfg.d_text = 12;
    cfg.d_visual = 12;
    cfg.interactions_per_user = 10;
    cfg.modality_noise = 0.1;
    cfg.conflict_rotation_deg = 45.0;
    return cfg;
}

TrainConfig small_train_cfg() {
    TrainConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.k_knn = 4;
    cfg.batch_size = 32;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-2;
    cfg.seed = 3;
    return cfg;
}

struct Fixture {
    DatasetSplit split;
    TrainContext ctx;
    ModelDims dims;
};

Fixture make_fixture(const SyntheticConfig& scfg, const TrainConfig& tcfg, std::uint64_t seed) {
    auto data = generate_synthetic(scfg, seed);
    Fixture f;
    f.split = split_dataset(data.interactions, 0.8, 0.1, 0.1, seed);
    f.ctx = build_train_context(f.split.train, data.item_text, data.item_visual, data.user_text, tcfg.k_knn, 1);
    f.dims = {f.split.train.n_users, f.split.train.n_items, scfg.d_text, scfg.d_visual, scfg.d_text};
    return f;
}

}  // namespace

TEST_CASE("sample_bpr_triplets: the only possible negative is forced") {
    InteractionTable t;
    t.n_users = 1;
    t.n_items = 2;
    t.records = {{0, 0, 1.0, 0}};
    auto rng = substream(1, "bpr");
    auto triplets = sample_bpr_triplets(t, 20, rng);
    for (const auto& tr : triplets) {
        CHECK(tr.user == 0);
        CHECK(tr.pos == 0);
        CHECK(tr.neg == 1);
    }
}

TEST_CASE("sample_bpr_triplets is deterministic per seed") {
    InteractionTable t;
    t.n_users = 10;
    t.n_items = 20;
    for (int u = 0; u < 10; ++u)
        for (int i = 0; i < 5; ++i) t.records.push_back({u, (u + i * 3) % 20, 1.0, 0});
    auto r1 = substream(9, "bpr");
    auto r2 = substream(9, "bpr");
    auto a = sample_bpr_triplets(t, 50, r1);
    auto b = sample_bpr_triplets(t, 50, r2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].user == b[i].user);
        CHECK(a[i].pos == b[i].pos);
        CHECK(a[i].neg == b[i].neg);
    }
}

TEST_CASE("negative sampling is uniform over non-interacted items (chi-square)") {
    InteractionTable t;
    t.n_users = 1;
    t.n_items = 21;
    t.records = {{0, 0, 1.0, 0}};  // 20 possible negatives
    auto rng = substream(10, "bpr-chi");
    BprSampler sampler(t);
    std::vector<long> counts(21, 0);
    const long draws = 100000;
    auto triplets = sampler.sample(draws, rng);
    for (const auto& tr : triplets) ++counts[tr.neg];
    CHECK(counts[0] == 0);
    const double expected = static_cast<double>(draws) / 20.0;
    double chi2 = 0.0;
    for (int i = 1; i <= 20; ++i) chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
    // 19 dof: mean 19, sd ~ sqrt(38); 3 sigma ceiling
    CHECK(chi2 <= 19.0 + 3.0 * std::sqrt(38.0));
}

TEST_CASE("bpr_loss hand cases and the scalar-loop oracle") {
    Eigen::MatrixXd u(1, 2), z(2, 2);
    u << 1, 0;
    z << 0.5, 1.0, 0.5, -1.0;  // equal first coordinates -> equal scores
    CHECK(bpr_loss(u, z, {{0, 0, 1}}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Eigen::MatrixXd zwide(2, 2);
    zwide << 100.0, 0.0, -100.0, 0.0;
    CHECK(bpr_loss(u, zwide, {{0, 0, 1}}) == doctest::Approx(0.0).epsilon(1e-12));

    auto rng = substream(11, "bpr-oracle");
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd users(5, 4), items(9, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) users(r, c) = gauss(rng);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 4; ++c) items(r, c) = gauss(rng);
    std::uniform_int_distribution<int> pu(0, 4), pi(0, 8);
    std::vector<BprTriplet> triplets;
    for (int k = 0; k < 16; ++k) triplets.push_back({pu(rng), pi(rng), pi(rng)});
    double ref = 0.0;
    for (const auto& tr : triplets) {
        const double m = users.row(tr.user).dot(items.row(tr.pos)) - users.row(tr.user).dot(items.row(tr.neg));
        ref += -std::log(1.0 / (1.0 + std::exp(-m)));
    }
    ref /= 16.0;
    CHECK(bpr_loss(users, items, triplets) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("flat parameter view round-trips bit-exactly") {
    TrainConfig cfg = small_train_cfg();
    ModelParams p = init_model_params({7, 9, 5, 6, 4}, cfg);
    auto flat = p.flatten();
    ModelParams q = init_model_params({7, 9, 5, 6, 4}, cfg);
    // scramble then restore
    auto mutated = flat;
    for (auto& x : mutated) x += 1.0;
    q.unflatten(mutated);
    q.unflatten(flat);
    auto back = q.flatten();
    REQUIRE(back.size() == flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) CHECK(back[i] == flat[i]);
    CHECK(p.all_finite());
}

TEST_CASE("total_loss with zero lambdas equals bpr_loss exactly") {
    auto f = make_fixture(small_synth(), small_train_cfg(), 5);
    TrainConfig cfg = small_train_cfg();
    cfg.lambda_cl = cfg.lambda_ot = cfg.lambda_reg = 0.0;
    ModelParams params = init_model_params(f.dims, cfg);
    auto rng = substream(cfg.seed, "sampler");
    auto batch = sample_bpr_triplets(f.split.train, cfg.batch_size, rng);
    TransportPlan pt = TransportPlan::uniform(cfg.d, 0.9), pv = TransportPlan::uniform(cfg.d, 0.9);
    LossBreakdown bd = total_loss(params, f.ctx, batch, cfg, pt, pv);

    Representations reps = forward_representations(params, f.ctx, cfg, pt, pv);
    CHECK(bd.total == doctest::Approx(bpr_loss(reps.users, reps.items, batch)).epsilon(1e-12));
    CHECK(bd.cmcl == 0.0);
    CHECK(bd.ot == 0.0);
}

TEST_CASE("id_only loss ignores the feature matrices") {
    auto scfg = small_synth();
    TrainConfig cfg = small_train_cfg();
    cfg.variant = Variant::IdOnly;
    auto data = generate_synthetic(scfg, 6);
    auto split = split_dataset(data.interactions, 0.8, 0.1, 0.1, 6);

    auto perturbed = data;
    for (auto& v : perturbed.item_text.data) v += 3.5f;
    for (auto& v : perturbed.item_visual.data) v -= 1.5f;
    for (auto& v : perturbed.user_text.data) v *= 2.0f;

    TrainContext ctx1 = build_train_context(split.train, data.item_text, data.item_visual, data.user_text,
                                            cfg.k_knn, 1);
    TrainContext ctx2 = build_train_context(split.train, perturbed.item_text, perturbed.item_visual,
                                            perturbed.user_text, cfg.k_knn, 1);
    ModelDims dims{split.train.n_users, split.train.n_items, scfg.d_text, scfg.d_visual, scfg.d_text};
    ModelParams params = init_model_params(dims, cfg);
    auto rng = substream(1, "sampler");
    auto batch = sample_bpr_triplets(split.train, 24, rng);
    TransportPlan pt = TransportPlan::uniform(cfg.d, 0.9), pv = pt;
    TransportPlan pt2 = pt, pv2 = pt;
    CHECK(total_loss(params, ctx1, batch, cfg, pt, pv).total ==
          doctest::Approx(total_loss(params, ctx2, batch, cfg, pt2, pv2).total).epsilon(1e-15));
}

TEST_CASE("full-variant total matches the hand-assembled component sum") {
    auto f = make_fixture(small_synth(), small_train_cfg(), 7);
    TrainConfig cfg = small_train_cfg();
    cfg.lambda_cl = 0.3;
    cfg.lambda_ot = 0.2;
    cfg.lambda_reg = 1e-3;
    ModelParams params = init_model_params(f.dims, cfg);
    auto rng = substream(cfg.seed, "sampler");
    auto batch = sample_bpr_triplets(f.split.train, cfg.batch_size, rng);
    TransportPlan pt = TransportPlan::uniform(cfg.d, cfg.alignment.ema_decay);
    TransportPlan pv = TransportPlan::uniform(cfg.d, cfg.alignment.ema_decay);
    LossBreakdown bd = total_loss(params, f.ctx, batch, cfg, pt, pv);

    // hand assembly from the plain module functions
    LightGcnOutput gcn = lightgcn_propagate(f.ctx.bipartite, params.user_emb.values, params.item_emb.values,
                                            cfg.layers);
    Eigen::MatrixXd zt = gat_encode(f.ctx.item_text_graph, f.ctx.x_text, params.gat_text);
    Eigen::MatrixXd zv = gat_encode(f.ctx.item_visual_graph, f.ctx.x_visual, params.gat_visual);
    Eigen::MatrixXd zut = gat_encode(f.ctx.user_graph, f.ctx.x_user, params.gat_user);

    std::vector<int> rows;
    for (const auto& tr : batch) rows.push_back(tr.pos);
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    auto gather = [&](const Eigen::MatrixXd& m) {
        Eigen::MatrixXd out(rows.size(), m.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
        return out;
    };
    Eigen::MatrixXd id_b = gather(gcn.items), t_b = gather(zt), v_b = gather(zv);

    const double cmcl = cmcl_loss(id_b, t_b, v_b, cfg.alignment.tau);

    Eigen::MatrixXd ct = cost_matrix(t_b, id_b, cfg.alignment.cost_scale);
    Eigen::MatrixXd cv = cost_matrix(v_b, id_b, cfg.alignment.cost_scale);
    const Eigen::VectorXd marg = Eigen::VectorXd::Constant(cfg.d, 1.0 / cfg.d);
    auto rt = sinkhorn(ct, marg, marg, cfg.alignment.epsilon * ct.mean(), cfg.alignment.sinkhorn_max_iters,
                       cfg.alignment.sinkhorn_tol);
    auto rv = sinkhorn(cv, marg, marg, cfg.alignment.epsilon * cv.mean(), cfg.alignment.sinkhorn_max_iters,
                       cfg.alignment.sinkhorn_tol);
    const double ot = rt.cost + rv.cost;

    TransportPlan hand_pt = TransportPlan::uniform(cfg.d, cfg.alignment.ema_decay);
    update_plan_ema(hand_pt, rt.plan, 1.0);
    hand_pt.residual = params.residual_t;
    TransportPlan hand_pv = TransportPlan::uniform(cfg.d, cfg.alignment.ema_decay);
    update_plan_ema(hand_pv, rv.plan, 1.0);
    hand_pv.residual = params.residual_v;
    Eigen::MatrixXd zt_hat = transport_features(zt, adaptive_plan(hand_pt));
    Eigen::MatrixXd zv_hat = transport_features(zv, adaptive_plan(hand_pv));
    Eigen::MatrixXd items = fuse_items(zt_hat, zv_hat, gcn.items, cfg.alignment.gamma_t, cfg.alignment.gamma_v);
    Eigen::MatrixXd users = fuse_users(gcn.users, zut, cfg.alignment.gamma_u);
    const double bpr = bpr_loss(users, items, batch);

    double reg = 0.0;
    for (const auto& t : params.tensors())
        for (Eigen::Index i = 0; i < t.size(); ++i) reg += t.data[i] * t.data[i];

    const double expected = bpr + cfg.lambda_cl * cmcl + cfg.lambda_ot * ot + cfg.lambda_reg * reg;
    CHECK(bd.total == doctest::Approx(expected).epsilon(1e-10));
    CHECK(bd.bpr == doctest::Approx(bpr).epsilon(1e-10));
    CHECK(bd.cmcl == doctest::Approx(cmcl).epsilon(1e-10));
    CHECK(bd.ot == doctest::Approx(ot).epsilon(1e-10));
}

TEST_CASE("variant containment: zeroing one lambda reproduces the single-alignment variants") {
    auto f = make_fixture(small_synth(), small_train_cfg(), 8);
    TrainConfig cfg = small_train_cfg();
    ModelParams params = init_model_params(f.dims, cfg);
    auto rng = substream(2, "sampler");
    auto batch = sample_bpr_triplets(f.split.train, 24, rng);

    auto run = [&](Variant v, double lcl, double lot) {
        TrainConfig c = cfg;
        c.variant = v;
        c.lambda_cl = lcl;
        c.lambda_ot = lot;
        TransportPlan pt = TransportPlan::uniform(c.d, 0.9), pv = TransportPlan::uniform(c.d, 0.9);
        return total_loss(params, f.ctx, batch, c, pt, pv).total;
    };
    CHECK(run(Variant::Full, 0.0, 0.1) == doctest::Approx(run(Variant::OatOnly, 0.1, 0.1)).epsilon(1e-14));
    CHECK(run(Variant::Full, 0.1, 0.0) == doctest::Approx(run(Variant::CmclOnly, 0.1, 0.2)).epsilon(1e-14));
}

TEST_CASE("compute_gradients: quadratic probe and regularizer are exact") {
    TrainConfig cfg = small_train_cfg();
    ModelParams params = init_model_params({5, 6, 4, 4, 4}, cfg);
    const Eigen::MatrixXd target = Eigen::MatrixXd::Constant(5, cfg.d, 0.25);

    auto grads = compute_gradients(params, [&](ad::Tape& tape, const VarPack& vars) {
        return tape.sum_squares(tape.sub(vars.user_emb, tape.constant(target)));
    });
    const Eigen::MatrixXd& x = params.user_emb.values;
    std::size_t off = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)  // column-major flat layout
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            CHECK(grads[off] == doctest::Approx(2.0 * (x(r, c) - 0.25)).epsilon(1e-14));
            ++off;
        }
    for (std::size_t i = off; i < grads.size(); ++i) CHECK(grads[i] == 0.0);

    const double lambda = 0.01;
    auto reg_grads = compute_gradients(params, [&](ad::Tape& tape, const VarPack& vars) {
        ad::Var total;
        for (const auto& [name, var] : vars.named()) {
            (void)name;
            total = total.valid() ? tape.add(total, tape.sum_squares(var)) : tape.sum_squares(var);
        }
        return tape.scale(total, lambda);
    });
    auto flat = params.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i)
        CHECK(reg_grads[i] == doctest::Approx(2.0 * lambda * flat[i]).epsilon(1e-12));
}

TEST_CASE("composite loss gradients match central finite differences") {
    auto scfg = small_synth();
    scfg.n_users = 16;
    scfg.n_items = 12;
    scfg.interactions_per_user = 6;
    TrainConfig cfg = small_train_cfg();
    cfg.d = 6;
    cfg.heads = 2;
    cfg.k_knn = 3;
    auto f = make_fixture(scfg, cfg, 12);
    ModelParams params = init_model_params(f.dims, cfg);
    auto rng = substream(3, "sampler");
    auto batch = sample_bpr_triplets(f.split.train, 12, rng);

    // freeze the plans once so the finite differences see constant T0
    TransportPlan pt = TransportPlan::uniform(cfg.d, 0.9), pv = TransportPlan::uniform(cfg.d, 0.9);
    total_loss(params, f.ctx, batch, cfg, pt, pv);

    auto grads = compute_gradients(params, [&](ad::Tape& tape, const VarPack& vars) {
        return build_total_loss(tape, vars, f.ctx, batch, cfg, pt, pv, /*refresh_plans=*/false);
    });
    auto loss_at = [&](const ModelParams& p) {
        ad::Tape tape;
        VarPack vars = VarPack::make(tape, p);
        ad::Var loss = build_total_loss(tape, vars, f.ctx, batch, cfg, pt, pv, false);
        return tape.value(loss)(0, 0);
    };

    auto coord_rng = substream(4, "coords");
    std::uniform_int_distribution<std::size_t> pick(0, grads.size() - 1);
    std::vector<std::size_t> coords;
    for (int i = 0; i < 60; ++i) coords.push_back(pick(coord_rng));
    auto fd = oracles::finite_difference_gradient(params, loss_at, coords);
    for (std::size_t k = 0; k < coords.size(); ++k)
        CHECK(oracles::rel_err(fd[k], grads[coords[k]]) <= 1e-4);
}

TEST_CASE("optimizer_step: zero gradients leave parameters unchanged; first step is lr-scaled") {
    TrainConfig cfg = small_train_cfg();
    ModelParams params = init_model_params({4, 4, 3, 3, 3}, cfg);
    auto before = params.flatten();
    AdamState state;
    optimizer_step(params, std::vector<double>(before.size(), 0.0), state, 0.1);
    auto after = params.flatten();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);

    // first Adam step with bias correction: delta = lr * g / (|g| + eps)
    std::vector<double> grads(before.size(), 0.0);
    grads[0] = 0.5;
    grads[1] = -2.0;
    AdamState s2;
    ModelParams p2 = init_model_params({4, 4, 3, 3, 3}, cfg);
    auto b2 = p2.flatten();
    optimizer_step(p2, grads, s2, 0.01);
    auto a2 = p2.flatten();
    CHECK(a2[0] == doctest::Approx(b2[0] - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(a2[1] == doctest::Approx(b2[1] + 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
    CHECK(a2[2] == b2[2]);
}

TEST_CASE("train with 0 epochs returns the initialization") {
    auto f = make_fixture(small_synth(), small_train_cfg(), 13);
    TrainConfig cfg = small_train_cfg();
    cfg.epochs = 0;
    auto result = train(cfg, f.split, f.ctx);
    ModelParams fresh = init_model_params(f.dims, cfg);
    auto a = result.params.flatten(), b = fresh.flatten();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("train is deterministic: identical config and seed give identical checkpoints") {
    auto f = make_fixture(small_synth(), small_train_cfg(), 14);
    TrainConfig cfg = small_train_cfg();
    cfg.epochs = 2;
    auto r1 = train(cfg, f.split, f.ctx);
    auto r2 = train(cfg, f.split, f.ctx);
    auto a = r1.params.flatten(), b = r2.params.flatten();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK(r1.metrics_log == r2.metrics_log);
}

TEST_CASE("training bpr loss decreases over the first epochs, averaged over seeds") {
    SyntheticConfig scfg;
    scfg.n_users = 200;
    scfg.n_items = 100;
    scfg.n_clusters = 5;
    scfg.d_text = 16;
    scfg.d_visual = 16;
    scfg.interactions_per_user = 12;
    scfg.modality_noise = 0.1;
    scfg.conflict_rotation_deg = 45.0;

    TrainConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.k_knn = 5;
    cfg.batch_size = 128;
    cfg.epochs = 6;
    cfg.learning_rate = 5e-3;

    std::vector<double> mean_bpr(6, 0.0);
    for (std::uint64_t seed : {21, 22, 23}) {
        auto data = generate_synthetic(scfg, seed);
        auto split = split_dataset(data.interactions, 0.8, 0.1, 0.1, seed);
        TrainConfig c = cfg;
        c.seed = seed;
        auto result = train(c, split, data.item_text, data.item_visual, data.user_text);
        REQUIRE(result.metrics_log.size() >= 5);
        for (int e = 0; e < 6; ++e)
            mean_bpr[e] += nlohmann::json::parse(result.metrics_log[e])["loss_bpr"].get<double>() / 3.0;
    }
    for (int e = 0; e + 1 < 5; ++e) CHECK(mean_bpr[e + 1] < mean_bpr[e]);
}

namespace {

// Independent plain LightGCN + BPR + Adam trainer used as a trajectory oracle
// for the id_only variant with all lambdas zeroed.
struct PlainLightGcnTrainer {
    Eigen::MatrixXd eu, ei;
    std::vector<double> m, v;
    long t = 0;

    PlainLightGcnTrainer(const ModelDims& dims, const TrainConfig& cfg) {
        auto rng_u = substream(cfg.seed, "init/user_emb");
        eu = init_embedding_table(dims.n_users, cfg.d, rng_u).values;
        auto rng_i = substream(cfg.seed, "init/item_emb");
        ei = init_embedding_table(dims.n_items, cfg.d, rng_i).values;
        m.assign(static_cast<std::size_t>((dims.n_users + dims.n_items) * cfg.d), 0.0);
        v = m;
    }

    void step(const BipartiteGraph& g, const std::vector<BprTriplet>& batch, int layers, double lr) {
        auto [zu, zi] = oracles::dense_lightgcn(g, eu, ei, layers);
        Eigen::MatrixXd gu = Eigen::MatrixXd::Zero(zu.rows(), zu.cols());
        Eigen::MatrixXd gi = Eigen::MatrixXd::Zero(zi.rows(), zi.cols());
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (const auto& tr : batch) {
            const double margin = zu.row(tr.user).dot(zi.row(tr.pos)) - zu.row(tr.user).dot(zi.row(tr.neg));
            const double sig = 1.0 / (1.0 + std::exp(margin));  // d softplus(-m)/dm = -sigma(-m)
            gu.row(tr.user) += -sig * inv * (zi.row(tr.pos) - zi.row(tr.neg));
            gi.row(tr.pos) += -sig * inv * zu.row(tr.user);
            gi.row(tr.neg) += sig * inv * zu.row(tr.user);
        }
        // adjoint of the dense propagation: same averaged powers of the
        // symmetric adjacency applied to the output gradients
        const int nu = static_cast<int>(eu.rows()), ni = static_cast<int>(ei.rows());
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nu + ni, nu + ni);
        for (int uu = 0; uu < nu; ++uu)
            for (std::size_t e = 0; e < g.user_items[uu].size(); ++e) {
                a(uu, nu + g.user_items[uu][e]) = g.user_weights[uu][e];
                a(nu + g.user_items[uu][e], uu) = g.user_weights[uu][e];
            }
        Eigen::MatrixXd gstack(nu + ni, eu.cols());
        gstack.topRows(nu) = gu;
        gstack.bottomRows(ni) = gi;
        Eigen::MatrixXd acc = gstack;
        Eigen::MatrixXd cur = gstack;
        for (int l = 0; l < layers; ++l) {
            cur = a.transpose() * cur;
            acc += cur;
        }
        acc /= static_cast<double>(layers + 1);

        // flat layout matches ModelParams: user_emb then item_emb, column-major
        std::vector<double> grads;
        grads.reserve(m.size());
        for (Eigen::Index c = 0; c < acc.cols(); ++c)
            for (Eigen::Index r = 0; r < nu; ++r) grads.push_back(acc(r, c));
        for (Eigen::Index c = 0; c < acc.cols(); ++c)
            for (Eigen::Index r = 0; r < ni; ++r) grads.push_back(acc(nu + r, c));

        ++t;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
        std::size_t k = 0;
        auto adam = [&](Eigen::MatrixXd& mat) {
            for (Eigen::Index c = 0; c < mat.cols(); ++c)
                for (Eigen::Index r = 0; r < mat.rows(); ++r) {
                    m[k] = 0.9 * m[k] + 0.1 * grads[k];
                    v[k] = 0.999 * v[k] + 0.001 * grads[k] * grads[k];
                    mat(r, c) -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + 1e-8);
                    ++k;
                }
        };
        adam(eu);
        adam(ei);
    }
};

}  // namespace

TEST_CASE("id_only with zero lambdas reproduces a plain LightGCN trainer trajectory") {
    auto scfg = small_synth();
    TrainConfig cfg = small_train_cfg();
    cfg.variant = Variant::IdOnly;
    cfg.lambda_cl = cfg.lambda_ot = cfg.lambda_reg = 0.0;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    auto f = make_fixture(scfg, cfg, 15);
    f.split.validation.records.clear();  // no model selection: train returns the final state

    auto result = train(cfg, f.split, f.ctx);

    PlainLightGcnTrainer oracle(f.dims, cfg);
    auto rng = substream(cfg.seed, "sampler");
    BprSampler sampler(f.split.train);
    const int n_batches = static_cast<int>((f.split.train.records.size() + cfg.batch_size - 1) / cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch)
        for (int b = 0; b < n_batches; ++b)
            oracle.step(f.ctx.bipartite, sampler.sample(cfg.batch_size, rng), cfg.layers, cfg.learning_rate);

    CHECK((result.params.user_emb.values - oracle.eu).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((result.params.item_emb.values - oracle.ei).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("checkpoint save/load round-trips bit-identically at the file level") {
    auto f = make_fixture(small_synth(), small_train_cfg(), 16);
    TrainConfig cfg = small_train_cfg();
    cfg.epochs = 1;
    auto result = train(cfg, f.split, f.ctx);

    Checkpoint ckpt;
    ckpt.params = result.params;
    ckpt.plan_t = result.plan_t;
    ckpt.plan_v = result.plan_v;
    ckpt.cfg = cfg;
    ckpt.best_epoch = result.best_epoch;
    ckpt.val_recall = result.best_val_recall;
    ckpt.val_ndcg = result.best_val_ndcg;

    namespace fs = std::filesystem;
    fs::path dir1 = fs::temp_directory_path() / ("recgoat_ck1_" + std::to_string(::getpid()));
    fs::path dir2 = fs::temp_directory_path() / ("recgoat_ck2_" + std::to_string(::getpid()));
    save_checkpoint(ckpt, dir1.string());
    Checkpoint loaded = load_checkpoint(dir1.string());
    save_checkpoint(loaded, dir2.string());

    for (const auto& entry : fs::directory_iterator(dir1)) {
        std::ifstream a(entry.path(), std::ios::binary), b(dir2 / entry.path().filename(), std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }
    CHECK(loaded.cfg.d == cfg.d);
    CHECK(variant_name(loaded.cfg.variant) == variant_name(cfg.variant));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("parameters stay finite through training") {
    auto f = make_fixture(small_synth(), small_train_cfg(), 17);
    TrainConfig cfg = small_train_cfg();
    cfg.epochs = 3;
    auto result = train(cfg, f.split, f.ctx);
    CHECK_FALSE(result.diverged);
    CHECK(result.params.all_finite());
}
