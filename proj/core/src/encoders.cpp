#include "recgoat/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace recgoat {

void GatParams::validate() const {
    if (heads < 1 || d_out % heads != 0) throw std::invalid_argument("gat: heads must divide d_out");
    if (static_cast<int>(W.size()) != heads || static_cast<int>(a_src.size()) != heads ||
        static_cast<int>(a_dst.size()) != heads)
        throw std::invalid_argument("gat: per-head parameter count mismatch");
    const int dh = head_dim();
    for (int h = 0; h < heads; ++h) {
        if (W[h].rows() != d_in || W[h].cols() != dh) throw std::invalid_argument("gat: W shape mismatch");
        if (a_src[h].size() != dh || a_dst[h].size() != dh) throw std::invalid_argument("gat: a shape mismatch");
        if (!W[h].allFinite() || !a_src[h].allFinite() || !a_dst[h].allFinite())
            throw std::invalid_argument("gat: non-finite parameters");
    }
}

GatParams init_gat_params(int d_in, int d_out, int heads, double leaky_slope, std::mt19937_64& rng) {
    GatParams p;
    p.d_in = d_in;
    p.d_out = d_out;
    p.heads = heads;
    p.leaky_slope = leaky_slope;
    const int dh = d_out / heads;
    const double wb = 1.0 / std::sqrt(static_cast<double>(d_in));
    const double ab = 1.0 / std::sqrt(static_cast<double>(2 * dh));
    std::uniform_real_distribution<double> uw(-wb, wb), ua(-ab, ab);
    for (int h = 0; h < heads; ++h) {
        Eigen::MatrixXd W(d_in, dh);
        for (int r = 0; r < d_in; ++r)
            for (int c = 0; c < dh; ++c) W(r, c) = uw(rng);
        Eigen::VectorXd as(dh), ad(dh);
        for (int c = 0; c < dh; ++c) as[c] = ua(rng);
        for (int c = 0; c < dh; ++c) ad[c] = ua(rng);
        p.W.push_back(std::move(W));
        p.a_src.push_back(std::move(as));
        p.a_dst.push_back(std::move(ad));
    }
    p.validate();
    return p;
}

EmbeddingTable init_embedding_table(std::int32_t n_entities, int d, std::mt19937_64& rng) {
    EmbeddingTable t;
    t.n_entities = n_entities;
    t.d = d;
    t.values.resize(n_entities, d);
    std::normal_distribution<double> gauss(0.0, 0.1);
    for (std::int32_t r = 0; r < n_entities; ++r)
        for (int c = 0; c < d; ++c) t.values(r, c) = gauss(rng);
    return t;
}

namespace {

inline double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

}  // namespace

Eigen::MatrixXd gat_encode(const SparseGraph& graph, const Eigen::MatrixXd& features, const GatParams& params,
                           GatCache* cache) {
    params.validate();
    if (features.cols() != params.d_in) throw std::invalid_argument("gat_encode: feature dim mismatch");
    if (features.rows() != graph.n_nodes) throw std::invalid_argument("gat_encode: node count mismatch");

    const int n = graph.n_nodes;
    const int dh = params.head_dim();
    Eigen::MatrixXd out(n, params.d_out);
    if (cache) {
        cache->projected.assign(params.heads, Eigen::MatrixXd());
        cache->preact.assign(params.heads, Eigen::MatrixXd());
        cache->alpha.assign(params.heads, {});
        cache->raw_score.assign(params.heads, {});
    }

    for (int h = 0; h < params.heads; ++h) {
        Eigen::MatrixXd proj_t = params.W[h].transpose() * features.transpose();  // dh x n, contiguous columns
        Eigen::VectorXd s_src = proj_t.transpose() * params.a_src[h];  // score part of the center node
        Eigen::VectorXd s_dst = proj_t.transpose() * params.a_dst[h];  // score part of the neighbor
        Eigen::MatrixXd pre_t(dh, n);
        std::vector<double> alphas, raws;
        Eigen::VectorXd agg(dh);
        std::vector<double> e;

        for (int i = 0; i < n; ++i) {
            const auto& nb = graph.neighbors[i];
            const std::size_t deg = nb.size() + 1;  // self-loop appended last
            // raw scores, then softmax with max subtraction
            double mx = -std::numeric_limits<double>::infinity();
            e.assign(deg, 0.0);
            for (std::size_t idx = 0; idx < nb.size(); ++idx) {
                const double raw = s_src[i] + s_dst[nb[idx]];
                if (cache) raws.push_back(raw);
                e[idx] = leaky_relu(raw, params.leaky_slope);
                mx = std::max(mx, e[idx]);
            }
            {
                const double raw = s_src[i] + s_dst[i];
                if (cache) raws.push_back(raw);
                e[deg - 1] = leaky_relu(raw, params.leaky_slope);
                mx = std::max(mx, e[deg - 1]);
            }
            double denom = 0.0;
            for (std::size_t idx = 0; idx < deg; ++idx) {
                e[idx] = std::exp(e[idx] - mx);
                denom += e[idx];
            }
            agg.setZero();
            for (std::size_t idx = 0; idx < deg; ++idx) {
                const double a = e[idx] / denom;
                if (cache) alphas.push_back(a);
                const int j = idx < nb.size() ? nb[idx] : i;
                agg += a * proj_t.col(j);
            }
            pre_t.col(i) = agg;
        }

        for (int i = 0; i < n; ++i)
            for (int c = 0; c < dh; ++c) out(i, h * dh + c) = elu(pre_t(c, i));
        if (cache) {
            cache->projected[h] = proj_t.transpose();
            cache->preact[h] = pre_t.transpose();
            cache->alpha[h] = std::move(alphas);
            cache->raw_score[h] = std::move(raws);
        }
    }
    return out;
}

Eigen::MatrixXd gat_encode_stack(const SparseGraph& graph, const Eigen::MatrixXd& features,
                                 const std::vector<GatParams>& layers) {
    if (layers.empty()) throw std::invalid_argument("gat_encode_stack: need at least one layer");
    Eigen::MatrixXd x = features;
    for (const auto& layer : layers) x = gat_encode(graph, x, layer);
    return x;
}

namespace {

// Propagation works on transposed (d x n) matrices so the per-edge AXPYs run
// over contiguous columns.
Eigen::MatrixXd propagate_to_users_t(const BipartiteGraph& g, const Eigen::MatrixXd& item_t) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(item_t.rows(), g.n_users);
    for (std::int32_t u = 0; u < g.n_users; ++u)
        for (std::size_t e = 0; e < g.user_items[u].size(); ++e)
            out.col(u) += g.user_weights[u][e] * item_t.col(g.user_items[u][e]);
    return out;
}

Eigen::MatrixXd propagate_to_items_t(const BipartiteGraph& g, const Eigen::MatrixXd& user_t) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(user_t.rows(), g.n_items);
    for (std::int32_t i = 0; i < g.n_items; ++i)
        for (std::size_t e = 0; e < g.item_users[i].size(); ++e)
            out.col(i) += g.item_weights[i][e] * user_t.col(g.item_users[i][e]);
    return out;
}

}  // namespace

LightGcnOutput lightgcn_propagate(const BipartiteGraph& graph, const Eigen::MatrixXd& user_emb,
                                  const Eigen::MatrixXd& item_emb, int layers) {
    if (layers < 0) throw std::invalid_argument("lightgcn: layers must be >= 0");
    Eigen::MatrixXd u = user_emb.transpose(), i = item_emb.transpose();
    Eigen::MatrixXd acc_u = u, acc_i = i;
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd nu = propagate_to_users_t(graph, i);
        Eigen::MatrixXd ni = propagate_to_items_t(graph, u);
        u = std::move(nu);
        i = std::move(ni);
        acc_u += u;
        acc_i += i;
    }
    const double inv = 1.0 / static_cast<double>(layers + 1);
    return {inv * acc_u.transpose(), inv * acc_i.transpose()};
}

LightGcnOutput lightgcn_backward(const BipartiteGraph& graph, const Eigen::MatrixXd& grad_users,
                                 const Eigen::MatrixXd& grad_items, int layers) {
    const double inv = 1.0 / static_cast<double>(layers + 1);
    // gU_l / gI_l accumulated from the deepest layer down to the inputs
    const Eigen::MatrixXd gu_seed = inv * grad_users.transpose(), gi_seed = inv * grad_items.transpose();
    Eigen::MatrixXd gu = gu_seed, gi = gi_seed;
    for (int l = layers - 1; l >= 0; --l) {
        Eigen::MatrixXd ngu = gu_seed + propagate_to_users_t(graph, gi);
        Eigen::MatrixXd ngi = gi_seed + propagate_to_items_t(graph, gu);
        gu = std::move(ngu);
        gi = std::move(ngi);
    }
    return {gu.transpose(), gi.transpose()};
}

}  // namespace recgoat
