#include "recgoat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "recgoat/rng.hpp"

namespace recgoat {

void SyntheticConfig::validate() const {
    if (n_clusters < 1) throw std::invalid_argument("synthetic: n_clusters must be >= 1");
    if (n_items < 1 || n_users < 1) throw std::invalid_argument("synthetic: need at least one user and item");
    if (interactions_per_user < 1 || interactions_per_user > n_items)
        throw std::invalid_argument("synthetic: interactions_per_user must be in [1, n_items]");
    if (d_text < 1 || d_visual < 1) throw std::invalid_argument("synthetic: feature dims must be >= 1");
    if (std::min(d_text, d_visual) < n_clusters)
        throw std::invalid_argument("synthetic: min(d_text, d_visual) must be >= n_clusters");
    if (modality_noise < 0.0) throw std::invalid_argument("synthetic: modality_noise must be >= 0");
}

namespace {

// Orthonormal cluster centroids in the shared base dimension.
Eigen::MatrixXd make_centroids(int n_clusters, int d_base, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd c(n_clusters, d_base);
    for (int k = 0; k < n_clusters; ++k) {
        for (int j = 0; j < d_base; ++j) c(k, j) = gauss(rng);
        for (int prev = 0; prev < k; ++prev) c.row(k) -= c.row(k).dot(c.row(prev)) * c.row(prev);
        double norm = c.row(k).norm();
        if (norm < 1e-9) { --k; continue; }  // re-draw a degenerate direction
        c.row(k) /= norm;
    }
    return c;
}

Eigen::VectorXd pad_to(const Eigen::VectorXd& v, int d) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(d);
    out.head(std::min<int>(static_cast<int>(v.size()), d)) = v.head(std::min<int>(static_cast<int>(v.size()), d));
    return out;
}

// Givens rotation by theta on coordinate pairs (0,1), (2,3), ...
Eigen::VectorXd rotate_pairs(const Eigen::VectorXd& v, double theta_rad) {
    Eigen::VectorXd out = v;
    const double c = std::cos(theta_rad), s = std::sin(theta_rad);
    for (int j = 0; j + 1 < out.size(); j += 2) {
        double a = out[j], b = out[j + 1];
        out[j] = c * a - s * b;
        out[j + 1] = s * a + c * b;
    }
    return out;
}

void add_noise(Eigen::VectorXd& v, double scale, std::mt19937_64& rng) {
    if (scale <= 0.0) return;
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sigma = scale / std::sqrt(static_cast<double>(v.size()));
    for (int j = 0; j < v.size(); ++j) v[j] += sigma * gauss(rng);
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int d_base = std::min(cfg.d_text, cfg.d_visual);
    const double theta = cfg.conflict_rotation_deg * std::numbers::pi / 180.0;

    // Items carry a latent within-cluster offset and users a latent taste
    // direction; in-cluster draws are softmax-weighted by taste-offset
    // affinity. The offsets are shared across modalities, so zero noise and
    // zero rotation still make text and visual features identical up to
    // dimension padding.
    constexpr double kOffsetScale = 0.5;
    constexpr double kAffinityTemp = 0.08;

    auto rng_centroids = substream(seed, "centroids");
    Eigen::MatrixXd centroids = make_centroids(cfg.n_clusters, d_base, rng_centroids);

    SyntheticData out;
    out.item_cluster.resize(cfg.n_items);
    for (int i = 0; i < cfg.n_items; ++i) out.item_cluster[i] = i % cfg.n_clusters;

    std::normal_distribution<double> gauss(0.0, 1.0);
    auto rng_offsets = substream(seed, "item_offset");
    Eigen::MatrixXd offsets(cfg.n_items, d_base);  // unit within-cluster directions
    Eigen::MatrixXd latent(cfg.n_items, d_base);   // v_i = centroid + scaled offset
    for (int i = 0; i < cfg.n_items; ++i) {
        Eigen::VectorXd o(d_base);
        for (int c = 0; c < d_base; ++c) o[c] = gauss(rng_offsets);
        offsets.row(i) = o.transpose() / std::max(o.norm(), 1e-12);
        latent.row(i) = centroids.row(out.item_cluster[i]) + kOffsetScale * offsets.row(i);
    }

    Eigen::MatrixXd text(cfg.n_items, cfg.d_text), visual(cfg.n_items, cfg.d_visual);
    auto rng_text = substream(seed, "item_text");
    auto rng_visual = substream(seed, "item_visual");
    for (int i = 0; i < cfg.n_items; ++i) {
        const Eigen::VectorXd base = latent.row(i).transpose();
        Eigen::VectorXd xt = pad_to(base, cfg.d_text);
        add_noise(xt, cfg.modality_noise, rng_text);
        text.row(i) = xt.transpose();
        Eigen::VectorXd xv = rotate_pairs(pad_to(base, cfg.d_visual), theta);
        add_noise(xv, cfg.modality_noise, rng_visual);
        visual.row(i) = xv.transpose();
    }

    // Items of each cluster, for preference-biased sampling.
    std::vector<std::vector<int>> cluster_items(cfg.n_clusters);
    for (int i = 0; i < cfg.n_items; ++i) cluster_items[out.item_cluster[i]].push_back(i);

    out.user_cluster.resize(cfg.n_users);
    auto rng_pref = substream(seed, "user_pref");
    std::uniform_int_distribution<int> pick_cluster(0, cfg.n_clusters - 1);
    for (int u = 0; u < cfg.n_users; ++u) out.user_cluster[u] = pick_cluster(rng_pref);

    // Personal taste is a unit direction matched against item offsets, so no
    // within-cluster popularity shortcut exists: items are equally popular in
    // expectation and ranking quality hinges on recovering the offsets.
    auto rng_taste = substream(seed, "user_taste");
    Eigen::MatrixXd taste(cfg.n_users, d_base);
    for (int u = 0; u < cfg.n_users; ++u) {
        Eigen::VectorXd g(d_base);
        for (int c = 0; c < d_base; ++c) g[c] = gauss(rng_taste);
        taste.row(u) = g.transpose() / std::max(g.norm(), 1e-12);
    }

    out.interactions.n_users = cfg.n_users;
    out.interactions.n_items = cfg.n_items;
    std::int64_t tick = 0;
    for (int u = 0; u < cfg.n_users; ++u) {
        auto rng_u = substream(seed, "interactions", static_cast<std::uint64_t>(u));
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        std::uniform_int_distribution<int> any_item(0, cfg.n_items - 1);
        const auto& own = cluster_items[out.user_cluster[u]];

        // softmax weights over the user's cluster, max-subtracted
        std::vector<double> weight(own.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t e = 0; e < own.size(); ++e) {
            weight[e] = taste.row(u).dot(offsets.row(own[e])) / kAffinityTemp;
            mx = std::max(mx, weight[e]);
        }
        for (double& w : weight) w = std::exp(w - mx);

        std::unordered_set<int> used;
        std::vector<char> own_used(own.size(), 0);
        int own_remaining = static_cast<int>(own.size());
        while (static_cast<int>(used.size()) < cfg.interactions_per_user) {
            const bool in_cluster = coin(rng_u) >= cfg.modality_noise && own_remaining > 0;
            int item = -1;
            if (in_cluster) {
                double total = 0.0;
                for (std::size_t e = 0; e < own.size(); ++e)
                    if (!own_used[e]) total += weight[e];
                double ticket = coin(rng_u) * total;
                for (std::size_t e = 0; e < own.size(); ++e) {
                    if (own_used[e]) continue;
                    ticket -= weight[e];
                    if (ticket <= 0.0 || e + 1 == own.size()) {
                        item = own[e];
                        own_used[e] = 1;
                        --own_remaining;
                        break;
                    }
                }
                if (item < 0) {  // numeric guard: take the first unused
                    for (std::size_t e = 0; e < own.size(); ++e)
                        if (!own_used[e]) {
                            item = own[e];
                            own_used[e] = 1;
                            --own_remaining;
                            break;
                        }
                }
            } else {
                for (int tries = 0; tries < 64 && item < 0; ++tries) {
                    int cand = any_item(rng_u);
                    if (!used.count(cand)) item = cand;
                }
                if (item < 0) {  // deterministic fallback scan
                    int start = any_item(rng_u);
                    for (int off = 0; off < cfg.n_items; ++off) {
                        int cand = (start + off) % cfg.n_items;
                        if (!used.count(cand)) { item = cand; break; }
                    }
                }
                for (std::size_t e = 0; e < own.size(); ++e)
                    if (own[e] == item && !own_used[e]) {
                        own_used[e] = 1;
                        --own_remaining;
                    }
            }
            used.insert(item);
            out.interactions.records.push_back({u, item, 1.0, tick++});
        }
    }

    Eigen::MatrixXd utext = Eigen::MatrixXd::Zero(cfg.n_users, cfg.d_text);
    std::vector<int> count(cfg.n_users, 0);
    for (const auto& r : out.interactions.records) {
        utext.row(r.user_id) +=
            pad_to(centroids.row(out.item_cluster[r.item_id]).transpose(), cfg.d_text).transpose();
        ++count[r.user_id];
    }
    auto rng_utext = substream(seed, "user_text");
    for (int u = 0; u < cfg.n_users; ++u) {
        if (count[u] > 0) utext.row(u) /= static_cast<double>(count[u]);
        Eigen::VectorXd v = utext.row(u).transpose();
        add_noise(v, cfg.modality_noise, rng_utext);
        utext.row(u) = v.transpose();
    }

    out.item_text = FeatureMatrix::from_dense(text, EntityKind::ItemText);
    out.item_visual = FeatureMatrix::from_dense(visual, EntityKind::ItemVisual);
    out.user_text = FeatureMatrix::from_dense(utext, EntityKind::UserText);
    return out;
}

}  // namespace recgoat
