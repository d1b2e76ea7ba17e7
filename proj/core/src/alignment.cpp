#include "recgoat/alignment.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace recgoat {

void AlignmentConfig::validate() const {
    if (tau <= 0.0) throw std::invalid_argument("alignment: tau must be > 0");
    if (cost_scale <= 0.0) throw std::invalid_argument("alignment: cost scale must be > 0");
    if (gamma_t < 0.0 || gamma_t > 1.0 || gamma_v < 0.0 || gamma_v > 1.0 || gamma_t + gamma_v > 1.0)
        throw std::invalid_argument("alignment: gamma_t, gamma_v must lie in [0,1] with gamma_t+gamma_v <= 1");
    if (gamma_u < 0.0 || gamma_u > 1.0) throw std::invalid_argument("alignment: gamma_u must lie in [0,1]");
    if (epsilon <= 0.0) throw std::invalid_argument("alignment: epsilon must be > 0");
    if (sinkhorn_max_iters < 1) throw std::invalid_argument("alignment: sinkhorn_max_iters must be >= 1");
    if (sinkhorn_tol <= 0.0) throw std::invalid_argument("alignment: sinkhorn_tol must be > 0");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw std::invalid_argument("alignment: ema_decay must be in [0,1)");
    if (residual_penalty < 0.0) throw std::invalid_argument("alignment: residual_penalty must be >= 0");
}

TransportPlan TransportPlan::uniform(int d, double ema_decay) {
    TransportPlan plan;
    plan.d = d;
    plan.base = Eigen::MatrixXd::Constant(d, d, 1.0 / (static_cast<double>(d) * d));
    plan.residual = Eigen::MatrixXd::Zero(d, d);
    plan.p = Eigen::VectorXd::Constant(d, 1.0 / d);
    plan.q = Eigen::VectorXd::Constant(d, 1.0 / d);
    plan.ema_decay = ema_decay;
    return plan;
}

void TransportPlan::validate(double tol) const {
    if (base.rows() != d || base.cols() != d || residual.rows() != d || residual.cols() != d)
        throw std::runtime_error("transport plan: shape mismatch");
    if ((base.array() < 0.0).any()) throw std::runtime_error("transport plan: negative base entry");
    if (!residual.allFinite()) throw std::runtime_error("transport plan: non-finite residual");
    const double row_violation = (base.rowwise().sum() - p).cwiseAbs().maxCoeff();
    const double col_violation = (base.colwise().sum().transpose() - q).cwiseAbs().maxCoeff();
    if (std::max(row_violation, col_violation) > tol)
        throw std::runtime_error("transport plan: marginal violation exceeds tolerance");
}

namespace {

Eigen::MatrixXd l2_normalized_rows(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double n = std::max(x.row(r).norm(), 1e-12);
        out.row(r) = x.row(r) / n;
    }
    return out;
}

}  // namespace

double infonce_pair_loss(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives, double tau) {
    if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols())
        throw std::invalid_argument("infonce: shape mismatch");
    if (anchors.rows() < 2) throw std::invalid_argument("infonce: batch must have at least 2 rows");
    if (!anchors.allFinite() || !positives.allFinite()) throw std::invalid_argument("infonce: non-finite input");
    const Eigen::MatrixXd an = l2_normalized_rows(anchors);
    const Eigen::MatrixXd pn = l2_normalized_rows(positives);
    const Eigen::MatrixXd sims = (an * pn.transpose()) / tau;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < sims.rows(); ++i) {
        const double mx = sims.row(i).maxCoeff();
        const double lse = mx + std::log((sims.row(i).array() - mx).exp().sum());
        loss += lse - sims(i, i);
    }
    return loss / static_cast<double>(sims.rows());
}

double cmcl_loss(const Eigen::MatrixXd& z_id, const Eigen::MatrixXd& z_t, const Eigen::MatrixXd& z_v, double tau) {
    return infonce_pair_loss(z_id, z_t, tau) + infonce_pair_loss(z_id, z_v, tau) +
           infonce_pair_loss(z_t, z_v, tau);
}

Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& z_m, const Eigen::MatrixXd& z_id, double s) {
    if (z_m.rows() != z_id.rows() || z_m.cols() != z_id.cols())
        throw std::invalid_argument("cost_matrix: shape mismatch");
    if (z_m.rows() < 1) throw std::invalid_argument("cost_matrix: empty batch");
    const Eigen::Index batch = z_m.rows(), d = z_m.cols();
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index b = 0; b < batch; ++b)
        for (Eigen::Index i = 0; i < d; ++i) {
            const double v = z_m(b, i);
            for (Eigen::Index j = 0; j < d; ++j) c(i, j) += std::abs(v - z_id(b, j));
        }
    return c * (s / static_cast<double>(batch));
}

SinkhornResult sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                        double epsilon, int max_iters, double tol) {
    const Eigen::Index d1 = cost.rows(), d2 = cost.cols();
    if (p.size() != d1 || q.size() != d2) throw std::invalid_argument("sinkhorn: marginal dimension mismatch");
    if ((cost.array() < 0.0).any()) throw std::invalid_argument("sinkhorn: cost must be nonnegative");
    if ((p.array() <= 0.0).any() || (q.array() <= 0.0).any())
        throw std::invalid_argument("sinkhorn: marginals must be strictly positive");
    if (std::abs(p.sum() - 1.0) > 1e-9 || std::abs(q.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("sinkhorn: marginals must sum to 1");
    if (epsilon <= 0.0) throw std::invalid_argument("sinkhorn: epsilon must be > 0");

    const Eigen::ArrayXd log_p = p.array().log();
    const Eigen::ArrayXd log_q = q.array().log();
    Eigen::VectorXd f = Eigen::VectorXd::Zero(d1), g = Eigen::VectorXd::Zero(d2);

    auto logsumexp = [](const Eigen::ArrayXd& x) {
        const double mx = x.maxCoeff();
        return mx + std::log((x - mx).exp().sum());
    };

    SinkhornResult res;
    Eigen::MatrixXd plan(d1, d2);

    // Epsilon scaling: anneal from a large regularizer down to the target,
    // warm-starting the potentials. Plain iteration stalls for small epsilon.
    std::vector<double> schedule;
    const double cmax = cost.maxCoeff();
    for (double e = 0.25 * cmax; e > epsilon; e *= 0.5) schedule.push_back(e);
    schedule.push_back(epsilon);

    const int warmup_per_stage = 25;
    for (std::size_t stage = 0; stage < schedule.size() && res.iterations < max_iters; ++stage) {
        const double eps = schedule[stage];
        const bool final_stage = stage + 1 == schedule.size();
        const int stage_budget = final_stage ? max_iters - res.iterations
                                             : std::min(warmup_per_stage, max_iters - res.iterations);
        for (int it = 0; it < stage_budget; ++it) {
            for (Eigen::Index i = 0; i < d1; ++i)
                f[i] = eps * log_p[i] - eps * logsumexp((g.transpose().array() - cost.row(i).array()) / eps);
            for (Eigen::Index j = 0; j < d2; ++j)
                g[j] = eps * log_q[j] - eps * logsumexp((f.array() - cost.col(j).array()) / eps);
            ++res.iterations;
            if (!final_stage) continue;

            for (Eigen::Index i = 0; i < d1; ++i)
                for (Eigen::Index j = 0; j < d2; ++j) plan(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / eps);
            const double row_violation = (plan.rowwise().sum() - p).cwiseAbs().maxCoeff();
            const double col_violation = (plan.colwise().sum().transpose() - q).cwiseAbs().maxCoeff();
            res.marginal_violation = std::max(row_violation, col_violation);
            if (res.marginal_violation <= tol) {
                res.converged = true;
                break;
            }
        }
        if (res.converged) break;
    }
    if (!res.converged) {
        for (Eigen::Index i = 0; i < d1; ++i)
            for (Eigen::Index j = 0; j < d2; ++j) plan(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / epsilon);
        const double row_violation = (plan.rowwise().sum() - p).cwiseAbs().maxCoeff();
        const double col_violation = (plan.colwise().sum().transpose() - q).cwiseAbs().maxCoeff();
        res.marginal_violation = std::max(row_violation, col_violation);
        res.converged = res.marginal_violation <= tol;
    }

    // Rounding onto the transport polytope: scale rows/columns down to their
    // marginals, then spread the missing mass as a rank-one nonnegative
    // correction. The returned plan is feasible to machine precision; the
    // cost shift is bounded by the pre-rounding violation times max(C).
    for (Eigen::Index i = 0; i < d1; ++i) {
        const double rs = plan.row(i).sum();
        if (rs > p[i]) plan.row(i) *= p[i] / rs;
    }
    for (Eigen::Index j = 0; j < d2; ++j) {
        const double cs = plan.col(j).sum();
        if (cs > q[j]) plan.col(j) *= q[j] / cs;
    }
    Eigen::VectorXd dr = p - plan.rowwise().sum();
    Eigen::VectorXd dc = q - plan.colwise().sum().transpose();
    const double missing = dr.cwiseMax(0.0).sum();
    if (missing > 0.0) plan += dr.cwiseMax(0.0) * dc.cwiseMax(0.0).transpose() / missing;
    {
        const double row_violation = (plan.rowwise().sum() - p).cwiseAbs().maxCoeff();
        const double col_violation = (plan.colwise().sum().transpose() - q).cwiseAbs().maxCoeff();
        res.marginal_violation = std::max(row_violation, col_violation);
    }

    res.plan = std::move(plan);
    res.cost = res.plan.cwiseProduct(cost).sum();
    return res;
}

Eigen::MatrixXd adaptive_plan(const TransportPlan& plan) {
    if (plan.base.rows() != plan.residual.rows() || plan.base.cols() != plan.residual.cols())
        throw std::invalid_argument("adaptive_plan: shape mismatch");
    return static_cast<double>(plan.d) * plan.base + plan.residual;
}

Eigen::MatrixXd transport_features(const Eigen::MatrixXd& z_m, const Eigen::MatrixXd& t) {
    if (z_m.cols() != t.rows()) throw std::invalid_argument("transport_features: shape mismatch");
    return z_m * t;
}

Eigen::MatrixXd fuse_items(const Eigen::MatrixXd& z_t_hat, const Eigen::MatrixXd& z_v_hat,
                           const Eigen::MatrixXd& z_id, double gamma_t, double gamma_v) {
    if (gamma_t < 0.0 || gamma_t > 1.0 || gamma_v < 0.0 || gamma_v > 1.0 || gamma_t + gamma_v > 1.0)
        throw std::invalid_argument("fuse_items: fusion weights out of range");
    return gamma_t * z_t_hat + gamma_v * z_v_hat + (1.0 - gamma_t - gamma_v) * z_id;
}

Eigen::MatrixXd fuse_users(const Eigen::MatrixXd& z_u_id, const Eigen::MatrixXd& z_u_t, double gamma_u) {
    if (gamma_u < 0.0 || gamma_u > 1.0) throw std::invalid_argument("fuse_users: gamma_u out of range");
    return (1.0 - gamma_u) * z_u_id + gamma_u * z_u_t;
}

void update_plan_ema(TransportPlan& plan, const Eigen::MatrixXd& fresh_base, double fresh_epsilon) {
    if (plan.epsilon == 0.0) {  // first update adopts the fresh plan
        plan.base = fresh_base;
    } else {
        plan.base = plan.ema_decay * plan.base + (1.0 - plan.ema_decay) * fresh_base;
    }
    plan.epsilon = fresh_epsilon;
}

namespace {

std::string plan_report_impl(const TransportPlan& plan, const Eigen::MatrixXd* cost) {
    const double row_violation = (plan.base.rowwise().sum() - plan.p).cwiseAbs().maxCoeff();
    const double col_violation = (plan.base.colwise().sum().transpose() - plan.q).cwiseAbs().maxCoeff();
    std::ostringstream out;
    out << "transport plan d=" << plan.d << "\n"
        << "  row marginal violation: " << row_violation << "\n"
        << "  col marginal violation: " << col_violation << "\n";
    if (cost) out << "  <T0,C>: " << plan.base.cwiseProduct(*cost).sum() << "\n";
    out << "  ||residual||_F: " << plan.residual.norm() << "\n"
        << "  epsilon: " << plan.epsilon << ", ema_decay: " << plan.ema_decay << "\n";
    return out.str();
}

}  // namespace

std::string plan_report(const TransportPlan& plan, const Eigen::MatrixXd& cost) {
    return plan_report_impl(plan, &cost);
}

std::string plan_report(const TransportPlan& plan) { return plan_report_impl(plan, nullptr); }

}  // namespace recgoat
