#pragma once

#include <Eigen/Core>
#include <string>

namespace recgoat {

struct AlignmentConfig {
    double tau = 0.2;              // contrastive temperature
    double cost_scale = 1.0;       // s in the feature-wise cost
    double gamma_t = 0.2;          // item fusion weight, text
    double gamma_v = 0.2;          // item fusion weight, visual
    double gamma_u = 0.2;          // user fusion weight for the text representation
    double epsilon = 0.05;         // entropic regularizer as a fraction of mean(C)
    int sinkhorn_max_iters = 200;
    double sinkhorn_tol = 1e-6;
    double ema_decay = 0.9;        // smoothing of the per-batch base plans
    double residual_penalty = 0.0; // optional Frobenius penalty on the residuals

    void validate() const;
};

// Base entropic plan plus learnable residual. T0 row/column sums match p/q up
// to sinkhorn_tol; the residual may be negative.
struct TransportPlan {
    int d = 0;
    Eigen::MatrixXd base;       // T0, entries sum to 1 under uniform marginals
    Eigen::MatrixXd residual;   // learnable, initialized to zero
    Eigen::VectorXd p;
    Eigen::VectorXd q;
    double epsilon = 0.0;       // absolute regularizer the base was solved with
    double ema_decay = 0.9;

    static TransportPlan uniform(int d, double ema_decay);
    void validate(double tol) const;
};

// Mean InfoNCE over the batch with cosine similarity and in-batch negatives
// (the positive included in the denominator). Max-subtracted softmax.
double infonce_pair_loss(const Eigen::MatrixXd& anchors, const Eigen::MatrixXd& positives, double tau);

// Sum of infonce_pair_loss over the ordered pairs (id,t), (id,v), (t,v).
double cmcl_loss(const Eigen::MatrixXd& z_id, const Eigen::MatrixXd& z_t, const Eigen::MatrixXd& z_v, double tau);

// Feature-wise cost: C_ij = s * (1/B) sum_b |Zm(b,i) - Zid(b,j)|, a d x d
// matrix over feature dimensions.
Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& z_m, const Eigen::MatrixXd& z_id, double s);

struct SinkhornResult {
    Eigen::MatrixXd plan;       // T0 = diag(u) exp(-C/eps) diag(v), strictly positive
    double cost = 0.0;          // <T0, C>, the entropic W1 estimate
    bool converged = false;
    int iterations = 0;
    double marginal_violation = 0.0;  // inf-norm over both marginals
};

// Log-domain Sinkhorn-Knopp. Never throws on non-convergence: returns the
// best plan with converged=false.
SinkhornResult sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                        double epsilon, int max_iters, double tol);

// The transport-application form: d*T0 (a row-stochastic averaging operator
// under uniform marginals) plus the learnable residual. With a zero residual
// this is exactly the scaled base plan.
Eigen::MatrixXd adaptive_plan(const TransportPlan& plan);

// Z * T
Eigen::MatrixXd transport_features(const Eigen::MatrixXd& z_m, const Eigen::MatrixXd& t);

// gamma_t * Zt + gamma_v * Zv + (1 - gamma_t - gamma_v) * Zid
Eigen::MatrixXd fuse_items(const Eigen::MatrixXd& z_t_hat, const Eigen::MatrixXd& z_v_hat,
                           const Eigen::MatrixXd& z_id, double gamma_t, double gamma_v);

// (1 - gamma_u) * Zu_id + gamma_u * Zu_t
Eigen::MatrixXd fuse_users(const Eigen::MatrixXd& z_u_id, const Eigen::MatrixXd& z_u_t, double gamma_u);

// EMA update of the base plan: on the first update the base is adopted as-is.
void update_plan_ema(TransportPlan& plan, const Eigen::MatrixXd& fresh_base, double fresh_epsilon);

// Text summary: marginal violations, <T0,C>, ||residual||_F. The overload
// without a cost matrix omits the transport-cost line.
std::string plan_report(const TransportPlan& plan, const Eigen::MatrixXd& cost);
std::string plan_report(const TransportPlan& plan);

}  // namespace recgoat
