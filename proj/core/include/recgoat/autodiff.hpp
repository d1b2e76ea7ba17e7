#pragma once

#include <Eigen/Core>
#include <functional>
#include <utility>
#include <vector>

#include "recgoat/encoders.hpp"
#include "recgoat/graphs.hpp"

namespace recgoat::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape over matrix-valued nodes. Scalars are 1x1 matrices.
// Fused ops (gat, lightgcn, l1_cost) carry hand-derived adjoints; everything
// is validated against central finite differences in the test suite.
class Tape {
public:
    struct Var {
        int idx = -1;
        bool valid() const { return idx >= 0; }
    };

    Var constant(Mat v);  // no gradient is propagated into constants
    Var input(Mat v);

    const Mat& value(Var v) const { return nodes_[v.idx].value; }
    const Mat& grad(Var v) const { return nodes_[v.idx].grad; }

    // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. loss must be 1x1.
    void backward(Var loss);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var rows_gather(Var a, std::vector<int> rows);
    Var slice_rows(Var a, int start, int count);
    Var concat_cols(const std::vector<Var>& parts);
    Var row_l2_normalize(Var a);
    Var rowwise_dot(Var a, Var b);  // n x 1
    Var logsumexp_rows(Var a);      // n x 1, max-subtracted
    Var diagonal(Var a);            // n x 1
    Var mean_all(Var a);            // 1 x 1
    Var sum_squares(Var a);         // 1 x 1
    Var softplus(Var a);            // elementwise ln(1+e^x), overflow-safe
    // C_ij = (s/B) sum_b |zm(b,i) - zid(b,j)|, a d x d cost over feature dims
    Var l1_cost(Var zm, Var zid, double s);
    Var frob_inner(Var a, Mat constant);  // 1 x 1

    // Multi-head GAT layer over constant node features.
    Var gat(const SparseGraph& graph, const Mat& features, const std::vector<Var>& W,
            const std::vector<Var>& a_src, const std::vector<Var>& a_dst, double leaky_slope);

    // LightGCN propagation; returns (user block, item block) of the stacked output.
    std::pair<Var, Var> lightgcn(const BipartiteGraph& graph, Var user_emb, Var item_emb, int layers);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        std::function<void(Tape&, const Mat&)> backward;  // gout -> accumulate input grads
    };

    Var push(Mat value, bool requires_grad, std::function<void(Tape&, const Mat&)> back = nullptr);
    void accumulate(Var v, const Mat& g);
    bool any_grad(std::initializer_list<Var> vs) const;

    std::vector<Node> nodes_;
};

using Var = Tape::Var;

}  // namespace recgoat::ad
