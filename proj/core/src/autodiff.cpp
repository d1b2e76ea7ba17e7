#include "recgoat/autodiff.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace recgoat::ad {

Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, const Mat&)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Mat& g) {
    Node& n = nodes_[v.idx];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
}

bool Tape::any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
        if (nodes_[v.idx].requires_grad) return true;
    return false;
}

Var Tape::constant(Mat v) { return push(std::move(v), false); }
Var Tape::input(Mat v) { return push(std::move(v), true); }

void Tape::backward(Var loss) {
    if (nodes_[loss.idx].value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.idx].grad = Mat::Ones(1, 1);
    for (int i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
        n.backward(*this, n.grad);
    }
}

Var Tape::add(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw std::invalid_argument("add: shape mismatch");
    return push(value(a) + value(b), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var Tape::sub(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw std::invalid_argument("sub: shape mismatch");
    return push(value(a) - value(b), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
    });
}

Var Tape::scale(Var a, double c) {
    return push(value(a) * c, any_grad({a}), [a, c](Tape& t, const Mat& g) { t.accumulate(a, c * g); });
}

Var Tape::matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw std::invalid_argument("matmul: inner dim mismatch");
    return push(value(a) * value(b), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g * t.value(b).transpose());
        t.accumulate(b, t.value(a).transpose() * g);
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    return push(value(a) * value(b).transpose(), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g * t.value(b));
        t.accumulate(b, g.transpose() * t.value(a));
    });
}

Var Tape::rows_gather(Var a, std::vector<int> rows) {
    const Mat& src = value(a);
    Mat out(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0 || rows[k] >= src.rows()) throw std::out_of_range("rows_gather: index out of range");
        out.row(static_cast<Eigen::Index>(k)) = src.row(rows[k]);
    }
    return push(std::move(out), any_grad({a}), [a, rows = std::move(rows)](Tape& t, const Mat& g) {
        Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
        for (std::size_t k = 0; k < rows.size(); ++k) ga.row(rows[k]) += g.row(static_cast<Eigen::Index>(k));
        t.accumulate(a, ga);
    });
}

Var Tape::slice_rows(Var a, int start, int count) {
    if (start < 0 || start + count > value(a).rows()) throw std::out_of_range("slice_rows: out of range");
    return push(value(a).middleRows(start, count), any_grad({a}), [a, start, count](Tape& t, const Mat& g) {
        Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
        ga.middleRows(start, count) = g;
        t.accumulate(a, ga);
    });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Eigen::Index rows = value(parts[0]).rows(), cols = 0;
    for (Var p : parts) {
        if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += value(p).cols();
    }
    Mat out(rows, cols);
    Eigen::Index off = 0;
    for (Var p : parts) {
        out.middleCols(off, value(p).cols()) = value(p);
        off += value(p).cols();
    }
    bool rg = false;
    for (Var p : parts) rg = rg || nodes_[p.idx].requires_grad;
    return push(std::move(out), rg, [parts](Tape& t, const Mat& g) {
        Eigen::Index off = 0;
        for (Var p : parts) {
            t.accumulate(p, g.middleCols(off, t.value(p).cols()));
            off += t.value(p).cols();
        }
    });
}

Var Tape::row_l2_normalize(Var a) {
    const Mat& x = value(a);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double n = std::max(x.row(r).norm(), 1e-12);
        out.row(r) = x.row(r) / n;
    }
    return push(std::move(out), any_grad({a}), [a](Tape& t, const Mat& g) {
        const Mat& x = t.value(a);
        Mat ga(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double n = std::max(x.row(r).norm(), 1e-12);
            const Eigen::RowVectorXd y = x.row(r) / n;
            ga.row(r) = (g.row(r) - g.row(r).dot(y) * y) / n;
        }
        t.accumulate(a, ga);
    });
}

Var Tape::rowwise_dot(Var a, Var b) {
    const Mat& x = value(a);
    const Mat& y = value(b);
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw std::invalid_argument("rowwise_dot: shape mismatch");
    Mat out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) out(r, 0) = x.row(r).dot(y.row(r));
    return push(std::move(out), any_grad({a, b}), [a, b](Tape& t, const Mat& g) {
        const Mat& x = t.value(a);
        const Mat& y = t.value(b);
        Mat ga(x.rows(), x.cols()), gb(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            ga.row(r) = g(r, 0) * y.row(r);
            gb.row(r) = g(r, 0) * x.row(r);
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

Var Tape::logsumexp_rows(Var a) {
    const Mat& x = value(a);
    Mat out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mx = x.row(r).maxCoeff();
        out(r, 0) = mx + std::log((x.row(r).array() - mx).exp().sum());
    }
    return push(std::move(out), any_grad({a}), [a](Tape& t, const Mat& g) {
        const Mat& x = t.value(a);
        Mat ga(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double mx = x.row(r).maxCoeff();
            Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
            ga.row(r) = (g(r, 0) * e / e.sum()).matrix().transpose();
        }
        t.accumulate(a, ga);
    });
}

Var Tape::diagonal(Var a) {
    const Mat& x = value(a);
    if (x.rows() != x.cols()) throw std::invalid_argument("diagonal: matrix not square");
    Mat out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) out(r, 0) = x(r, r);
    return push(std::move(out), any_grad({a}), [a](Tape& t, const Mat& g) {
        Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
        for (Eigen::Index r = 0; r < ga.rows(); ++r) ga(r, r) = g(r, 0);
        t.accumulate(a, ga);
    });
}

Var Tape::mean_all(Var a) {
    const double inv = 1.0 / static_cast<double>(value(a).size());
    Mat out(1, 1);
    out(0, 0) = value(a).sum() * inv;
    return push(std::move(out), any_grad({a}), [a, inv](Tape& t, const Mat& g) {
        t.accumulate(a, Mat::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0) * inv));
    });
}

Var Tape::sum_squares(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).squaredNorm();
    return push(std::move(out), any_grad({a}),
                [a](Tape& t, const Mat& g) { t.accumulate(a, 2.0 * g(0, 0) * t.value(a)); });
}

Var Tape::softplus(Var a) {
    const Mat& x = value(a);
    Mat out = x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
    return push(std::move(out), any_grad({a}), [a](Tape& t, const Mat& g) {
        const Mat& x = t.value(a);
        Mat ga = g.cwiseProduct(x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }));
        t.accumulate(a, ga);
    });
}

Var Tape::l1_cost(Var zm, Var zid, double s) {
    const Mat& A = value(zm);
    const Mat& B = value(zid);
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw std::invalid_argument("l1_cost: shape mismatch");
    const Eigen::Index batch = A.rows(), d = A.cols();
    const double scale = s / static_cast<double>(batch);
    Mat C = Mat::Zero(d, d);
    for (Eigen::Index b = 0; b < batch; ++b)
        for (Eigen::Index i = 0; i < d; ++i) {
            const double ai = A(b, i);
            for (Eigen::Index j = 0; j < d; ++j) C(i, j) += std::abs(ai - B(b, j));
        }
    C *= scale;
    return push(std::move(C), any_grad({zm, zid}), [zm, zid, scale](Tape& t, const Mat& g) {
        const Mat& A = t.value(zm);
        const Mat& B = t.value(zid);
        Mat ga = Mat::Zero(A.rows(), A.cols());
        Mat gb = Mat::Zero(B.rows(), B.cols());
        for (Eigen::Index b = 0; b < A.rows(); ++b)
            for (Eigen::Index i = 0; i < A.cols(); ++i) {
                const double ai = A(b, i);
                double acc = 0.0;
                for (Eigen::Index j = 0; j < B.cols(); ++j) {
                    const double diff = ai - B(b, j);
                    const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                    acc += g(i, j) * sgn;
                    gb(b, j) -= scale * g(i, j) * sgn;
                }
                ga(b, i) = scale * acc;
            }
        t.accumulate(zm, ga);
        t.accumulate(zid, gb);
    });
}

Var Tape::frob_inner(Var a, Mat constant) {
    if (value(a).rows() != constant.rows() || value(a).cols() != constant.cols())
        throw std::invalid_argument("frob_inner: shape mismatch");
    Mat out(1, 1);
    out(0, 0) = value(a).cwiseProduct(constant).sum();
    return push(std::move(out), any_grad({a}), [a, k = std::move(constant)](Tape& t, const Mat& g) {
        t.accumulate(a, g(0, 0) * k);
    });
}

Var Tape::gat(const SparseGraph& graph, const Mat& features, const std::vector<Var>& W,
              const std::vector<Var>& a_src, const std::vector<Var>& a_dst, double leaky_slope) {
    const int heads = static_cast<int>(W.size());
    if (heads == 0 || a_src.size() != W.size() || a_dst.size() != W.size())
        throw std::invalid_argument("gat: per-head parameter count mismatch");

    GatParams p;
    p.d_in = static_cast<int>(features.cols());
    p.heads = heads;
    p.leaky_slope = leaky_slope;
    p.d_out = 0;
    for (int h = 0; h < heads; ++h) {
        p.W.push_back(value(W[h]));
        p.a_src.push_back(value(a_src[h]));
        p.a_dst.push_back(value(a_dst[h]));
        p.d_out += static_cast<int>(value(W[h]).cols());
    }

    auto cache = std::make_shared<GatCache>();
    Mat out = gat_encode(graph, features, p, cache.get());

    bool rg = false;
    for (int h = 0; h < heads; ++h)
        rg = rg || nodes_[W[h].idx].requires_grad || nodes_[a_src[h].idx].requires_grad ||
             nodes_[a_dst[h].idx].requires_grad;

    return push(std::move(out), rg,
                [&graph, features, W, a_src, a_dst, leaky_slope, cache](Tape& t, const Mat& g) {
        const int n = graph.n_nodes;
        int col_off = 0;
        for (std::size_t h = 0; h < W.size(); ++h) {
            const Mat proj_t = cache->projected[h].transpose();  // dh x n, contiguous per node
            const Mat& pre = cache->preact[h];
            const int dh = static_cast<int>(proj_t.rows());
            const Eigen::VectorXd asrc = t.value(a_src[h]).col(0);
            const Eigen::VectorXd adst = t.value(a_dst[h]).col(0);

            // ELU backward on the aggregate
            Mat gpre_t(dh, n);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < dh; ++c)
                    gpre_t(c, i) = g(i, col_off + c) * (pre(i, c) > 0.0 ? 1.0 : std::exp(pre(i, c)));

            Mat gproj_t = Mat::Zero(dh, n);
            Eigen::VectorXd gs1 = Eigen::VectorXd::Zero(n), gs2 = Eigen::VectorXd::Zero(n);
            std::size_t cursor = 0;
            std::vector<double> dalpha;
            for (int i = 0; i < n; ++i) {
                const auto& nb = graph.neighbors[i];
                const std::size_t deg = nb.size() + 1;
                dalpha.assign(deg, 0.0);
                double weighted = 0.0;  // sum_e alpha_e * dalpha_e for the softmax adjoint
                for (std::size_t e = 0; e < deg; ++e) {
                    const int j = e < nb.size() ? nb[e] : i;
                    dalpha[e] = gpre_t.col(i).dot(proj_t.col(j));
                    gproj_t.col(j) += cache->alpha[h][cursor + e] * gpre_t.col(i);
                    weighted += cache->alpha[h][cursor + e] * dalpha[e];
                }
                for (std::size_t e = 0; e < deg; ++e) {
                    const int j = e < nb.size() ? nb[e] : i;
                    const double de = cache->alpha[h][cursor + e] * (dalpha[e] - weighted);
                    const double draw = de * (cache->raw_score[h][cursor + e] > 0.0 ? 1.0 : leaky_slope);
                    gs1[i] += draw;
                    gs2[j] += draw;
                }
                cursor += deg;
            }
            Mat ga_src = proj_t * gs1;
            Mat ga_dst = proj_t * gs2;
            gproj_t += asrc * gs1.transpose() + adst * gs2.transpose();
            t.accumulate(W[h], features.transpose() * gproj_t.transpose());
            t.accumulate(a_src[h], ga_src);
            t.accumulate(a_dst[h], ga_dst);
            col_off += dh;
        }
    });
}

std::pair<Var, Var> Tape::lightgcn(const BipartiteGraph& graph, Var user_emb, Var item_emb, int layers) {
    LightGcnOutput fwd = lightgcn_propagate(graph, value(user_emb), value(item_emb), layers);
    Mat stacked(fwd.users.rows() + fwd.items.rows(), fwd.users.cols());
    stacked.topRows(fwd.users.rows()) = fwd.users;
    stacked.bottomRows(fwd.items.rows()) = fwd.items;
    const int nu = static_cast<int>(fwd.users.rows());
    const int ni = static_cast<int>(fwd.items.rows());

    Var node = push(std::move(stacked), any_grad({user_emb, item_emb}),
                    [&graph, user_emb, item_emb, layers, nu, ni](Tape& t, const Mat& g) {
        LightGcnOutput back = lightgcn_backward(graph, g.topRows(nu), g.bottomRows(ni), layers);
        t.accumulate(user_emb, back.users);
        t.accumulate(item_emb, back.items);
    });
    return {slice_rows(node, 0, nu), slice_rows(node, nu, ni)};
}

}  // namespace recgoat::ad
