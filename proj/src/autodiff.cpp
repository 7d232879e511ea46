#include "crg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace crg::ad {

namespace {

Value make(Mat v, std::vector<Value> parents, const char* op,
           std::function<void(const Mat&, GradStore&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->parents = std::move(parents);
    n->op = op;
    n->requires_grad = false;
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw DataError(std::string(op) + ": shape mismatch");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

void GradStore::add(const Node* n, const Mat& g) {
    if (!n->requires_grad) return;
    auto it = grads_.find(n);
    if (it == grads_.end())
        grads_.emplace(n, g);
    else
        it->second += g;
}

void GradStore::add(const Value& n, const Mat& g) { add(n.get(), g); }

const Mat* GradStore::find(const Node* n) const {
    auto it = grads_.find(n);
    return it == grads_.end() ? nullptr : &it->second;
}

void GradStore::merge(const GradStore& other) {
    for (const auto& [node, g] : other.grads_) {
        auto it = grads_.find(node);
        if (it == grads_.end())
            grads_.emplace(node, g);
        else
            it->second += g;
    }
}

Value constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->op = "const";
    return n;
}

Value constant_scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

Value leaf(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->op = "leaf";
    return n;
}

Value add(const Value& a, const Value& b) {
    check_same_shape(a, b, "add");
    return make(a->value + b->value, {a, b}, "add",
                [a = a.get(), b = b.get()](const Mat& g, GradStore& gs) {
                    gs.add(a, g);
                    gs.add(b, g);
                });
}

Value sub(const Value& a, const Value& b) {
    check_same_shape(a, b, "sub");
    return make(a->value - b->value, {a, b}, "sub",
                [a = a.get(), b = b.get()](const Mat& g, GradStore& gs) {
                    gs.add(a, g);
                    gs.add(b, Mat(-g));
                });
}

Value mul(const Value& a, const Value& b) {
    check_same_shape(a, b, "mul");
    return make(a->value.cwiseProduct(b->value), {a, b}, "mul",
                [a, b](const Mat& g, GradStore& gs) {
                    gs.add(a, g.cwiseProduct(b->value));
                    gs.add(b, g.cwiseProduct(a->value));
                });
}

Value scale(const Value& a, double s) {
    return make(a->value * s, {a}, "scale",
                [a = a.get(), s](const Mat& g, GradStore& gs) { gs.add(a, Mat(g * s)); });
}

Value add_scalar(const Value& a, double s) {
    return make(a->value.array() + s, {a}, "add_scalar",
                [a = a.get()](const Mat& g, GradStore& gs) { gs.add(a, g); });
}

Value matmul(const Value& a, const Value& b) {
    if (a->value.cols() != b->value.rows()) throw DataError("matmul: inner dims differ");
    return make(a->value * b->value, {a, b}, "matmul",
                [a, b](const Mat& g, GradStore& gs) {
                    gs.add(a, Mat(g * b->value.transpose()));
                    gs.add(b, Mat(a->value.transpose() * g));
                });
}

Value transpose(const Value& a) {
    return make(a->value.transpose(), {a}, "transpose",
                [a = a.get()](const Mat& g, GradStore& gs) { gs.add(a, Mat(g.transpose())); });
}

Value slice_rows(const Value& a, Eigen::Index r0, Eigen::Index nr) {
    if (r0 < 0 || r0 + nr > a->value.rows()) throw DataError("slice_rows: out of range");
    Eigen::Index cols = a->value.cols(), rows = a->value.rows();
    return make(a->value.middleRows(r0, nr), {a}, "slice_rows",
                [a = a.get(), r0, nr, rows, cols](const Mat& g, GradStore& gs) {
                    Mat full = Mat::Zero(rows, cols);
                    full.middleRows(r0, nr) = g;
                    gs.add(a, full);
                });
}

Value slice_cols(const Value& a, Eigen::Index c0, Eigen::Index nc) {
    if (c0 < 0 || c0 + nc > a->value.cols()) throw DataError("slice_cols: out of range");
    Eigen::Index cols = a->value.cols(), rows = a->value.rows();
    return make(a->value.middleCols(c0, nc), {a}, "slice_cols",
                [a = a.get(), c0, nc, rows, cols](const Mat& g, GradStore& gs) {
                    Mat full = Mat::Zero(rows, cols);
                    full.middleCols(c0, nc) = g;
                    gs.add(a, full);
                });
}

Value vstack(const std::vector<Value>& parts) {
    if (parts.empty()) throw DataError("vstack: empty");
    Eigen::Index cols = parts[0]->value.cols(), rows = 0;
    for (const auto& p : parts) {
        if (p->value.cols() != cols) throw DataError("vstack: column mismatch");
        rows += p->value.rows();
    }
    Mat v(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        v.middleRows(r, p->value.rows()) = p->value;
        r += p->value.rows();
    }
    return make(std::move(v), parts, "vstack", [parts](const Mat& g, GradStore& gs) {
        Eigen::Index r = 0;
        for (const auto& p : parts) {
            gs.add(p, Mat(g.middleRows(r, p->value.rows())));
            r += p->value.rows();
        }
    });
}

Value hstack(const std::vector<Value>& parts) {
    if (parts.empty()) throw DataError("hstack: empty");
    Eigen::Index rows = parts[0]->value.rows(), cols = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) throw DataError("hstack: row mismatch");
        cols += p->value.cols();
    }
    Mat v(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        v.middleCols(c, p->value.cols()) = p->value;
        c += p->value.cols();
    }
    return make(std::move(v), parts, "hstack", [parts](const Mat& g, GradStore& gs) {
        Eigen::Index c = 0;
        for (const auto& p : parts) {
            gs.add(p, Mat(g.middleCols(c, p->value.cols())));
            c += p->value.cols();
        }
    });
}

Value add_rowvec(const Value& a, const Value& r) {
    if (r->value.rows() != 1 || r->value.cols() != a->value.cols())
        throw DataError("add_rowvec: r must be [1 x cols(a)]");
    return make(a->value.rowwise() + r->value.row(0), {a, r}, "add_rowvec",
                [a = a.get(), r = r.get()](const Mat& g, GradStore& gs) {
                    gs.add(a, g);
                    gs.add(r, Mat(g.colwise().sum()));
                });
}

Value scale_rows(const Value& a, const Value& s) {
    if (s->value.cols() != 1 || s->value.rows() != a->value.rows())
        throw DataError("scale_rows: s must be [rows(a) x 1]");
    return make((a->value.array().colwise() * s->value.col(0).array()).matrix(), {a, s},
                "scale_rows", [a, s](const Mat& g, GradStore& gs) {
                    gs.add(a, Mat((g.array().colwise() * s->value.col(0).array()).matrix()));
                    gs.add(s, Mat(g.cwiseProduct(a->value).rowwise().sum()));
                });
}

Value gather_rows(const Value& table, std::vector<int> idx) {
    Mat v(static_cast<Eigen::Index>(idx.size()), table->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= table->value.rows())
            throw DataError("gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(i)) = table->value.row(idx[i]);
    }
    Eigen::Index trows = table->value.rows(), tcols = table->value.cols();
    return make(std::move(v), {table}, "gather_rows",
                [table = table.get(), idx = std::move(idx), trows, tcols](const Mat& g,
                                                                          GradStore& gs) {
                    Mat full = Mat::Zero(trows, tcols);
                    for (size_t i = 0; i < idx.size(); ++i)
                        full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                    gs.add(table, full);
                });
}

Value rowsum(const Value& a) {
    Eigen::Index cols = a->value.cols();
    return make(a->value.rowwise().sum(), {a}, "rowsum",
                [a = a.get(), cols](const Mat& g, GradStore& gs) {
                    gs.add(a, Mat(g * Mat::Ones(1, cols)));
                });
}

Value sum(const Value& a) {
    Mat v(1, 1);
    v(0, 0) = a->value.sum();
    Eigen::Index rows = a->value.rows(), cols = a->value.cols();
    return make(std::move(v), {a}, "sum", [a = a.get(), rows, cols](const Mat& g, GradStore& gs) {
        gs.add(a, Mat(Mat::Constant(rows, cols, g(0, 0))));
    });
}

Value mean(const Value& a) {
    double n = static_cast<double>(a->value.size());
    Mat v(1, 1);
    v(0, 0) = a->value.sum() / n;
    Eigen::Index rows = a->value.rows(), cols = a->value.cols();
    return make(std::move(v), {a}, "mean",
                [a = a.get(), rows, cols, n](const Mat& g, GradStore& gs) {
                    gs.add(a, Mat(Mat::Constant(rows, cols, g(0, 0) / n)));
                });
}

Value softmax_rows(const Value& a) {
    Mat y = a->value;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        double m = y.row(i).maxCoeff();
        y.row(i) = (y.row(i).array() - m).exp();
        y.row(i) /= y.row(i).sum();
    }
    auto out = make(std::move(y), {a}, "softmax", nullptr);
    if (out->requires_grad) {
        out->backprop = [a = a.get(), out = out.get()](const Mat& g, GradStore& gs) {
            const Mat& y = out->value;
            Mat gy = g.cwiseProduct(y);
            Eigen::VectorXd rs = gy.rowwise().sum();
            Mat da = gy - (y.array().colwise() * rs.array()).matrix();
            gs.add(a, da);
        };
    }
    return out;
}

Value log(const Value& a) {
    return make(a->value.array().log(), {a}, "log", [a](const Mat& g, GradStore& gs) {
        gs.add(a, Mat(g.cwiseQuotient(a->value)));
    });
}

Value exp(const Value& a) {
    auto out = make(a->value.array().exp(), {a}, "exp", nullptr);
    if (out->requires_grad) {
        out->backprop = [a = a.get(), out = out.get()](const Mat& g, GradStore& gs) {
            gs.add(a, Mat(g.cwiseProduct(out->value)));
        };
    }
    return out;
}

Value tanh(const Value& a) {
    auto out = make(a->value.array().tanh(), {a}, "tanh", nullptr);
    if (out->requires_grad) {
        out->backprop = [a = a.get(), out = out.get()](const Mat& g, GradStore& gs) {
            gs.add(a, Mat(g.cwiseProduct((1.0 - out->value.array().square()).matrix())));
        };
    }
    return out;
}

Value sigmoid(const Value& a) {
    Mat y = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
    auto out = make(std::move(y), {a}, "sigmoid", nullptr);
    if (out->requires_grad) {
        out->backprop = [a = a.get(), out = out.get()](const Mat& g, GradStore& gs) {
            const auto& y = out->value.array();
            gs.add(a, Mat(g.cwiseProduct((y * (1.0 - y)).matrix())));
        };
    }
    return out;
}

Value gelu(const Value& a) {
    Mat y = a->value.unaryExpr(
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
    return make(std::move(y), {a}, "gelu", [a](const Mat& g, GradStore& gs) {
        Mat d = a->value.unaryExpr([](double x) {
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
        gs.add(a, Mat(g.cwiseProduct(d)));
    });
}

Value xlogx(const Value& a) {
    Mat y = a->value.unaryExpr([](double x) { return x == 0.0 ? 0.0 : x * std::log(x); });
    return make(std::move(y), {a}, "xlogx", [a](const Mat& g, GradStore& gs) {
        Mat d = a->value.unaryExpr(
            [](double x) { return x == 0.0 ? 0.0 : std::log(x) + 1.0; });
        gs.add(a, Mat(g.cwiseProduct(d)));
    });
}

Value abs(const Value& a) {
    return make(a->value.cwiseAbs(), {a}, "abs", [a](const Mat& g, GradStore& gs) {
        Mat s = a->value.unaryExpr(
            [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
        gs.add(a, Mat(g.cwiseProduct(s)));
    });
}

Value clamp_min0(const Value& a) {
    return make(a->value.cwiseMax(0.0), {a}, "clamp_min0", [a](const Mat& g, GradStore& gs) {
        Mat m = a->value.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
        gs.add(a, Mat(g.cwiseProduct(m)));
    });
}

Value l2normalize_rows(const Value& a) {
    Eigen::VectorXd norms = a->value.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i)
        if (norms(i) == 0.0) throw NumericalError("l2normalize_rows: zero-norm row");
    Mat y = (a->value.array().colwise() / norms.array()).matrix();
    auto out = make(std::move(y), {a}, "l2norm", nullptr);
    if (out->requires_grad) {
        out->backprop = [a = a.get(), out = out.get(), norms](const Mat& g, GradStore& gs) {
            const Mat& y = out->value;
            Eigen::VectorXd gy = g.cwiseProduct(y).rowwise().sum();
            Mat da = (g - (y.array().colwise() * gy.array()).matrix());
            da = (da.array().colwise() / norms.array()).matrix();
            gs.add(a, da);
        };
    }
    return out;
}

Value layernorm_rows(const Value& a, const Value& gamma, const Value& beta, double eps) {
    Eigen::Index d = a->value.cols();
    if (gamma->value.rows() != 1 || gamma->value.cols() != d ||
        beta->value.rows() != 1 || beta->value.cols() != d)
        throw DataError("layernorm_rows: gamma/beta must be [1 x d]");
    Eigen::VectorXd mu = a->value.rowwise().mean();
    Mat centered = a->value.colwise() - mu;
    Eigen::VectorXd var = centered.array().square().rowwise().mean();
    Eigen::VectorXd inv_sd = (var.array() + eps).rsqrt();
    Mat xhat = (centered.array().colwise() * inv_sd.array()).matrix();
    Mat y = (xhat.array().rowwise() * gamma->value.row(0).array()).matrix();
    y = y.rowwise() + beta->value.row(0);
    auto out = make(std::move(y), {a, gamma, beta}, "layernorm", nullptr);
    if (out->requires_grad) {
        out->backprop = [a = a.get(), gamma, beta = beta.get(), xhat, inv_sd,
                         d](const Mat& g, GradStore& gs) {
            gs.add(beta, Mat(g.colwise().sum()));
            gs.add(gamma, Mat(g.cwiseProduct(xhat).colwise().sum()));
            // dxhat -> dx for each row:
            // dx = inv_sd/d * (d*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
            Mat dxhat = (g.array().rowwise() * gamma->value.row(0).array()).matrix();
            Eigen::VectorXd s1 = dxhat.rowwise().sum();
            Eigen::VectorXd s2 = dxhat.cwiseProduct(xhat).rowwise().sum();
            Mat dx = double(d) * dxhat;
            dx.colwise() -= s1;
            dx -= (xhat.array().colwise() * s2.array()).matrix();
            dx = (dx.array().colwise() * (inv_sd.array() / double(d))).matrix();
            gs.add(a, dx);
        };
    }
    return out;
}

Value cross_entropy_rows(const Value& logits, std::vector<int> targets) {
    Eigen::Index n = logits->value.rows(), k = logits->value.cols();
    if (static_cast<Eigen::Index>(targets.size()) != n)
        throw DataError("cross_entropy_rows: one target per row required");
    for (int t : targets)
        if (t < 0 || t >= k) throw DataError("cross_entropy_rows: target out of range");
    Mat v(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = logits->value.row(i).maxCoeff();
        double lse = m + std::log((logits->value.row(i).array() - m).exp().sum());
        v(i, 0) = lse - logits->value(i, targets[static_cast<size_t>(i)]);
    }
    return make(std::move(v), {logits}, "xent",
                [logits, targets = std::move(targets)](const Mat& g, GradStore& gs) {
                    Eigen::Index n = logits->value.rows();
                    Mat p = logits->value;
                    for (Eigen::Index i = 0; i < n; ++i) {
                        double m = p.row(i).maxCoeff();
                        p.row(i) = (p.row(i).array() - m).exp();
                        p.row(i) /= p.row(i).sum();
                        p(i, targets[static_cast<size_t>(i)]) -= 1.0;
                        p.row(i) *= g(i, 0);
                    }
                    gs.add(logits, p);
                });
}

Value detach(const Value& a) { return constant(a->value); }

GradStore backward(const Value& loss) {
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
        throw DataError("backward: loss must be scalar");
    GradStore gs;
    if (!loss->requires_grad) return gs;

    // iterative postorder DFS over grad-requiring subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    gs.add(loss, Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backprop) continue;
        const Mat* g = gs.find(n);
        if (g == nullptr) continue;
        n->backprop(*g, gs);
    }
    return gs;
}

}  // namespace crg::ad
