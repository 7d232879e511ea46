#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "crg/errors.hpp"

namespace crg::ad {

using Mat = Eigen::MatrixXd;

class GradStore;

/// One node of the reverse-mode tape. Values are dense double matrices;
/// scalars are 1x1. Nodes are immutable after construction; gradients live
/// in a per-backward GradStore so concurrent backward passes over shared
/// subgraphs (e.g. parameter leaves) do not race.
struct Node {
    Mat value;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Mat& grad_out, GradStore&)> backprop;
    bool requires_grad = false;
    const char* op = "";
};

using Value = std::shared_ptr<Node>;

class GradStore {
  public:
    /// Accumulate g into the slot for n. No-op when n does not require grad.
    void add(const Value& n, const Mat& g);
    void add(const Node* n, const Mat& g);

    /// Gradient for n, or nullptr if none was accumulated.
    const Mat* find(const Node* n) const;
    const Mat* find(const Value& n) const { return find(n.get()); }

    /// Merge another store into this one (entrywise sum).
    void merge(const GradStore& other);

  private:
    std::unordered_map<const Node*, Mat> grads_;
};

Value constant(Mat v);
Value constant_scalar(double v);
Value leaf(Mat v);  // trainable parameter leaf

inline double scalar(const Value& v) { return v->value(0, 0); }

// ---- arithmetic ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);  // elementwise
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);

// ---- structure ----
Value slice_rows(const Value& a, Eigen::Index r0, Eigen::Index nr);
Value slice_cols(const Value& a, Eigen::Index c0, Eigen::Index nc);
Value vstack(const std::vector<Value>& parts);
Value hstack(const std::vector<Value>& parts);
Value add_rowvec(const Value& a, const Value& r);   // a[n x m] + r[1 x m]
Value scale_rows(const Value& a, const Value& s);   // row i scaled by s(i,0)
Value gather_rows(const Value& table, std::vector<int> idx);

// ---- reductions ----
Value rowsum(const Value& a);  // [n x 1]
Value sum(const Value& a);     // [1 x 1]
Value mean(const Value& a);    // [1 x 1]

// ---- nonlinearities ----
Value softmax_rows(const Value& a);
Value log(const Value& a);
Value exp(const Value& a);
Value tanh(const Value& a);
Value sigmoid(const Value& a);
Value gelu(const Value& a);
Value xlogx(const Value& a);      // x*ln(x), 0 at x=0
Value abs(const Value& a);
Value clamp_min0(const Value& a);
Value l2normalize_rows(const Value& a);
Value layernorm_rows(const Value& a, const Value& gamma, const Value& beta,
                     double eps = 1e-5);

/// Per-row -log softmax(logits)[target]. Returns [n x 1].
Value cross_entropy_rows(const Value& logits, std::vector<int> targets);

/// Copy that blocks gradient flow.
Value detach(const Value& a);

/// Reverse pass from a scalar loss. Returns gradients for every reachable
/// grad-requiring node, keyed by node pointer.
GradStore backward(const Value& loss);

}  // namespace crg::ad
