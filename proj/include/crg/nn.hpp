#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "crg/autodiff.hpp"
#include "crg/rng.hpp"

namespace crg::nn {

using ad::Mat;
using ad::Value;

/// Ordered registry of named parameter leaves. Registration order is the
/// canonical order for optimizer updates, gradient reduction and checkpoints.
class ParamStore {
  public:
    Value add(const std::string& name, Mat init);
    Value get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::pair<std::string, Value>>& entries() const { return params_; }
    size_t count() const;  // total scalar parameters

  private:
    std::vector<std::pair<std::string, Value>> params_;
    std::unordered_map<std::string, size_t> index_;
};

/// Uniform(-s, s) with s = sqrt(1 / fan_in).
Mat init_fan_in(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);
Mat init_zeros(Eigen::Index rows, Eigen::Index cols);

// ---- layer builders (graph constructors over ParamStore entries) ----

struct Linear {
    Value w;  // [in x out]
    Value b;  // [1 x out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
           Rng& rng, bool zero_init = false);
    Value operator()(const Value& x) const;  // x [n x in] -> [n x out]
};

/// Row-wise MLP with tanh hidden activations. Empty hidden list is a single
/// affine map.
struct Mlp {
    std::vector<Linear> layers;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& prefix, Eigen::Index in,
        const std::vector<Eigen::Index>& hidden, Eigen::Index out, Rng& rng);
    Value operator()(const Value& x) const;
};

struct LayerNorm {
    Value gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, Eigen::Index d);
    Value operator()(const Value& x) const { return ad::layernorm_rows(x, gamma, beta); }
};

struct AttentionParams {
    Value wq, wk, wv, wo;  // each [d x d]
    Value bq, bk, bv, bo;  // [1 x d]
    int n_heads = 1;
    AttentionParams() = default;
    AttentionParams(ParamStore& ps, const std::string& prefix, Eigen::Index d, int n_heads,
                    Rng& rng);
};

struct AttentionResult {
    Value out;                     // [n_q x d]
    std::vector<Value> head_attn;  // per head, [n_q x n_kv], rows sum to 1
};

/// Scaled dot-product multi-head attention. `mask` (optional) is added to
/// the pre-softmax scores of every head; use 0 / -1e30 entries.
AttentionResult multihead_attention(const AttentionParams& p, const Value& q_in,
                                    const Value& kv_in, const Value& mask = nullptr);

/// Additive score mask where row i may attend to column j iff allowed(i, j).
Mat causal_prefix_mask(Eigen::Index prefix_len, Eigen::Index text_len);

// ---- optimizer ----

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam(const ParamStore& ps, AdamConfig cfg);
    void step(const ad::GradStore& grads);

    int64_t t() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // checkpoint access, aligned with ParamStore order
    std::vector<Mat>& m_state() { return m_; }
    std::vector<Mat>& v_state() { return v_; }
    void set_t(int64_t t) { t_ = t; }

  private:
    const ParamStore& ps_;
    AdamConfig cfg_;
    std::vector<Mat> m_, v_;
    int64_t t_ = 0;
};

}  // namespace crg::nn
