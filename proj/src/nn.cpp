#include "crg/nn.hpp"

#include <cmath>

namespace crg::nn {

Value ParamStore::add(const std::string& name, Mat init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
    auto v = ad::leaf(std::move(init));
    index_[name] = params_.size();
    params_.emplace_back(name, v);
    return v;
}

Value ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return params_[it->second].second;
}

size_t ParamStore::count() const {
    size_t n = 0;
    for (const auto& [name, v] : params_) n += static_cast<size_t>(v->value.size());
    return n;
}

Mat init_fan_in(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
    double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
    return m;
}

Mat init_zeros(Eigen::Index rows, Eigen::Index cols) { return Mat::Zero(rows, cols); }

Linear::Linear(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
               Rng& rng, bool zero_init) {
    w = ps.add(prefix + ".w", zero_init ? init_zeros(in, out) : init_fan_in(in, out, in, rng));
    b = ps.add(prefix + ".b", init_zeros(1, out));
}

Value Linear::operator()(const Value& x) const {
    return ad::add_rowvec(ad::matmul(x, w), b);
}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, Eigen::Index in,
         const std::vector<Eigen::Index>& hidden, Eigen::Index out, Rng& rng) {
    Eigen::Index d = in;
    for (size_t i = 0; i < hidden.size(); ++i) {
        layers.emplace_back(ps, prefix + ".l" + std::to_string(i), d, hidden[i], rng);
        d = hidden[i];
    }
    layers.emplace_back(ps, prefix + ".l" + std::to_string(hidden.size()), d, out, rng);
}

Value Mlp::operator()(const Value& x) const {
    Value h = x;
    for (size_t i = 0; i + 1 < layers.size(); ++i) h = ad::tanh(layers[i](h));
    return layers.back()(h);
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, Eigen::Index d) {
    gamma = ps.add(prefix + ".gamma", Mat::Ones(1, d));
    beta = ps.add(prefix + ".beta", Mat::Zero(1, d));
}

AttentionParams::AttentionParams(ParamStore& ps, const std::string& prefix, Eigen::Index d,
                                 int heads, Rng& rng)
    : n_heads(heads) {
    if (d % heads != 0) throw ConfigError("attention: d must be divisible by n_heads");
    wq = ps.add(prefix + ".wq", init_fan_in(d, d, d, rng));
    wk = ps.add(prefix + ".wk", init_fan_in(d, d, d, rng));
    wv = ps.add(prefix + ".wv", init_fan_in(d, d, d, rng));
    wo = ps.add(prefix + ".wo", init_fan_in(d, d, d, rng));
    bq = ps.add(prefix + ".bq", init_zeros(1, d));
    bk = ps.add(prefix + ".bk", init_zeros(1, d));
    bv = ps.add(prefix + ".bv", init_zeros(1, d));
    bo = ps.add(prefix + ".bo", init_zeros(1, d));
}

AttentionResult multihead_attention(const AttentionParams& p, const Value& q_in,
                                    const Value& kv_in, const Value& mask) {
    Eigen::Index d = p.wq->value.rows();
    Eigen::Index dk = d / p.n_heads;
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Value q = ad::add_rowvec(ad::matmul(q_in, p.wq), p.bq);
    Value k = ad::add_rowvec(ad::matmul(kv_in, p.wk), p.bk);
    Value v = ad::add_rowvec(ad::matmul(kv_in, p.wv), p.bv);

    AttentionResult res;
    std::vector<Value> head_outs;
    for (int h = 0; h < p.n_heads; ++h) {
        Value qh = ad::slice_cols(q, h * dk, dk);
        Value kh = ad::slice_cols(k, h * dk, dk);
        Value vh = ad::slice_cols(v, h * dk, dk);
        Value scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dk);
        if (mask) scores = ad::add(scores, mask);
        Value attn = ad::softmax_rows(scores);
        res.head_attn.push_back(attn);
        head_outs.push_back(ad::matmul(attn, vh));
    }
    Value cat = ad::hstack(head_outs);
    res.out = ad::add_rowvec(ad::matmul(cat, p.wo), p.bo);
    return res;
}

Mat causal_prefix_mask(Eigen::Index prefix_len, Eigen::Index text_len) {
    Eigen::Index n = prefix_len + text_len;
    Mat m = Mat::Zero(n, n);
    constexpr double kNegInf = -1e30;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            bool allowed;
            if (i < prefix_len)
                allowed = j < prefix_len;  // prefix attends to prefix only
            else
                allowed = j < prefix_len || j <= i;  // text: prefix + earlier text
            if (!allowed) m(i, j) = kNegInf;
        }
    }
    return m;
}

Adam::Adam(const ParamStore& ps, AdamConfig cfg) : ps_(ps), cfg_(cfg) {
    for (const auto& [name, v] : ps.entries()) {
        m_.push_back(Mat::Zero(v->value.rows(), v->value.cols()));
        v_.push_back(Mat::Zero(v->value.rows(), v->value.cols()));
    }
}

void Adam::step(const ad::GradStore& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto& entries = ps_.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
        const Mat* g = grads.find(entries[i].second.get());
        if (g == nullptr) continue;
        Mat& m = m_[i];
        Mat& v = v_[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * (*g);
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g->cwiseProduct(*g);
        Mat mhat = m / bc1;
        Mat vhat = v / bc2;
        entries[i].second->value -=
            cfg_.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg_.eps).matrix());
    }
}

}  // namespace crg::nn
