#include "refcolor/nn/layers.hpp"

#include <cmath>

namespace refcolor::nn {

Tensor randn_tensor(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal() * stddev;
    return t;
}

Conv2d::Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng, double gain)
    : stride(stride), pad(pad) {
    const double fan_in = static_cast<double>(cin) * k * k;
    const double stddev = gain > 0.0 ? gain / std::sqrt(fan_in) : 0.0;
    w = param(randn_tensor({cout, cin, k, k}, rng, stddev));
    b = param(Tensor({cout}));
}

void Conv2d::params(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

void Conv2d::copy_from(const Conv2d& src) {
    w->val = src.w->val;
    b->val = src.b->val;
}

Linear::Linear(int din, int dout, Rng& rng, double gain) {
    const double stddev = gain > 0.0 ? gain / std::sqrt(static_cast<double>(din)) : 0.0;
    w = param(randn_tensor({dout, din}, rng, stddev));
    b = param(Tensor({dout}));
}

void Linear::params(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

void Linear::copy_from(const Linear& src) {
    w->val = src.w->val;
    b->val = src.b->val;
}

GroupNorm::GroupNorm(int channels, int groups) : groups(groups) {
    gamma = param(Tensor({channels}, 1.0));
    beta = param(Tensor({channels}));
}

void GroupNorm::params(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

void GroupNorm::copy_from(const GroupNorm& src) {
    gamma->val = src.gamma->val;
    beta->val = src.beta->val;
}

LoRAAdapter::LoRAAdapter(int cin, int cout, int rank, double alpha, Rng& rng)
    : scaling(alpha / rank), rank(rank) {
    a = param(randn_tensor({rank, cin, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(cin))));
    b = param(Tensor({cout, rank, 1, 1}));  // zero: identity at start
}

Value LoRAAdapter::delta(const Value& x) const {
    Value za = constant(Tensor({a->val.dim(0)}));
    Value zb = constant(Tensor({b->val.dim(0)}));
    Value down = conv2d(x, a, za, 1, 0);
    Value up = conv2d(down, b, zb, 1, 0);
    return scale(up, scaling);
}

void LoRAAdapter::params(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".a", a);
    out.emplace_back(prefix + ".b", b);
}

Adam::Adam(std::vector<Value> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->val.shape);
        v_.emplace_back(p->val.shape);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->grad = Tensor();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Node& p = *params_[i];
        if (p.grad.data.empty()) continue;  // no gradient reached this parameter
        for (size_t j = 0; j < p.val.data.size(); ++j) {
            const double g = p.grad.data[j];
            m_[i].data[j] = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g;
            v_[i].data[j] = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i].data[j] / bc1;
            const double vhat = v_[i].data[j] / bc2;
            p.val.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace refcolor::nn
