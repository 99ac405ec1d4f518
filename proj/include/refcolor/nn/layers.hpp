#pragma once

#include <string>
#include <utility>
#include <vector>

#include "refcolor/nn/autograd.hpp"
#include "refcolor/rng.hpp"

namespace refcolor::nn {

using ParamList = std::vector<std::pair<std::string, Value>>;

Tensor randn_tensor(std::vector<int> shape, Rng& rng, double stddev);

struct Conv2d {
    Value w, b;
    int stride = 1, pad = 1;

    Conv2d() = default;
    // Kaiming-style init: stddev = gain / sqrt(fan_in). gain 0 zero-inits.
    Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng, double gain = 1.0);

    Value operator()(const Value& x) const { return conv2d(x, w, b, stride, pad); }
    void params(ParamList& out, const std::string& prefix) const;
    void copy_from(const Conv2d& src);
};

struct Linear {
    Value w, b;

    Linear() = default;
    Linear(int din, int dout, Rng& rng, double gain = 1.0);

    Value operator()(const Value& x) const { return linear(x, w, b); }
    void params(ParamList& out, const std::string& prefix) const;
    void copy_from(const Linear& src);
};

struct GroupNorm {
    Value gamma, beta;
    int groups = 8;

    GroupNorm() = default;
    GroupNorm(int channels, int groups);

    Value operator()(const Value& x) const { return group_norm(x, gamma, beta, groups); }
    void params(ParamList& out, const std::string& prefix) const;
    void copy_from(const GroupNorm& src);
};

// Low-rank additive delta for a 1x1 projection: scale * B(A(x)).
// B starts at zero so the adapter is the identity at construction.
struct LoRAAdapter {
    Value a;  // (rank, cin, 1, 1)
    Value b;  // (cout, rank, 1, 1)
    double scaling = 1.0;
    int rank = 0;

    LoRAAdapter() = default;
    LoRAAdapter(int cin, int cout, int rank, double alpha, Rng& rng);

    Value delta(const Value& x) const;
    void params(ParamList& out, const std::string& prefix) const;
};

// Adam with bias correction; owns nothing but the moment buffers.
class Adam {
public:
    explicit Adam(std::vector<Value> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void zero_grad();
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    const std::vector<Value>& params() const { return params_; }

private:
    std::vector<Value> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace refcolor::nn
