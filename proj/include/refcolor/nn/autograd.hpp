#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "refcolor/nn/tensor.hpp"

namespace refcolor::nn {

// Reverse-mode tape node. Graphs are built eagerly by the op functions
// below and freed when the last Value handle drops.
struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // pulls node.grad into parents

    void accumulate(const Tensor& g);
    Tensor& ensure_grad();
};

using Value = std::shared_ptr<Node>;

// Leaf without gradient (inputs, frozen tensors).
Value constant(Tensor t);
// Trainable leaf.
Value param(Tensor t);

// Backpropagate from a scalar root (seeds grad = 1).
void backward(const Value& root);

// ---- elementwise ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value exp_op(const Value& a);
Value silu(const Value& a);

// ---- shape / assembly ----
Value reshape(const Value& a, std::vector<int> shape);
Value concat_channels(const std::vector<Value>& xs);          // (N,C_i,H,W) -> sum C_i
Value slice_channels(const Value& a, int c_begin, int c_end);  // [c_begin, c_end)

// (N,C,H,W) <-> (N, H*W, C) token layout for attention.
Value nchw_to_ntc(const Value& a);
Value ntc_to_nchw(const Value& a, int h, int w);

// ---- linear algebra ----
Value matmul(const Value& a, const Value& b);          // (M,K)x(K,N)
Value bmm(const Value& a, const Value& b);             // (B,M,K)x(B,K,N)
Value transpose_last2(const Value& a);                 // (B,M,N)->(B,N,M)
Value softmax_last(const Value& a);

// ---- neural net primitives ----
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);
Value linear(const Value& x, const Value& w, const Value& b);  // x:(N,D) w:(Dout,D)
Value group_norm(const Value& x, const Value& gamma, const Value& beta, int groups,
                 double eps = 1e-5);
Value avg_pool2(const Value& x);
Value upsample_nearest2(const Value& x);
// x:(N,C,H,W) + bias:(N,C) broadcast over spatial dims.
Value add_sample_channel_bias(const Value& x, const Value& bias);

// ---- reductions ----
Value mean_all(const Value& a);                 // scalar
Value mse_loss(const Value& a, const Value& b);  // mean (a-b)^2
Value l1_loss(const Value& a, const Value& b);   // mean |a-b|

}  // namespace refcolor::nn
