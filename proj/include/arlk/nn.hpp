#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "arlk/rng.hpp"
#include "arlk/tensor.hpp"

// Minimal dense-tensor NN engine: affine and convolution layers, tanh
// activations, a simple recurrent cell, the channel-pooled spatial attention
// block, Adam, and soft target updates. Everything is double precision and
// batched along the leading dimension.

namespace arlk::nn {

struct ParamRef {
    std::string name;
    Tensor* t;
};
using ParamSet = std::vector<ParamRef>;

void zero_grads(const ParamSet& ps);
void copy_params(const ParamSet& dst, const ParamSet& src);

// theta' <- tau * theta + (1 - tau) * theta'
void soft_update(const ParamSet& target, const ParamSet& online, double tau);

// Uniform +-1/sqrt(fan_in) init.
void init_uniform_fanin(Tensor& w, int fan_in, Rng& rng);

// ---------------------------------------------------------------------------

struct Dense {
    Tensor w;  // [out, in]
    Tensor b;  // [out]

    Dense() = default;
    Dense(int in, int out, Rng& rng);

    int in() const { return static_cast<int>(w.dim(1)); }
    int out() const { return static_cast<int>(w.dim(0)); }

    // x: [N, in] -> [N, out]
    Tensor forward(const Tensor& x) const;
    // Accumulates into w.grad / b.grad, returns dx.
    Tensor backward(const Tensor& x, const Tensor& dy);

    ParamSet params(const std::string& prefix);
};

struct Tanh {
    static Tensor forward(const Tensor& x);
    // y is the forward output.
    static Tensor backward(const Tensor& y, const Tensor& dy);
};

struct Sigmoid {
    static Tensor forward(const Tensor& x);
    static Tensor backward(const Tensor& y, const Tensor& dy);
};

struct Conv2d {
    int in_c = 0, out_c = 0, kh = 0, kw = 0, stride = 1, pad = 0;
    Tensor w;  // [out_c, in_c*kh*kw]
    Tensor b;  // [out_c]

    Conv2d() = default;
    Conv2d(int in_c, int out_c, int k, int stride, int pad, Rng& rng);

    int out_h(int h) const { return (h + 2 * pad - kh) / stride + 1; }
    int out_w(int w_) const { return (w_ + 2 * pad - kw) / stride + 1; }

    // x: [N, in_c, H, W] -> [N, out_c, OH, OW]
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& dy);

    ParamSet params(const std::string& prefix);
};

// mask = sigmoid(f7(concat(channel-avg F, channel-max F)));  F' = F (.) mask
struct SpatialAttention {
    Conv2d f7;  // 2 -> 1, 7x7, stride 1, pad 3

    SpatialAttention() = default;
    explicit SpatialAttention(Rng& rng);

    struct Out {
        Tensor mask;      // [N, 1, H, W]
        Tensor attended;  // [N, C, H, W]
    };
    struct Ctx {
        Tensor pooled;              // [N, 2, H, W]
        Tensor mask;                // [N, 1, H, W]
        std::vector<int> argmax_c;  // [N*H*W], channel index of the max pool
    };

    Out forward(const Tensor& f, Ctx* ctx = nullptr) const;
    // d_attended (+ optional d_mask) -> dF; accumulates f7 grads.
    Tensor backward(const Tensor& f, const Ctx& ctx, const Tensor& d_attended,
                    const Tensor* d_mask = nullptr);

    ParamSet params(const std::string& prefix);
};

// h = tanh(W_h h_prev + W_o o + b)
struct RnnCell {
    Tensor w_h;  // [hidden, hidden]
    Tensor w_o;  // [hidden, obs]
    Tensor b;    // [hidden]

    RnnCell() = default;
    RnnCell(int obs_dim, int hidden_dim, Rng& rng);

    int hidden() const { return static_cast<int>(w_h.dim(0)); }
    int obs_dim() const { return static_cast<int>(w_o.dim(1)); }

    // h_prev: [N, hidden], o: [N, obs] -> h: [N, hidden]
    Tensor step(const Tensor& h_prev, const Tensor& o) const;
    // Returns (dh_prev, do); accumulates parameter grads.
    std::pair<Tensor, Tensor> backward(const Tensor& h_prev, const Tensor& o,
                                       const Tensor& h, const Tensor& dh);

    ParamSet params(const std::string& prefix);
};

// Unrolled recurrent pass over a window of observations.
struct RnnUnroll {
    std::vector<Tensor> hs;  // hs[t] = hidden after step t, t = 0..T-1
};
RnnUnroll rnn_forward(const RnnCell& cell, const Tensor& h0, const std::vector<Tensor>& obs);
// dhs[t] = upstream gradient on hs[t] (may be empty tensors). Returns dh0.
Tensor rnn_backward(RnnCell& cell, const Tensor& h0, const std::vector<Tensor>& obs,
                    const RnnUnroll& fwd, const std::vector<Tensor>& dhs);

// z = tanh(FC(concat(a, b)))
struct Fusion {
    Dense fc;
    int in_a = 0, in_b = 0;

    Fusion() = default;
    Fusion(int in_a, int in_b, int out, Rng& rng);

    struct Ctx {
        Tensor joined;  // [N, in_a+in_b]
        Tensor z;       // [N, out]
    };
    Tensor forward(const Tensor& a, const Tensor& b, Ctx* ctx = nullptr) const;
    std::pair<Tensor, Tensor> backward(const Ctx& ctx, const Tensor& dz);

    ParamSet params(const std::string& prefix);
};

// Dense stack with tanh hidden activations and linear or tanh output.
struct Mlp {
    std::vector<Dense> layers;
    bool tanh_out = false;

    Mlp() = default;
    Mlp(const std::vector<int>& dims, bool tanh_out, Rng& rng);

    struct Ctx {
        std::vector<Tensor> acts;  // acts[0] = input, acts[i] = output of layer i
    };

    Tensor forward(const Tensor& x, Ctx* ctx = nullptr) const;
    Tensor backward(const Ctx& ctx, const Tensor& dy);

    ParamSet params(const std::string& prefix);
};

// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed ParamSet. Moment buffers are addressed by
// parameter name so they can be checkpointed.
class Adam {
  public:
    Adam() = default;
    Adam(ParamSet params, AdamConfig cfg);

    // One update from the current grads; does not clear them.
    void step();

    std::int64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // Accesses for checkpointing.
    const ParamSet& params() const { return params_; }
    Tensor& moment1(std::size_t i) { return m_[i]; }
    Tensor& moment2(std::size_t i) { return v_[i]; }
    void set_steps(std::int64_t t) { t_ = t; }

  private:
    ParamSet params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace arlk::nn
