#include "arlk/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "arlk/kernels.hpp"

namespace arlk::nn {

namespace k = arlk::kernels;

void zero_grads(const ParamSet& ps) {
    for (const auto& p : ps) p.t->zero_grad();
}

void copy_params(const ParamSet& dst, const ParamSet& src) {
    if (dst.size() != src.size()) throw std::invalid_argument("copy_params: size mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (!dst[i].t->same_shape(*src[i].t)) throw std::invalid_argument("copy_params: shape mismatch at " + dst[i].name);
        dst[i].t->values() = src[i].t->values();
    }
}

void soft_update(const ParamSet& target, const ParamSet& online, double tau) {
    if (target.size() != online.size()) throw std::invalid_argument("soft_update: size mismatch");
    for (std::size_t i = 0; i < target.size(); ++i)
        k::ops().lerp(tau, online[i].t->data(), target[i].t->data(), static_cast<int>(target[i].t->numel()));
}

void init_uniform_fanin(Tensor& w, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    for (auto& x : w.values()) x = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------

Dense::Dense(int in, int out, Rng& rng) : w({out, in}), b({out}) {
    init_uniform_fanin(w, in, rng);
    init_uniform_fanin(b, in, rng);
}

Tensor Dense::forward(const Tensor& x) const {
    const auto n = x.dim(0);
    if (x.dim(1) != w.dim(1)) throw std::invalid_argument("dense: input dim mismatch " + x.shape_str());
    Tensor y({n, w.dim(0)});
    // y = x * W^T
    k::ops().gemm(false, true, static_cast<int>(n), out(), in(), 1.0, x.data(), in(), w.data(), in(), 0.0,
                  y.data(), out());
    for (std::int64_t i = 0; i < n; ++i) k::ops().add(b.data(), y.data() + i * out(), out());
    return y;
}

Tensor Dense::backward(const Tensor& x, const Tensor& dy) {
    const auto n = x.dim(0);
    // dW += dy^T * x
    k::ops().gemm(true, false, out(), in(), static_cast<int>(n), 1.0, dy.data(), out(), x.data(), in(), 1.0,
                  w.grad_data(), in());
    double* db = b.grad_data();
    for (std::int64_t i = 0; i < n; ++i) k::ops().add(dy.data() + i * out(), db, out());
    Tensor dx({n, w.dim(1)});
    // dx = dy * W
    k::ops().gemm(false, false, static_cast<int>(n), in(), out(), 1.0, dy.data(), out(), w.data(), in(), 0.0,
                  dx.data(), in());
    return dx;
}

ParamSet Dense::params(const std::string& prefix) {
    return {{prefix + ".w", &w}, {prefix + ".b", &b}};
}

Tensor Tanh::forward(const Tensor& x) {
    Tensor y(x.shape());
    k::tanh_fwd(x.data(), y.data(), static_cast<int>(x.numel()));
    return y;
}

Tensor Tanh::backward(const Tensor& y, const Tensor& dy) {
    Tensor dx(y.shape());
    k::ops().tanh_bwd(y.data(), dy.data(), dx.data(), static_cast<int>(y.numel()));
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    Tensor y(x.shape());
    k::sigmoid_fwd(x.data(), y.data(), static_cast<int>(x.numel()));
    return y;
}

Tensor Sigmoid::backward(const Tensor& y, const Tensor& dy) {
    Tensor dx(y.shape());
    k::ops().sigmoid_bwd(y.data(), dy.data(), dx.data(), static_cast<int>(y.numel()));
    return dx;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_c_, int out_c_, int ksize, int stride_, int pad_, Rng& rng)
    : in_c(in_c_), out_c(out_c_), kh(ksize), kw(ksize), stride(stride_), pad(pad_),
      w({out_c_, static_cast<std::int64_t>(in_c_) * ksize * ksize}), b({out_c_}) {
    init_uniform_fanin(w, in_c * kh * kw, rng);
    init_uniform_fanin(b, in_c * kh * kw, rng);
}

namespace {

// cols: [in_c*kh*kw, OH*OW]
void im2col(const double* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, double* cols) {
    const int patch = kh * kw;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* dst = cols + static_cast<std::ptrdiff_t>(ci * patch + ky * kw + kx) * (oh * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = 0.0;
                        continue;
                    }
                    const double* src = x + static_cast<std::ptrdiff_t>(ci) * h * w + static_cast<std::ptrdiff_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[oy * ow + ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, int c, int h, int w, int kh, int kw, int stride,
                int pad, int oh, int ow, double* dx) {
    const int patch = kh * kw;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* src = cols + static_cast<std::ptrdiff_t>(ci * patch + ky * kw + kx) * (oh * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = dx + static_cast<std::ptrdiff_t>(ci) * h * w + static_cast<std::ptrdiff_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.shape().size() != 4 || x.dim(1) != in_c)
        throw std::invalid_argument("conv2d: expected [N," + std::to_string(in_c) + ",H,W], got " + x.shape_str());
    const int n = static_cast<int>(x.dim(0));
    const int h = static_cast<int>(x.dim(2));
    const int w_ = static_cast<int>(x.dim(3));
    const int oh = out_h(h), ow = out_w(w_);
    const int kdim = in_c * kh * kw;
    const int p = oh * ow;

    Tensor y({n, out_c, oh, ow});
    std::vector<double> cols(static_cast<std::size_t>(kdim) * p);
    for (int i = 0; i < n; ++i) {
        im2col(x.data() + static_cast<std::ptrdiff_t>(i) * in_c * h * w_, in_c, h, w_, kh, kw, stride, pad, oh, ow,
               cols.data());
        double* yi = y.data() + static_cast<std::ptrdiff_t>(i) * out_c * p;
        k::ops().gemm(false, false, out_c, p, kdim, 1.0, w.data(), kdim, cols.data(), p, 0.0, yi, p);
        for (int oc = 0; oc < out_c; ++oc) {
            const double bias = b[oc];
            double* row = yi + static_cast<std::ptrdiff_t>(oc) * p;
            for (int j = 0; j < p; ++j) row[j] += bias;
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy) {
    const int n = static_cast<int>(x.dim(0));
    const int h = static_cast<int>(x.dim(2));
    const int w_ = static_cast<int>(x.dim(3));
    const int oh = out_h(h), ow = out_w(w_);
    const int kdim = in_c * kh * kw;
    const int p = oh * ow;

    Tensor dx(x.shape());
    std::vector<double> cols(static_cast<std::size_t>(kdim) * p);
    std::vector<double> dcols(static_cast<std::size_t>(kdim) * p);
    double* dwp = w.grad_data();
    double* dbp = b.grad_data();
    for (int i = 0; i < n; ++i) {
        const double* xi = x.data() + static_cast<std::ptrdiff_t>(i) * in_c * h * w_;
        const double* dyi = dy.data() + static_cast<std::ptrdiff_t>(i) * out_c * p;
        im2col(xi, in_c, h, w_, kh, kw, stride, pad, oh, ow, cols.data());
        // dW += dy_i * cols^T
        k::ops().gemm(false, true, out_c, kdim, p, 1.0, dyi, p, cols.data(), p, 1.0, dwp, kdim);
        for (int oc = 0; oc < out_c; ++oc) {
            const double* row = dyi + static_cast<std::ptrdiff_t>(oc) * p;
            double s = 0.0;
            for (int j = 0; j < p; ++j) s += row[j];
            dbp[oc] += s;
        }
        // dcols = W^T * dy_i
        k::ops().gemm(true, false, kdim, p, out_c, 1.0, w.data(), kdim, dyi, p, 0.0, dcols.data(), p);
        col2im_add(dcols.data(), in_c, h, w_, kh, kw, stride, pad, oh, ow,
                   dx.data() + static_cast<std::ptrdiff_t>(i) * in_c * h * w_);
    }
    return dx;
}

ParamSet Conv2d::params(const std::string& prefix) {
    return {{prefix + ".w", &w}, {prefix + ".b", &b}};
}

// ---------------------------------------------------------------------------

SpatialAttention::SpatialAttention(Rng& rng) : f7(2, 1, 7, 1, 3, rng) {}

SpatialAttention::Out SpatialAttention::forward(const Tensor& f, Ctx* ctx) const {
    if (f.shape().size() != 4) throw std::invalid_argument("spatial_attention: expected [N,C,H,W]");
    const int n = static_cast<int>(f.dim(0));
    const int c = static_cast<int>(f.dim(1));
    const int h = static_cast<int>(f.dim(2));
    const int w_ = static_cast<int>(f.dim(3));
    const int hw = h * w_;

    Tensor pooled({n, 2, h, w_});
    std::vector<int> argmax(static_cast<std::size_t>(n) * hw, 0);
    for (int i = 0; i < n; ++i) {
        const double* fi = f.data() + static_cast<std::ptrdiff_t>(i) * c * hw;
        double* avg = pooled.data() + static_cast<std::ptrdiff_t>(i) * 2 * hw;
        double* mx = avg + hw;
        for (int j = 0; j < hw; ++j) {
            double s = fi[j];
            double m = fi[j];
            int am = 0;
            for (int ci = 1; ci < c; ++ci) {
                const double v = fi[static_cast<std::ptrdiff_t>(ci) * hw + j];
                s += v;
                if (v > m) {
                    m = v;
                    am = ci;
                }
            }
            avg[j] = s / c;
            mx[j] = m;
            argmax[static_cast<std::size_t>(i) * hw + j] = am;
        }
    }

    Tensor logits = f7.forward(pooled);
    Tensor mask = Sigmoid::forward(logits);

    Out out;
    out.mask = mask;
    out.attended = Tensor(f.shape());
    for (int i = 0; i < n; ++i) {
        const double* mi = mask.data() + static_cast<std::ptrdiff_t>(i) * hw;
        for (int ci = 0; ci < c; ++ci) {
            const double* src = f.data() + (static_cast<std::ptrdiff_t>(i) * c + ci) * hw;
            double* dst = out.attended.data() + (static_cast<std::ptrdiff_t>(i) * c + ci) * hw;
            for (int j = 0; j < hw; ++j) dst[j] = src[j] * mi[j];
        }
    }
    if (ctx) {
        ctx->pooled = std::move(pooled);
        ctx->mask = out.mask;
        ctx->argmax_c = std::move(argmax);
    }
    return out;
}

Tensor SpatialAttention::backward(const Tensor& f, const Ctx& ctx, const Tensor& d_attended,
                                  const Tensor* d_mask_extra) {
    const int n = static_cast<int>(f.dim(0));
    const int c = static_cast<int>(f.dim(1));
    const int hw = static_cast<int>(f.dim(2) * f.dim(3));

    Tensor dmask({n, 1, f.dim(2), f.dim(3)});
    Tensor df(f.shape());
    for (int i = 0; i < n; ++i) {
        const double* mi = ctx.mask.data() + static_cast<std::ptrdiff_t>(i) * hw;
        double* dmi = dmask.data() + static_cast<std::ptrdiff_t>(i) * hw;
        for (int ci = 0; ci < c; ++ci) {
            const std::ptrdiff_t off = (static_cast<std::ptrdiff_t>(i) * c + ci) * hw;
            const double* da = d_attended.data() + off;
            const double* fi = f.data() + off;
            double* dfi = df.data() + off;
            for (int j = 0; j < hw; ++j) {
                dfi[j] = da[j] * mi[j];
                dmi[j] += da[j] * fi[j];
            }
        }
    }
    if (d_mask_extra) k::ops().add(d_mask_extra->data(), dmask.data(), static_cast<int>(dmask.numel()));

    Tensor dlogits = Sigmoid::backward(ctx.mask, dmask);
    Tensor dpooled = f7.backward(ctx.pooled, dlogits);

    for (int i = 0; i < n; ++i) {
        const double* davg = dpooled.data() + static_cast<std::ptrdiff_t>(i) * 2 * hw;
        const double* dmax = davg + hw;
        for (int j = 0; j < hw; ++j) {
            const double g = davg[j] / c;
            for (int ci = 0; ci < c; ++ci)
                df.data()[(static_cast<std::ptrdiff_t>(i) * c + ci) * hw + j] += g;
            const int am = ctx.argmax_c[static_cast<std::size_t>(i) * hw + j];
            df.data()[(static_cast<std::ptrdiff_t>(i) * c + am) * hw + j] += dmax[j];
        }
    }
    return df;
}

ParamSet SpatialAttention::params(const std::string& prefix) { return f7.params(prefix + ".f7"); }

// ---------------------------------------------------------------------------

RnnCell::RnnCell(int obs_dim_, int hidden_dim, Rng& rng)
    : w_h({hidden_dim, hidden_dim}), w_o({hidden_dim, obs_dim_}), b({hidden_dim}) {
    init_uniform_fanin(w_o, obs_dim_, rng);
    init_uniform_fanin(b, hidden_dim, rng);
    // Scale the recurrent matrix to spectral radius ~0.9 so long rollouts
    // cannot blow the hidden state up.
    init_uniform_fanin(w_h, hidden_dim, rng);
    Tensor v({hidden_dim});
    for (auto& x : v.values()) x = rng.normal();
    Tensor tmp({hidden_dim});
    double norm = 1.0;
    for (int it = 0; it < 30; ++it) {
        k::ops().gemm(false, false, hidden_dim, 1, hidden_dim, 1.0, w_h.data(), hidden_dim, v.data(), 1, 0.0,
                      tmp.data(), 1);
        norm = std::sqrt(k::ops().dot(tmp.data(), tmp.data(), hidden_dim));
        if (norm < 1e-12) break;
        for (int i = 0; i < hidden_dim; ++i) v[i] = tmp[i] / norm;
    }
    if (norm > 1e-12) k::ops().scal(0.9 / norm, w_h.data(), static_cast<int>(w_h.numel()));
}

Tensor RnnCell::step(const Tensor& h_prev, const Tensor& o) const {
    const auto n = h_prev.dim(0);
    if (h_prev.dim(1) != hidden()) throw std::invalid_argument("rnn_step: hidden dim mismatch");
    if (o.dim(0) != n || o.dim(1) != obs_dim()) throw std::invalid_argument("rnn_step: obs dim mismatch");
    Tensor z({n, hidden()});
    k::ops().gemm(false, true, static_cast<int>(n), hidden(), hidden(), 1.0, h_prev.data(), hidden(), w_h.data(),
                  hidden(), 0.0, z.data(), hidden());
    k::ops().gemm(false, true, static_cast<int>(n), hidden(), obs_dim(), 1.0, o.data(), obs_dim(), w_o.data(),
                  obs_dim(), 1.0, z.data(), hidden());
    for (std::int64_t i = 0; i < n; ++i) k::ops().add(b.data(), z.data() + i * hidden(), hidden());
    return Tanh::forward(z);
}

std::pair<Tensor, Tensor> RnnCell::backward(const Tensor& h_prev, const Tensor& o, const Tensor& h,
                                            const Tensor& dh) {
    const auto n = h_prev.dim(0);
    Tensor dz = Tanh::backward(h, dh);
    // dW_h += dz^T h_prev ; dW_o += dz^T o ; db += colsum dz
    k::ops().gemm(true, false, hidden(), hidden(), static_cast<int>(n), 1.0, dz.data(), hidden(), h_prev.data(),
                  hidden(), 1.0, w_h.grad_data(), hidden());
    k::ops().gemm(true, false, hidden(), obs_dim(), static_cast<int>(n), 1.0, dz.data(), hidden(), o.data(),
                  obs_dim(), 1.0, w_o.grad_data(), obs_dim());
    double* db = b.grad_data();
    for (std::int64_t i = 0; i < n; ++i) k::ops().add(dz.data() + i * hidden(), db, hidden());
    Tensor dh_prev({n, hidden()});
    k::ops().gemm(false, false, static_cast<int>(n), hidden(), hidden(), 1.0, dz.data(), hidden(), w_h.data(),
                  hidden(), 0.0, dh_prev.data(), hidden());
    Tensor do_({n, obs_dim()});
    k::ops().gemm(false, false, static_cast<int>(n), obs_dim(), hidden(), 1.0, dz.data(), hidden(), w_o.data(),
                  obs_dim(), 0.0, do_.data(), obs_dim());
    return {std::move(dh_prev), std::move(do_)};
}

ParamSet RnnCell::params(const std::string& prefix) {
    return {{prefix + ".w_h", &w_h}, {prefix + ".w_o", &w_o}, {prefix + ".b", &b}};
}

RnnUnroll rnn_forward(const RnnCell& cell, const Tensor& h0, const std::vector<Tensor>& obs) {
    RnnUnroll u;
    u.hs.reserve(obs.size());
    const Tensor* h = &h0;
    for (const auto& o : obs) {
        u.hs.push_back(cell.step(*h, o));
        h = &u.hs.back();
    }
    return u;
}

Tensor rnn_backward(RnnCell& cell, const Tensor& h0, const std::vector<Tensor>& obs, const RnnUnroll& fwd,
                    const std::vector<Tensor>& dhs) {
    const int t_len = static_cast<int>(obs.size());
    Tensor dh_next;  // gradient flowing into h_t from step t+1
    for (int t = t_len - 1; t >= 0; --t) {
        Tensor dh;
        if (dhs[static_cast<std::size_t>(t)].numel() > 0) {
            dh = dhs[static_cast<std::size_t>(t)];
            if (dh_next.numel() > 0)
                k::ops().add(dh_next.data(), dh.data(), static_cast<int>(dh.numel()));
        } else if (dh_next.numel() > 0) {
            dh = std::move(dh_next);
        } else {
            dh = Tensor(fwd.hs[static_cast<std::size_t>(t)].shape());
        }
        const Tensor& h_prev = (t == 0) ? h0 : fwd.hs[static_cast<std::size_t>(t - 1)];
        auto [dhp, dobs] = cell.backward(h_prev, obs[static_cast<std::size_t>(t)], fwd.hs[static_cast<std::size_t>(t)], dh);
        (void)dobs;
        dh_next = std::move(dhp);
    }
    return dh_next.numel() > 0 ? dh_next : Tensor(h0.shape());
}

// ---------------------------------------------------------------------------

Fusion::Fusion(int in_a_, int in_b_, int out, Rng& rng) : fc(in_a_ + in_b_, out, rng), in_a(in_a_), in_b(in_b_) {}

Tensor Fusion::forward(const Tensor& a, const Tensor& b_, Ctx* ctx) const {
    const auto n = a.dim(0);
    if (b_.dim(0) != n) throw std::invalid_argument("fusion: batch mismatch");
    if (a.dim(1) != in_a || b_.dim(1) != in_b) throw std::invalid_argument("fusion: input dim mismatch");
    Tensor joined({n, static_cast<std::int64_t>(in_a + in_b)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * in_a, in_a, joined.data() + i * (in_a + in_b));
        std::copy_n(b_.data() + i * in_b, in_b, joined.data() + i * (in_a + in_b) + in_a);
    }
    Tensor z = Tanh::forward(fc.forward(joined));
    if (ctx) {
        ctx->joined = std::move(joined);
        ctx->z = z;
    }
    return z;
}

std::pair<Tensor, Tensor> Fusion::backward(const Ctx& ctx, const Tensor& dz) {
    Tensor dpre = Tanh::backward(ctx.z, dz);
    Tensor djoined = fc.backward(ctx.joined, dpre);
    const auto n = djoined.dim(0);
    Tensor da({n, static_cast<std::int64_t>(in_a)});
    Tensor db({n, static_cast<std::int64_t>(in_b)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(djoined.data() + i * (in_a + in_b), in_a, da.data() + i * in_a);
        std::copy_n(djoined.data() + i * (in_a + in_b) + in_a, in_b, db.data() + i * in_b);
    }
    return {std::move(da), std::move(db)};
}

ParamSet Fusion::params(const std::string& prefix) { return fc.params(prefix + ".fc"); }

// ---------------------------------------------------------------------------

Mlp::Mlp(const std::vector<int>& dims, bool tanh_out_, Rng& rng) : tanh_out(tanh_out_) {
    if (dims.size() < 2) throw std::invalid_argument("mlp: need at least [in, out]");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1], rng);
}

Tensor Mlp::forward(const Tensor& x, Ctx* ctx) const {
    if (ctx) {
        ctx->acts.clear();
        ctx->acts.push_back(x);
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        const bool activate = (i + 1 < layers.size()) || tanh_out;
        if (activate) h = Tanh::forward(h);
        if (ctx) ctx->acts.push_back(h);
    }
    return h;
}

Tensor Mlp::backward(const Ctx& ctx, const Tensor& dy) {
    Tensor d = dy;
    for (std::size_t i = layers.size(); i-- > 0;) {
        const bool activated = (i + 1 < layers.size()) || tanh_out;
        if (activated) d = Tanh::backward(ctx.acts[i + 1], d);
        d = layers[i].backward(ctx.acts[i], d);
    }
    return d;
}

ParamSet Mlp::params(const std::string& prefix) {
    ParamSet ps;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto lp = layers[i].params(prefix + ".l" + std::to_string(i));
        ps.insert(ps.end(), lp.begin(), lp.end());
    }
    return ps;
}

// ---------------------------------------------------------------------------

Adam::Adam(ParamSet params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.t->shape());
        v_.emplace_back(p.t->shape());
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const double c2 = 1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i].t;
        k::ops().adam(p.data(), p.grad_data(), m_[i].data(), v_[i].data(), static_cast<int>(p.numel()),
                      cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, c1, c2);
    }
}

}  // namespace arlk::nn
