#include "arlk/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "arlk/kernels.hpp"
#include "arlk/nn.hpp"

namespace arlk::nn {

double fd_max_rel_err(const std::function<double()>& loss, const std::vector<CheckTarget>& targets,
                      const FdOptions& opt, Rng& rng) {
    double worst = 0.0;
    for (const auto& tgt : targets) {
        const std::int64_t n = tgt.value->numel();
        const int probes = static_cast<int>(std::min<std::int64_t>(n, opt.samples_per_tensor));
        for (int s = 0; s < probes; ++s) {
            const std::int64_t idx = (n == probes) ? s : static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(n)));
            double& slot = (*tgt.value)[idx];
            const double saved = slot;
            slot = saved + opt.step;
            const double lp = loss();
            slot = saved - opt.step;
            const double lm = loss();
            slot = saved;
            const double fd = (lp - lm) / (2.0 * opt.step);
            const double an = (*tgt.analytic)[static_cast<std::size_t>(idx)];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

namespace {

// Fixed random projection turns a tensor output into a scalar loss.
Tensor random_projection(const std::vector<std::int64_t>& shape, Rng& rng) {
    Tensor r(shape);
    for (auto& x : r.values()) x = rng.uniform(-1.0, 1.0);
    return r;
}

double project(const Tensor& y, const Tensor& r) {
    return kernels::ops().dot(y.data(), r.data(), static_cast<int>(y.numel()));
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    for (auto& x : t.values()) x = rng.uniform(lo, hi);
}

void corrupt(std::vector<double>& g) {
    for (auto& x : g) x = 1.01 * x + 1e-3;
}

double check_dense(Rng rng, bool broken) {
    Dense layer(7, 5, rng);
    Tensor x({4, 7});
    fill_uniform(x, rng, -1.0, 1.0);
    Tensor r = random_projection({4, 5}, rng);

    zero_grads(layer.params(""));
    Tensor dx = layer.backward(x, r);
    if (broken) corrupt(layer.w.grad());

    auto loss = [&] { return project(layer.forward(x), r); };
    FdOptions opt;
    Rng probe = rng.child("probe");
    return fd_max_rel_err(loss,
                          {{"w", &layer.w, &layer.w.grad()},
                           {"b", &layer.b, &layer.b.grad()},
                           {"x", &x, &dx.values()}},
                          opt, probe);
}

double check_conv(Rng rng, bool broken) {
    Conv2d layer(2, 3, 3, 2, 1, rng);
    Tensor x({2, 2, 9, 9});
    fill_uniform(x, rng, -1.0, 1.0);
    Tensor y = layer.forward(x);
    Tensor r = random_projection(y.shape(), rng);

    zero_grads(layer.params(""));
    Tensor dx = layer.backward(x, r);
    if (broken) corrupt(layer.w.grad());

    auto loss = [&] { return project(layer.forward(x), r); };
    FdOptions opt;
    Rng probe = rng.child("probe");
    return fd_max_rel_err(loss,
                          {{"w", &layer.w, &layer.w.grad()},
                           {"b", &layer.b, &layer.b.grad()},
                           {"x", &x, &dx.values()}},
                          opt, probe);
}

double check_rnn(Rng rng, bool broken) {
    RnnCell cell(3, 6, rng);
    Tensor h0({4, 6}), o({4, 3});
    fill_uniform(h0, rng, -0.5, 0.5);
    fill_uniform(o, rng, -1.0, 1.0);
    Tensor h = cell.step(h0, o);
    Tensor r = random_projection(h.shape(), rng);

    zero_grads(cell.params(""));
    auto [dh0, dobs] = cell.backward(h0, o, h, r);
    if (broken) corrupt(cell.w_h.grad());

    auto loss = [&] { return project(cell.step(h0, o), r); };
    FdOptions opt;
    Rng probe = rng.child("probe");
    return fd_max_rel_err(loss,
                          {{"w_h", &cell.w_h, &cell.w_h.grad()},
                           {"w_o", &cell.w_o, &cell.w_o.grad()},
                           {"b", &cell.b, &cell.b.grad()},
                           {"h0", &h0, &dh0.values()},
                           {"o", &o, &dobs.values()}},
                          opt, probe);
}

double check_attention(Rng rng, bool broken) {
    SpatialAttention attn(rng);
    Tensor f({2, 3, 8, 8});
    fill_uniform(f, rng, -1.0, 1.0);
    // Separate the channels so input probing cannot flip a max-pool argmax.
    for (std::int64_t i = 0; i < f.dim(0); ++i)
        for (std::int64_t c = 0; c < f.dim(1); ++c) {
            double* p = f.data() + (i * f.dim(1) + c) * 64;
            for (int j = 0; j < 64; ++j) p[j] += 0.01 * static_cast<double>(c);
        }
    SpatialAttention::Ctx ctx;
    Tensor att = attn.forward(f, &ctx).attended;
    Tensor r = random_projection(att.shape(), rng);

    zero_grads(attn.params(""));
    Tensor df = attn.backward(f, ctx, r);
    if (broken) corrupt(attn.f7.w.grad());

    auto loss = [&] { return project(attn.forward(f).attended, r); };
    FdOptions opt;
    Rng probe = rng.child("probe");
    return fd_max_rel_err(loss,
                          {{"f7.w", &attn.f7.w, &attn.f7.w.grad()},
                           {"f7.b", &attn.f7.b, &attn.f7.b.grad()},
                           {"f", &f, &df.values()}},
                          opt, probe);
}

double check_fusion(Rng rng, bool broken) {
    Fusion fuse(5, 3, 4, rng);
    Tensor a({4, 5}), b({4, 3});
    fill_uniform(a, rng, -1.0, 1.0);
    fill_uniform(b, rng, -1.0, 1.0);
    Fusion::Ctx ctx;
    Tensor z = fuse.forward(a, b, &ctx);
    Tensor r = random_projection(z.shape(), rng);

    zero_grads(fuse.params(""));
    auto [da, db] = fuse.backward(ctx, r);
    if (broken) corrupt(fuse.fc.w.grad());

    auto loss = [&] { return project(fuse.forward(a, b), r); };
    FdOptions opt;
    Rng probe = rng.child("probe");
    return fd_max_rel_err(loss,
                          {{"fc.w", &fuse.fc.w, &fuse.fc.w.grad()},
                           {"fc.b", &fuse.fc.b, &fuse.fc.b.grad()},
                           {"a", &a, &da.values()},
                           {"b", &b, &db.values()}},
                          opt, probe);
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(int seeds, double tol, const std::string& break_layer) {
    struct Item {
        const char* name;
        double (*fn)(Rng, bool);
    };
    const Item items[] = {
        {"dense", check_dense},           {"conv", check_conv},
        {"rnn_step", check_rnn},          {"spatial_attention", check_attention},
        {"fusion", check_fusion},
    };
    std::vector<GradCheckEntry> out;
    for (const auto& item : items) {
        double worst = 0.0;
        for (int s = 0; s < seeds; ++s) {
            Rng rng(0x6c6b0000u + static_cast<std::uint64_t>(s) * 7919u);
            worst = std::max(worst, item.fn(rng.child(item.name), break_layer == item.name));
        }
        out.push_back({item.name, worst, worst < tol});
    }
    return out;
}

}  // namespace arlk::nn
