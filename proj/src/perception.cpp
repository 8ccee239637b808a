#include "arlk/perception.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "arlk/rng.hpp"

namespace arlk::perception {

namespace {

// Pose sampling bands: the offset keeps c0's sign unambiguous, the heading
// jitter keeps the centerline inside the forward view.
constexpr double kOffMin = 0.3, kOffMax = 1.5;
constexpr double kPhiJitter = 0.15;
constexpr double kFitStep = 0.5;
constexpr double kMaxResidual = 0.1;

bool sample_frame(Rng& rng, const track::GraphSpec& spec, const snow::RenderParams& rp, bool snowy,
                  LabeledFrame& out) {
    const std::uint64_t route_seed = rng.next_u64();
    track::Route route;
    try {
        route = env::make_route(route_seed, spec, 3);
    } catch (const track::NoRouteError&) {
        return false;
    }
    const double s = rng.uniform(0.0, route.s_total);
    const double mag = rng.uniform(kOffMin, kOffMax);
    const double d = rng.bernoulli(0.5) ? mag : -mag;
    const double phi = rng.uniform(-kPhiJitter, kPhiJitter);

    const track::Pose pose = route.pose_at(s);
    const track::Vec2 pos = route.offset_point(s, d);
    vehicle::VehicleState st;
    st.x = pos.x;
    st.y = pos.y;
    st.yaw = wrap_angle(pose.heading + phi);
    st.v = 5.0;

    track::CenterlineFit fit;
    try {
        const track::Pose vp{{st.x, st.y}, st.yaw};
        const auto pts = track::centerline_in_vehicle_frame(vp, route, s - 2.0, rp.view_depth + 5.0, kFitStep);
        fit = track::fit_centerline(pts, spec.lane_width);
    } catch (const track::FitError&) {
        return false;
    }
    if (fit.residual_rms > kMaxResidual) return false;

    snow::OcclusionConfig occ;
    if (snowy) {
        snow::OcclusionSampling samp;
        samp.route_length = route.s_total;
        occ = snow::sample_occlusion(rng.next_u64(), samp);
    } else {
        occ.seed = rng.next_u64();  // density 0: no speckle is drawn
    }
    out.image = snow::render(st, route, occ, 0, rp);
    out.coeffs = {fit.coeffs.c0, fit.coeffs.c1, fit.coeffs.c2, fit.coeffs.c3};
    out.snowy = snowy;
    return true;
}

}  // namespace

std::vector<LabeledFrame> build_dataset(int n_sunny, int n_snowy, std::uint64_t seed, const track::GraphSpec& spec,
                                        const snow::RenderParams& rp) {
    if (n_sunny < 0 || n_snowy < 0) throw std::invalid_argument("build_dataset: negative counts");
    std::vector<LabeledFrame> out;
    out.reserve(static_cast<std::size_t>(n_sunny) + n_snowy);
    const int total = n_sunny + n_snowy;
    for (int i = 0; i < total; ++i) {
        const bool snowy = i >= n_sunny;
        Rng rng = Rng(seed).child("perception.data").child(static_cast<std::uint64_t>(i));
        LabeledFrame f;
        bool ok = false;
        for (int attempt = 0; attempt < 64 && !ok; ++attempt) ok = sample_frame(rng, spec, rp, snowy, f);
        if (!ok) throw std::runtime_error("build_dataset: could not sample a valid frame");
        out.push_back(std::move(f));
    }
    return out;
}

Regressor::Regressor(int img_w, int img_h, Rng& rng)
    : conv1_(1, 6, 5, 2, 2, rng), conv2_(6, 12, 3, 2, 1, rng), img_w_(img_w), img_h_(img_h) {
    const int h1 = conv1_.out_h(img_h), w1 = conv1_.out_w(img_w);
    const int h2 = conv2_.out_h(h1), w2 = conv2_.out_w(w1);
    flat_ = 12 * h2 * w2;
    fc1_ = nn::Dense(flat_, 64, rng);
    fc2_ = nn::Dense(64, 4, rng);
}

Tensor Regressor::forward(const Tensor& imgs, Ctx* ctx) const {
    const Tensor a1 = nn::Tanh::forward(conv1_.forward(imgs));
    const Tensor a2 = nn::Tanh::forward(conv2_.forward(a1));
    Tensor flat({imgs.dim(0), flat_});
    std::copy(a2.values().begin(), a2.values().end(), flat.values().begin());
    const Tensor z1 = nn::Tanh::forward(fc1_.forward(flat));
    Tensor y = fc2_.forward(z1);
    if (ctx != nullptr) {
        ctx->x = imgs;
        ctx->a1 = a1;
        ctx->a2 = a2;
        ctx->flat = flat;
        ctx->z1 = z1;
    }
    return y;
}

void Regressor::backward(Ctx& ctx, const Tensor& dy) {
    const Tensor dz1 = fc2_.backward(ctx.z1, dy);
    const Tensor dflat = fc1_.backward(ctx.flat, nn::Tanh::backward(ctx.z1, dz1));
    Tensor da2(ctx.a2.shape());
    std::copy(dflat.values().begin(), dflat.values().end(), da2.values().begin());
    const Tensor dc2 = nn::Tanh::backward(ctx.a2, da2);
    const Tensor da1 = conv2_.backward(ctx.a1, dc2);
    conv1_.backward(ctx.x, nn::Tanh::backward(ctx.a1, da1));
}

nn::ParamSet Regressor::params(const std::string& prefix) {
    nn::ParamSet ps = conv1_.params(prefix + ".conv1");
    for (const auto& p : conv2_.params(prefix + ".conv2")) ps.push_back(p);
    for (const auto& p : fc1_.params(prefix + ".fc1")) ps.push_back(p);
    for (const auto& p : fc2_.params(prefix + ".fc2")) ps.push_back(p);
    return ps;
}

track::CenterlineCoeffs Regressor::predict(const snow::RasterImage& img) const {
    if (img.width != img_w_ || img.height != img_h_) {
        throw std::invalid_argument("predict: image size does not match the model");
    }
    Tensor x({1, 1, img_h_, img_w_});
    std::copy(img.pix.begin(), img.pix.end(), x.values().begin());
    const Tensor y = forward(x, nullptr);
    track::CenterlineCoeffs c;
    c.c0 = y[0] * kCoeffScale[0];
    c.c1 = y[1] * kCoeffScale[1];
    c.c2 = y[2] * kCoeffScale[2];
    c.c3 = y[3] * kCoeffScale[3];
    return c;
}

void Regressor::save(Checkpoint& ck) const {
    nlohmann::json meta = {{"format", "arlk-perception"}, {"version", 1}, {"img_w", img_w_}, {"img_h", img_h_}};
    ck.set_meta(meta.dump());
    Regressor& self = const_cast<Regressor&>(*this);
    for (const auto& p : self.params("reg")) ck.put_tensor(p.name, *p.t);
}

Regressor Regressor::load(const Checkpoint& ck) {
    nlohmann::json meta = nlohmann::json::parse(ck.meta());
    if (meta.value("format", "") != "arlk-perception") throw std::runtime_error("not a perception checkpoint");
    Rng dummy(0);
    Regressor r(meta.at("img_w").get<int>(), meta.at("img_h").get<int>(), dummy);
    for (const auto& p : r.params("reg")) {
        const Tensor& t = ck.tensor(p.name);
        if (!t.same_shape(*p.t)) throw std::runtime_error("perception checkpoint shape mismatch for " + p.name);
        *p.t = t;
    }
    return r;
}

RegressorTraining train_regressor(Regressor& model, const std::vector<LabeledFrame>& data, int epochs, int batch,
                                  double lr, std::uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("train_regressor: empty dataset");
    if (epochs <= 0 || batch <= 0 || lr <= 0.0) throw std::invalid_argument("train_regressor: bad hyperparameters");

    Rng rng = Rng(seed).child("perception.train");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0u);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.next_below(i)]);
    const std::size_t n_hold = data.size() >= 5 ? data.size() / 5 : 0;
    const std::vector<std::size_t> hold(idx.begin(), idx.begin() + n_hold);
    std::vector<std::size_t> train(idx.begin() + n_hold, idx.end());

    nn::Adam opt(model.params("reg"), {lr, 0.9, 0.999, 1e-8});

    auto fill_batch = [&](const std::vector<std::size_t>& which, std::size_t at, std::size_t count, Tensor& x,
                          Tensor& t) {
        for (std::size_t i = 0; i < count; ++i) {
            const LabeledFrame& f = data[which[at + i]];
            std::copy(f.image.pix.begin(), f.image.pix.end(),
                      x.values().begin() + i * f.image.pix.size());
            for (int k = 0; k < 4; ++k) t.at(static_cast<std::int64_t>(i), k) = f.coeffs[k] / kCoeffScale[k];
        }
    };

    RegressorTraining out;
    const int h = model.img_h(), w = model.img_w();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng.next_below(i)]);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t at = 0; at < train.size(); at += batch) {
            const std::size_t count = std::min<std::size_t>(batch, train.size() - at);
            Tensor x({static_cast<std::int64_t>(count), 1, h, w});
            Tensor t({static_cast<std::int64_t>(count), 4});
            fill_batch(train, at, count, x, t);
            Regressor::Ctx ctx;
            const Tensor y = model.forward(x, &ctx);
            Tensor dy({static_cast<std::int64_t>(count), 4});
            double loss = 0.0;
            for (std::int64_t i = 0; i < dy.dim(0); ++i) {
                for (int k = 0; k < 4; ++k) {
                    const double e = y.at(i, k) - t.at(i, k);
                    loss += e * e;
                    dy.at(i, k) = 2.0 * e / static_cast<double>(count * 4);
                }
            }
            loss /= static_cast<double>(count * 4);
            model.backward(ctx, dy);
            opt.step();
            nn::zero_grads(opt.params());
            epoch_loss += loss * static_cast<double>(count);
            seen += count;
        }
        epoch_loss /= static_cast<double>(seen);
        out.train_mse.push_back(epoch_loss);
        if (!std::isfinite(epoch_loss) || (epoch > 0 && epoch_loss > 10.0 * out.train_mse.front())) {
            out.diverged = true;
            break;
        }
    }

    if (hold.empty()) {
        out.holdout_mse.fill(std::numeric_limits<double>::quiet_NaN());
        out.holdout_total = std::numeric_limits<double>::quiet_NaN();
    } else {
        out.holdout_mse.fill(0.0);
        Tensor x({static_cast<std::int64_t>(hold.size()), 1, h, w});
        Tensor t({static_cast<std::int64_t>(hold.size()), 4});
        fill_batch(hold, 0, hold.size(), x, t);
        const Tensor y = model.forward(x, nullptr);
        for (std::int64_t i = 0; i < y.dim(0); ++i) {
            for (int k = 0; k < 4; ++k) {
                const double e = y.at(i, k) - t.at(i, k);
                out.holdout_mse[k] += e * e;
            }
        }
        out.holdout_total = 0.0;
        for (int k = 0; k < 4; ++k) {
            out.holdout_mse[k] /= static_cast<double>(hold.size());
            out.holdout_total += out.holdout_mse[k] / 4.0;
        }
    }
    return out;
}

env::CoeffPredictor make_predictor(std::shared_ptr<const Regressor> model) {
    if (!model) throw std::invalid_argument("make_predictor: null model");
    return [model](const snow::RasterImage& img) { return model->predict(img); };
}

}  // namespace arlk::perception
