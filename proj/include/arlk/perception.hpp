#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "arlk/checkpoint.hpp"
#include "arlk/env.hpp"
#include "arlk/nn.hpp"
#include "arlk/snow.hpp"
#include "arlk/track.hpp"

namespace arlk::perception {

struct LabeledFrame {
    snow::RasterImage image;
    std::array<double, 4> coeffs{};  // c0..c3 from the noise-free geometry
    bool snowy = false;
};

// Frames rendered at poses resampled until the cubic centerline fit is
// valid, with |lateral offset| in a band that keeps the sign of c0
// well-defined. Labels come from the geometry, never from the pixels.
std::vector<LabeledFrame> build_dataset(int n_sunny, int n_snowy, std::uint64_t seed,
                                        const track::GraphSpec& spec = track::GraphSpec{},
                                        const snow::RenderParams& rp = snow::RenderParams{});

// Per-coefficient normalization so all four regression targets are O(1).
inline constexpr std::array<double, 4> kCoeffScale = {3.5, 0.5, 0.05, 0.005};

class Regressor {
  public:
    Regressor() = default;
    Regressor(int img_w, int img_h, Rng& rng);

    struct Ctx {
        Tensor x, a1, a2, flat, z1;
    };

    // [n, 1, h, w] images -> [n, 4] normalized coefficients.
    Tensor forward(const Tensor& imgs, Ctx* ctx = nullptr) const;
    void backward(Ctx& ctx, const Tensor& dy);
    nn::ParamSet params(const std::string& prefix);

    track::CenterlineCoeffs predict(const snow::RasterImage& img) const;

    void save(Checkpoint& ck) const;
    static Regressor load(const Checkpoint& ck);

    int img_w() const { return img_w_; }
    int img_h() const { return img_h_; }

  private:
    nn::Conv2d conv1_, conv2_;
    nn::Dense fc1_, fc2_;
    int img_w_ = 0, img_h_ = 0, flat_ = 0;
};

struct RegressorTraining {
    std::vector<double> train_mse;        // per epoch, normalized units
    std::array<double, 4> holdout_mse{};  // per coefficient, normalized units (NaN when no holdout)
    double holdout_total = 0.0;
    bool diverged = false;
};

// Adam on mean squared error over normalized coefficients with a
// deterministic 80/20 split. Training stops early if the epoch loss grows
// past ten times the first epoch's (diverged). Throws on an empty dataset.
RegressorTraining train_regressor(Regressor& model, const std::vector<LabeledFrame>& data, int epochs, int batch,
                                  double lr, std::uint64_t seed);

env::CoeffPredictor make_predictor(std::shared_ptr<const Regressor> model);

}  // namespace arlk::perception
