#pragma once

#include <functional>
#include <string>
#include <vector>

#include "arlk/rng.hpp"
#include "arlk/tensor.hpp"

namespace arlk::nn {

// Central finite-difference gradient verification. The loss closure must
// recompute the scalar loss from the current tensor values via forward passes
// only, so the check stays independent of the backward implementation.

struct CheckTarget {
    std::string name;
    Tensor* value;                        // perturbed in place during probing
    const std::vector<double>* analytic;  // gradient to verify, same layout
};

struct FdOptions {
    double step = 1e-5;
    int samples_per_tensor = 12;  // random components probed per tensor
};

// Max relative error over all probed components.
// rel = |fd - an| / max(|fd|, |an|, 1e-3); the floor keeps FD roundoff from
// registering as error where the true gradient is ~0.
double fd_max_rel_err(const std::function<double()>& loss, const std::vector<CheckTarget>& targets,
                      const FdOptions& opt, Rng& rng);

struct GradCheckEntry {
    std::string layer;
    double max_rel_err;
    bool pass;
};

// FD sweep over every layer kind (dense, conv, rnn_step, spatial_attention,
// fusion) on `seeds` random instantiations each, probing weights, biases and
// inputs. `break_layer` substitutes a corrupted analytic gradient for that
// layer; used as a self-test fixture.
std::vector<GradCheckEntry> run_gradcheck_suite(int seeds, double tol, const std::string& break_layer = "");

}  // namespace arlk::nn
