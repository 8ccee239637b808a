#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arlk/track.hpp"
#include "arlk/vehicle.hpp"

namespace arlk::snow {

struct RasterImage {
    int width = 0, height = 0;
    std::vector<double> pix;  // row-major, values in [0, 1]

    RasterImage() = default;
    RasterImage(int w, int h) : width(w), height(h), pix(static_cast<size_t>(w) * h, 0.0) {}
    double& at(int r, int c) { return pix[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return pix[static_cast<size_t>(r) * width + c]; }
};

struct GapInterval {
    double s0 = 0.0, s1 = 0.0;  // arc-length interval with no markings
};

struct OcclusionConfig {
    bool drop_left = false;
    bool drop_right = false;
    std::vector<GapInterval> gaps;
    double snow_density = 0.0;  // in [0, 1]
    std::uint64_t seed = 0;
};

struct RenderParams {
    int width = 64, height = 64;
    double view_depth = 20.0;   // m of road ahead of the rear axle
    double view_width = 16.0;   // m across the full image
    double sample_step = 0.05;  // m between boundary samples
    int speckle_max = 400;      // speckle count at snow_density = 1
};

// Rasterize the forward view: lane boundary markings at +-lane_width/2,
// subject to marker dropout and gap intervals, plus seeded snow speckle.
// Deterministic per (state, occ.seed, frame_index); speckle is brightness-
// additive (max-blended) so markings are distracted from, never erased.
RasterImage render(const vehicle::VehicleState& state, const track::Route& route, const OcclusionConfig& occ,
                   std::uint64_t frame_index = 0, const RenderParams& params = RenderParams{});

struct OcclusionSampling {
    double p_drop_one = 0.3;   // probability exactly one marker is dropped
    double p_drop_both = 0.1;  // probability both markers are dropped
    int max_gaps = 3;
    double gap_min = 2.0, gap_max = 8.0;        // m
    double density_min = 0.2, density_max = 0.8;
    double route_length = 0.0;  // gaps are placed inside [0, route_length]
};

OcclusionConfig sample_occlusion(std::uint64_t seed, const OcclusionSampling& cfg);

// Binary PGM (P5), maxval 255. Deterministic bytes for identical images.
void write_pgm(const std::string& path, const RasterImage& img);
RasterImage read_pgm(const std::string& path);

}  // namespace arlk::snow
