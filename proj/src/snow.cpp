#include "arlk/snow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "arlk/rng.hpp"

namespace arlk::snow {

namespace {

bool in_gap(double s, const std::vector<GapInterval>& gaps) {
    for (const GapInterval& g : gaps) {
        if (s >= g.s0 && s <= g.s1) return true;
    }
    return false;
}

}  // namespace

RasterImage render(const vehicle::VehicleState& state, const track::Route& route, const OcclusionConfig& occ,
                   std::uint64_t frame_index, const RenderParams& params) {
    if (params.width <= 0 || params.height <= 0) throw std::invalid_argument("raster dims must be positive");
    RasterImage img(params.width, params.height);

    const auto err = track::lane_frame({{state.x, state.y}, state.yaw}, route);
    const double s_here = err ? err->s : 0.0;
    const double half_lane = 0.5 * route.lane_width;
    const double ch = std::cos(state.yaw), sh = std::sin(state.yaw);

    const double s_lo = std::max(0.0, s_here - 2.0);
    const double s_hi = std::min(route.s_total, s_here + params.view_depth + 5.0);
    for (int side = 0; side < 2; ++side) {
        const bool left = side == 0;
        if ((left && occ.drop_left) || (!left && occ.drop_right)) continue;
        const double lateral = left ? half_lane : -half_lane;
        for (double s = s_lo; s <= s_hi; s += params.sample_step) {
            if (in_gap(s, occ.gaps)) continue;
            const track::Vec2 w = route.offset_point(s, lateral);
            const double rx = w.x - state.x, ry = w.y - state.y;
            const double xf = ch * rx + sh * ry;   // forward
            const double yl = -sh * rx + ch * ry;  // left
            if (xf < 0.0 || xf >= params.view_depth) continue;
            const double u = 0.5 - yl / params.view_width;  // column fraction, left edge = far left
            if (u < 0.0 || u >= 1.0) continue;
            const int col = static_cast<int>(u * params.width);
            const int row = static_cast<int>((1.0 - xf / params.view_depth) * params.height);
            if (row < 0 || row >= params.height) continue;
            img.at(row, col) = 1.0;
        }
    }

    const int speckles = static_cast<int>(std::lround(std::clamp(occ.snow_density, 0.0, 1.0) * params.speckle_max));
    Rng rng = Rng(occ.seed).child("snow.speckle").child(frame_index);
    for (int i = 0; i < speckles; ++i) {
        const int r = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(params.height)));
        const int c = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(params.width)));
        const double val = rng.uniform(0.4, 1.0);
        img.at(r, c) = std::max(img.at(r, c), val);
    }
    return img;
}

OcclusionConfig sample_occlusion(std::uint64_t seed, const OcclusionSampling& cfg) {
    if (cfg.p_drop_one < 0.0 || cfg.p_drop_both < 0.0 || cfg.p_drop_one + cfg.p_drop_both > 1.0) {
        throw std::invalid_argument("dropout probabilities must be non-negative and sum to <= 1");
    }
    if (cfg.density_min < 0.0 || cfg.density_max > 1.0 || cfg.density_min > cfg.density_max) {
        throw std::invalid_argument("snow density range must satisfy 0 <= min <= max <= 1");
    }
    if (cfg.gap_min < 0.0 || cfg.gap_min > cfg.gap_max) {
        throw std::invalid_argument("gap length range must satisfy 0 <= min <= max");
    }
    Rng rng = Rng(seed).child("snow.occlusion");
    OcclusionConfig occ;
    const double u = rng.uniform();
    if (u < cfg.p_drop_both) {
        occ.drop_left = occ.drop_right = true;
    } else if (u < cfg.p_drop_both + cfg.p_drop_one) {
        if (rng.bernoulli(0.5)) {
            occ.drop_left = true;
        } else {
            occ.drop_right = true;
        }
    }
    const int n_gaps = cfg.max_gaps > 0 ? rng.uniform_int(0, cfg.max_gaps) : 0;
    for (int i = 0; i < n_gaps; ++i) {
        const double start = rng.uniform(0.0, std::max(0.0, cfg.route_length));
        const double len = rng.uniform(cfg.gap_min, cfg.gap_max);
        occ.gaps.push_back({start, start + len});
    }
    occ.snow_density = rng.uniform(cfg.density_min, cfg.density_max);
    occ.seed = rng.next_u64();
    return occ;
}

void write_pgm(const std::string& path, const RasterImage& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(img.width);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            row[c] = static_cast<unsigned char>(std::lround(std::clamp(img.at(r, c), 0.0, 1.0) * 255.0));
        }
        f.write(reinterpret_cast<const char*>(row.data()), img.width);
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

RasterImage read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("unsupported pgm: " + path);
    f.get();  // single whitespace after header
    RasterImage img(w, h);
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("truncated pgm: " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.pix[i] = buf[i] / 255.0;
    return img;
}

}  // namespace arlk::snow
