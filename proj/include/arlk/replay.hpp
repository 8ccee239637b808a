#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "arlk/checkpoint.hpp"
#include "arlk/rng.hpp"
#include "arlk/snow.hpp"
#include "arlk/vehicle.hpp"

namespace arlk::replay {

// ---------------------------------------------------------------------------
// Flat transitions (DDPG / AR-DDPG). FIFO ring with uniform sampling.
// ---------------------------------------------------------------------------

struct FlatTransition {
    std::array<double, 3> obs{};
    std::array<double, 2> action{};
    double reward = 0.0;
    std::array<double, 3> obs2{};
    double done = 0.0;  // 1 when the successor state is absorbing
};

class FlatBuffer {
  public:
    explicit FlatBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("buffer capacity must be positive");
    }

    void push(const FlatTransition& t) {
        if (data_.size() < capacity_) {
            data_.push_back(t);
        } else {
            data_[head_] = t;
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }

    // i-th oldest transition (FIFO order), for tests against a list oracle.
    const FlatTransition& oldest(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

    const FlatTransition& sample(Rng& rng) const {
        if (data_.empty()) throw std::logic_error("sampling from empty buffer");
        return data_[rng.next_below(data_.size())];
    }

    void save(Checkpoint& ck, const std::string& prefix) const;
    void load(const Checkpoint& ck, const std::string& prefix);

  private:
    std::size_t capacity_;
    std::size_t head_ = 0;  // index of the oldest element once full
    std::vector<FlatTransition> data_;
};

// ---------------------------------------------------------------------------
// Sequence storage (AR-RDPG). Episodes are kept whole so sampled windows are
// contiguous; eviction drops whole episodes, oldest first.
// ---------------------------------------------------------------------------

struct SeqStep {
    std::array<double, 3> obs{};
    std::vector<double> hidden;  // recurrent state *before* consuming obs
    std::array<double, 2> action{};
    double reward = 0.0;
    std::array<double, 3> obs2{};
    double done = 0.0;
};

struct SeqWindow {
    const std::vector<SeqStep>* episode = nullptr;
    int start = 0;
    int length = 0;
};

class SeqBuffer {
  public:
    SeqBuffer(std::size_t step_capacity, int window) : capacity_(step_capacity), window_(window) {
        if (step_capacity == 0 || window <= 0) throw std::invalid_argument("bad sequence buffer parameters");
    }

    void begin_episode() { pending_.clear(); }
    void push_step(const SeqStep& s) { pending_.push_back(s); }
    void end_episode() {
        if (pending_.empty()) return;
        total_steps_ += pending_.size();
        episodes_.push_back(std::move(pending_));
        pending_.clear();
        while (total_steps_ > capacity_ && episodes_.size() > 1) {
            total_steps_ -= episodes_.front().size();
            episodes_.erase(episodes_.begin());
        }
    }

    std::size_t size_steps() const { return total_steps_; }
    std::size_t size_episodes() const { return episodes_.size(); }

    // Uniform over all (episode, start) pairs; the window is truncated at the
    // episode end and never exceeds the BPTT length.
    SeqWindow sample(Rng& rng) const {
        if (total_steps_ == 0) throw std::logic_error("sampling from empty sequence buffer");
        std::uint64_t pick = rng.next_below(total_steps_);
        for (const auto& ep : episodes_) {
            if (pick < ep.size()) {
                const int start = static_cast<int>(pick);
                const int len = std::min(window_, static_cast<int>(ep.size()) - start);
                return {&ep, start, len};
            }
            pick -= ep.size();
        }
        throw std::logic_error("sequence sampling index out of range");
    }

    void save(Checkpoint& ck, const std::string& prefix) const;
    void load(const Checkpoint& ck, const std::string& prefix, int hidden_dim);

  private:
    std::size_t capacity_;
    int window_;
    std::size_t total_steps_ = 0;
    std::vector<std::vector<SeqStep>> episodes_;
    std::vector<SeqStep> pending_;
};

// ---------------------------------------------------------------------------
// Visual transitions (AR-CADPG). Images are not stored; each record keeps the
// deterministic render inputs (route seed, vehicle pose, occlusion, frame
// index) and frames are re-rendered on sampling.
// ---------------------------------------------------------------------------

struct VisualTransition {
    std::uint64_t route_seed = 0;  // episode route, regenerable from this seed
    std::uint64_t frame0 = 0;      // frame index of obs (obs2 uses frame0 + 1)
    snow::OcclusionConfig occ;
    vehicle::VehicleState s0, s1;
    std::array<double, 3> kin{}, kin2{};
    std::array<double, 2> action{};
    double reward = 0.0;
    double done = 0.0;
};

class VisualBuffer {
  public:
    explicit VisualBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("buffer capacity must be positive");
    }

    void push(const VisualTransition& t) {
        if (data_.size() < capacity_) {
            data_.push_back(t);
        } else {
            data_[head_] = t;
            head_ = (head_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return data_.size(); }
    const VisualTransition& sample(Rng& rng) const {
        if (data_.empty()) throw std::logic_error("sampling from empty buffer");
        return data_[rng.next_below(data_.size())];
    }
    const VisualTransition& oldest(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

    void save(Checkpoint& ck, const std::string& prefix) const;
    void load(const Checkpoint& ck, const std::string& prefix);

  private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<VisualTransition> data_;
};

}  // namespace arlk::replay
