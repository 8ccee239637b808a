#include "arlk/replay.hpp"

#include "arlk/tensor.hpp"

namespace arlk::replay {

namespace {

constexpr int kFlatRecord = 3 + 2 + 1 + 3 + 1;  // obs, action, r, obs2, done

void pack_state(const vehicle::VehicleState& s, double* out) {
    out[0] = s.x;
    out[1] = s.y;
    out[2] = s.yaw;
    out[3] = s.v;
    out[4] = s.last_action.steer;
    out[5] = s.last_action.throttle;
}

vehicle::VehicleState unpack_state(const double* in) {
    vehicle::VehicleState s;
    s.x = in[0];
    s.y = in[1];
    s.yaw = in[2];
    s.v = in[3];
    s.last_action = {in[4], in[5]};
    return s;
}

}  // namespace

void FlatBuffer::save(Checkpoint& ck, const std::string& prefix) const {
    const std::size_t n = data_.size();
    Tensor t({static_cast<std::int64_t>(n), kFlatRecord});
    for (std::size_t i = 0; i < n; ++i) {
        const FlatTransition& tr = oldest(i);  // canonical FIFO order
        double* row = t.data() + i * kFlatRecord;
        for (int k = 0; k < 3; ++k) row[k] = tr.obs[k];
        row[3] = tr.action[0];
        row[4] = tr.action[1];
        row[5] = tr.reward;
        for (int k = 0; k < 3; ++k) row[6 + k] = tr.obs2[k];
        row[9] = tr.done;
    }
    ck.put_tensor(prefix + ".data", t);
    ck.put_u64(prefix + ".capacity", {capacity_});
}

void FlatBuffer::load(const Checkpoint& ck, const std::string& prefix) {
    capacity_ = ck.u64(prefix + ".capacity")[0];
    const Tensor& t = ck.tensor(prefix + ".data");
    const std::size_t n = static_cast<std::size_t>(t.shape()[0]);
    data_.clear();
    data_.reserve(n);
    head_ = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = t.data() + i * kFlatRecord;
        FlatTransition tr;
        for (int k = 0; k < 3; ++k) tr.obs[k] = row[k];
        tr.action = {row[3], row[4]};
        tr.reward = row[5];
        for (int k = 0; k < 3; ++k) tr.obs2[k] = row[6 + k];
        tr.done = row[9];
        data_.push_back(tr);
    }
}

void SeqBuffer::save(Checkpoint& ck, const std::string& prefix) const {
    const int hd = episodes_.empty() || episodes_[0].empty() ? 0 : static_cast<int>(episodes_[0][0].hidden.size());
    const int rec = 3 + hd + 2 + 1 + 3 + 1;
    Tensor t({static_cast<std::int64_t>(total_steps_), rec});
    std::vector<std::uint64_t> lens;
    std::size_t at = 0;
    for (const auto& ep : episodes_) {
        lens.push_back(ep.size());
        for (const SeqStep& s : ep) {
            double* row = t.data() + at * rec;
            int j = 0;
            for (int k = 0; k < 3; ++k) row[j++] = s.obs[k];
            for (int k = 0; k < hd; ++k) row[j++] = s.hidden[k];
            row[j++] = s.action[0];
            row[j++] = s.action[1];
            row[j++] = s.reward;
            for (int k = 0; k < 3; ++k) row[j++] = s.obs2[k];
            row[j++] = s.done;
            ++at;
        }
    }
    ck.put_tensor(prefix + ".data", t);
    ck.put_u64(prefix + ".episode_lens", lens);
    ck.put_u64(prefix + ".capacity", {capacity_, static_cast<std::uint64_t>(window_)});
}

void SeqBuffer::load(const Checkpoint& ck, const std::string& prefix, int hidden_dim) {
    const auto& cap = ck.u64(prefix + ".capacity");
    capacity_ = cap[0];
    window_ = static_cast<int>(cap[1]);
    const Tensor& t = ck.tensor(prefix + ".data");
    const auto& lens = ck.u64(prefix + ".episode_lens");
    const int rec = 3 + hidden_dim + 2 + 1 + 3 + 1;
    episodes_.clear();
    pending_.clear();
    total_steps_ = 0;
    std::size_t at = 0;
    for (std::uint64_t len : lens) {
        std::vector<SeqStep> ep;
        ep.reserve(len);
        for (std::uint64_t i = 0; i < len; ++i) {
            const double* row = t.data() + at * rec;
            SeqStep s;
            int j = 0;
            for (int k = 0; k < 3; ++k) s.obs[k] = row[j++];
            s.hidden.resize(hidden_dim);
            for (int k = 0; k < hidden_dim; ++k) s.hidden[k] = row[j++];
            s.action = {row[j], row[j + 1]};
            j += 2;
            s.reward = row[j++];
            for (int k = 0; k < 3; ++k) s.obs2[k] = row[j++];
            s.done = row[j++];
            ep.push_back(std::move(s));
            ++at;
        }
        total_steps_ += ep.size();
        episodes_.push_back(std::move(ep));
    }
}

void VisualBuffer::save(Checkpoint& ck, const std::string& prefix) const {
    // Fixed 3-gap slots; n_gaps tells how many are live.
    constexpr int kRec = 1 /*n_gaps*/ + 2 /*drops*/ + 6 /*gaps*/ + 1 /*density*/ + 6 + 6 /*states*/ + 3 + 3 /*kin*/ +
                         2 /*action*/ + 1 /*r*/ + 1 /*done*/;
    const std::size_t n = data_.size();
    Tensor t({static_cast<std::int64_t>(n), kRec});
    std::vector<std::uint64_t> seeds(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const VisualTransition& tr = oldest(i);
        if (tr.occ.gaps.size() > 3) throw std::logic_error("visual buffer supports at most 3 gap intervals");
        seeds[3 * i + 0] = tr.route_seed;
        seeds[3 * i + 1] = tr.frame0;
        seeds[3 * i + 2] = tr.occ.seed;
        double* row = t.data() + i * kRec;
        int j = 0;
        row[j++] = static_cast<double>(tr.occ.gaps.size());
        row[j++] = tr.occ.drop_left ? 1.0 : 0.0;
        row[j++] = tr.occ.drop_right ? 1.0 : 0.0;
        for (int g = 0; g < 3; ++g) {
            row[j++] = g < static_cast<int>(tr.occ.gaps.size()) ? tr.occ.gaps[g].s0 : 0.0;
            row[j++] = g < static_cast<int>(tr.occ.gaps.size()) ? tr.occ.gaps[g].s1 : 0.0;
        }
        row[j++] = tr.occ.snow_density;
        pack_state(tr.s0, row + j);
        j += 6;
        pack_state(tr.s1, row + j);
        j += 6;
        for (int k = 0; k < 3; ++k) row[j++] = tr.kin[k];
        for (int k = 0; k < 3; ++k) row[j++] = tr.kin2[k];
        row[j++] = tr.action[0];
        row[j++] = tr.action[1];
        row[j++] = tr.reward;
        row[j++] = tr.done;
    }
    ck.put_tensor(prefix + ".data", t);
    ck.put_u64(prefix + ".seeds", seeds);
    ck.put_u64(prefix + ".capacity", {capacity_});
}

void VisualBuffer::load(const Checkpoint& ck, const std::string& prefix) {
    constexpr int kRec = 1 + 2 + 6 + 1 + 6 + 6 + 3 + 3 + 2 + 1 + 1;
    capacity_ = ck.u64(prefix + ".capacity")[0];
    const Tensor& t = ck.tensor(prefix + ".data");
    const auto& seeds = ck.u64(prefix + ".seeds");
    const std::size_t n = static_cast<std::size_t>(t.shape()[0]);
    data_.clear();
    data_.reserve(n);
    head_ = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = t.data() + i * kRec;
        VisualTransition tr;
        tr.route_seed = seeds[3 * i + 0];
        tr.frame0 = seeds[3 * i + 1];
        tr.occ.seed = seeds[3 * i + 2];
        int j = 0;
        const int n_gaps = static_cast<int>(row[j++]);
        tr.occ.drop_left = row[j++] != 0.0;
        tr.occ.drop_right = row[j++] != 0.0;
        for (int g = 0; g < 3; ++g) {
            const double a = row[j++], b = row[j++];
            if (g < n_gaps) tr.occ.gaps.push_back({a, b});
        }
        tr.occ.snow_density = row[j++];
        tr.s0 = unpack_state(row + j);
        j += 6;
        tr.s1 = unpack_state(row + j);
        j += 6;
        for (int k = 0; k < 3; ++k) tr.kin[k] = row[j++];
        for (int k = 0; k < 3; ++k) tr.kin2[k] = row[j++];
        tr.action = {row[j], row[j + 1]};
        j += 2;
        tr.reward = row[j++];
        tr.done = row[j++];
        data_.push_back(std::move(tr));
    }
}

}  // namespace arlk::replay
