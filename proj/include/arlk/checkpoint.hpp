#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arlk/tensor.hpp"

namespace arlk {

// Versioned binary container for named parameter tensors plus auxiliary u64
// arrays (step counters, RNG states) and one free-form metadata string
// (JSON by convention). Entries keep insertion order so write -> read ->
// write round-trips byte-identically.
class Checkpoint {
  public:
    static constexpr char kMagic[9] = "ARLKCKP1";

    void put_tensor(const std::string& name, const Tensor& t);
    void put_u64(const std::string& name, const std::vector<std::uint64_t>& a);
    void set_meta(std::string meta) { meta_ = std::move(meta); }

    bool has_tensor(const std::string& name) const;
    bool has_u64(const std::string& name) const;
    const Tensor& tensor(const std::string& name) const;
    const std::vector<std::uint64_t>& u64(const std::string& name) const;
    const std::string& meta() const { return meta_; }

    std::vector<std::string> tensor_names() const;

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

  private:
    struct Entry {
        std::uint8_t kind;  // 0 tensor, 1 u64 array
        std::string name;
        Tensor t;
        std::vector<std::uint64_t> a;
    };
    const Entry* find(const std::string& name, std::uint8_t kind) const;

    std::vector<Entry> entries_;
    std::string meta_;
};

}  // namespace arlk
