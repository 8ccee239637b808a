#include "arlk/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace arlk {

namespace {

void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

void put_u64v(std::vector<std::uint8_t>& out, std::uint64_t v) { put_bytes(out, &v, 8); }

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void read(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated data");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        read(&v, 8);
        return v;
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
};

}  // namespace

void Checkpoint::put_tensor(const std::string& name, const Tensor& t) {
    for (auto& e : entries_)
        if (e.kind == 0 && e.name == name) {
            e.t = t;
            return;
        }
    entries_.push_back({0, name, t, {}});
}

void Checkpoint::put_u64(const std::string& name, const std::vector<std::uint64_t>& a) {
    for (auto& e : entries_)
        if (e.kind == 1 && e.name == name) {
            e.a = a;
            return;
        }
    entries_.push_back({1, name, Tensor(), a});
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name, std::uint8_t kind) const {
    for (const auto& e : entries_)
        if (e.kind == kind && e.name == name) return &e;
    return nullptr;
}

bool Checkpoint::has_tensor(const std::string& name) const { return find(name, 0) != nullptr; }
bool Checkpoint::has_u64(const std::string& name) const { return find(name, 1) != nullptr; }

const Tensor& Checkpoint::tensor(const std::string& name) const {
    const Entry* e = find(name, 0);
    if (!e) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    return e->t;
}

const std::vector<std::uint64_t>& Checkpoint::u64(const std::string& name) const {
    const Entry* e = find(name, 1);
    if (!e) throw std::runtime_error("checkpoint: missing u64 array '" + name + "'");
    return e->a;
}

std::vector<std::string> Checkpoint::tensor_names() const {
    std::vector<std::string> names;
    for (const auto& e : entries_)
        if (e.kind == 0) names.push_back(e.name);
    return names;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out;
    put_bytes(out, kMagic, 8);
    put_u64v(out, meta_.size());
    put_bytes(out, meta_.data(), meta_.size());
    put_u64v(out, entries_.size());
    for (const auto& e : entries_) {
        out.push_back(e.kind);
        put_u64v(out, e.name.size());
        put_bytes(out, e.name.data(), e.name.size());
        if (e.kind == 0) {
            put_u64v(out, e.t.shape().size());
            for (auto d : e.t.shape()) put_bytes(out, &d, 8);
            put_bytes(out, e.t.data(), static_cast<std::size_t>(e.t.numel()) * 8);
        } else {
            put_u64v(out, e.a.size());
            put_bytes(out, e.a.data(), e.a.size() * 8);
        }
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    if (r.str(8) != std::string(kMagic, 8)) throw std::runtime_error("checkpoint: bad magic");
    Checkpoint ck;
    ck.meta_ = r.str(r.u64());
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        Entry e;
        r.read(&e.kind, 1);
        e.name = r.str(r.u64());
        if (e.kind == 0) {
            const std::uint64_t nd = r.u64();
            std::vector<std::int64_t> shape(nd);
            for (auto& d : shape) r.read(&d, 8);
            e.t = Tensor(shape);
            r.read(e.t.data(), static_cast<std::size_t>(e.t.numel()) * 8);
        } else if (e.kind == 1) {
            e.a.resize(r.u64());
            r.read(e.a.data(), e.a.size() * 8);
        } else {
            throw std::runtime_error("checkpoint: unknown entry kind");
        }
        ck.entries_.push_back(std::move(e));
    }
    return ck;
}

void Checkpoint::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace arlk
