#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "abdnet/model.hpp"

namespace abd {

/// FNV-1a over raw bytes; used for freeze-contract and round-trip checks.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    }
    return h;
}

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct NamedBuffer {
    std::string name;
    std::vector<float> data;
};

struct AdamSlot {
    std::string name;
    std::vector<float> m, v;
};

/// Bit-exact on-disk model state: "ABDN" magic, format version, a sorted
/// key=value config snapshot, the named tensor table (f32, little-endian),
/// batch-norm running buffers, optional Adam state, and the training RNG
/// position (base seed + next epoch; all per-epoch streams derive from it).
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> config;
    std::vector<NamedTensor> tensors;
    std::vector<NamedBuffer> buffers;
    bool has_optimizer = false;
    std::uint64_t adam_steps = 0;
    std::vector<AdamSlot> adam;
    std::uint64_t rng_seed = 0;
    std::uint32_t next_epoch = 0;

    std::uint64_t weights_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& t : tensors) {
            h = fnv1a64(t.name.data(), t.name.size(), h);
            h = fnv1a64(t.data.data(), t.data.size() * sizeof(float), h);
        }
        return h;
    }
};

namespace detail {

inline void write_u32(std::string& out, std::uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    out.append(b, 4);
}
inline void write_u64(std::string& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffull));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
}
inline void write_str(std::string& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}
inline void write_f32v(std::string& out, const std::vector<float>& v) {
    write_u64(out, v.size());
    static_assert(sizeof(float) == 4);
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * 4);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    std::vector<float> f32v() {
        const std::uint64_t n = u64();
        need(n * 4);
        std::vector<float> v(n);
        std::memcpy(v.data(), buf.data() + pos, n * 4);
        pos += n * 4;
        return v;
    }
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::string out;
    out += "ABDN";
    detail::write_u32(out, Checkpoint::kVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(c.config.size()));
    for (const auto& [k, v] : c.config) {  // std::map: sorted, deterministic
        detail::write_str(out, k);
        detail::write_str(out, v);
    }
    detail::write_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        detail::write_str(out, t.name);
        out.push_back(char(0));  // dtype: f32
        detail::write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::write_u64(out, d);
        detail::write_f32v(out, t.data);
    }
    detail::write_u32(out, static_cast<std::uint32_t>(c.buffers.size()));
    for (const auto& b : c.buffers) {
        detail::write_str(out, b.name);
        detail::write_f32v(out, b.data);
    }
    out.push_back(c.has_optimizer ? char(1) : char(0));
    if (c.has_optimizer) {
        detail::write_u64(out, c.adam_steps);
        detail::write_u32(out, static_cast<std::uint32_t>(c.adam.size()));
        for (const auto& s : c.adam) {
            detail::write_str(out, s.name);
            detail::write_f32v(out, s.m);
            detail::write_f32v(out, s.v);
        }
    }
    detail::write_u64(out, c.rng_seed);
    detail::write_u32(out, c.next_epoch);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << out;
    if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || buf.compare(0, 4, "ABDN") != 0) {
        throw std::runtime_error("'" + path + "' is not an ABDN checkpoint (bad magic)");
    }
    detail::Reader r(buf);
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::kVersion) {
        throw std::runtime_error("'" + path + "': unsupported checkpoint format version " + std::to_string(version));
    }
    Checkpoint c;
    const std::uint32_t n_cfg = r.u32();
    for (std::uint32_t i = 0; i < n_cfg; ++i) {
        std::string k = r.str();
        c.config[k] = r.str();
    }
    const std::uint32_t n_t = r.u32();
    for (std::uint32_t i = 0; i < n_t; ++i) {
        NamedTensor t;
        t.name = r.str();
        r.need(1);
        if (r.buf[r.pos++] != 0) throw std::runtime_error("checkpoint: unknown dtype");
        const std::uint32_t nd = r.u32();
        for (std::uint32_t d = 0; d < nd; ++d) t.shape.push_back(r.u64());
        t.data = r.f32v();
        if (shape_numel(t.shape) != t.data.size()) throw std::runtime_error("checkpoint: tensor size mismatch");
        c.tensors.push_back(std::move(t));
    }
    const std::uint32_t n_b = r.u32();
    for (std::uint32_t i = 0; i < n_b; ++i) {
        NamedBuffer b;
        b.name = r.str();
        b.data = r.f32v();
        c.buffers.push_back(std::move(b));
    }
    r.need(1);
    c.has_optimizer = r.buf[r.pos++] != 0;
    if (c.has_optimizer) {
        c.adam_steps = r.u64();
        const std::uint32_t n_a = r.u32();
        for (std::uint32_t i = 0; i < n_a; ++i) {
            AdamSlot s;
            s.name = r.str();
            s.m = r.f32v();
            s.v = r.f32v();
            c.adam.push_back(std::move(s));
        }
    }
    c.rng_seed = r.u64();
    c.next_epoch = r.u32();
    if (r.pos != buf.size()) throw std::runtime_error("checkpoint: trailing bytes");
    return c;
}

// ---------------------------------------------------------------------------
// model <-> checkpoint
// ---------------------------------------------------------------------------

template <typename Model>
void snapshot_weights(Model& model, Checkpoint& c) {
    for (auto& [name, p] : model.named_params()) {
        NamedTensor t;
        t.name = name;
        t.shape = p.shape();
        t.data.assign(p.values().begin(), p.values().end());
        c.tensors.push_back(std::move(t));
    }
    for (auto& [name, buf] : model.named_buffers()) {
        c.buffers.push_back({name, *buf});
    }
}

template <typename Model>
void restore_weights(Model& model, const Checkpoint& c) {
    auto params = model.named_params();
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : c.tensors) by_name[t.name] = &t;
    for (auto& [name, p] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (it->second->shape != p.shape()) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        std::copy(it->second->data.begin(), it->second->data.end(), p.values_mut().begin());
    }
    std::map<std::string, const NamedBuffer*> buf_by_name;
    for (const auto& b : c.buffers) buf_by_name[b.name] = &b;
    for (auto& [name, buf] : model.named_buffers()) {
        auto it = buf_by_name.find(name);
        if (it == buf_by_name.end()) throw std::runtime_error("checkpoint: missing buffer '" + name + "'");
        if (it->second->data.size() != buf->size()) {
            throw std::runtime_error("checkpoint: buffer size mismatch for '" + name + "'");
        }
        *buf = it->second->data;
    }
}

inline void snapshot_adam(const NamedParams<float>& params, const AdamStateT<float>& st, Checkpoint& c) {
    c.has_optimizer = true;
    c.adam_steps = st.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        c.adam.push_back({params[i].first, st.m[i], st.v[i]});
    }
}

inline void restore_adam(const NamedParams<float>& params, AdamStateT<float>& st, const Checkpoint& c) {
    if (!c.has_optimizer) throw std::runtime_error("checkpoint: no optimizer state to resume from");
    if (c.adam.size() != params.size()) throw std::runtime_error("checkpoint: optimizer slot count mismatch");
    st.step = c.adam_steps;
    st.m.clear();
    st.v.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (c.adam[i].name != params[i].first) {
            throw std::runtime_error("checkpoint: optimizer slot '" + c.adam[i].name + "' does not match parameter '" +
                                     params[i].first + "'");
        }
        st.m.push_back(c.adam[i].m);
        st.v.push_back(c.adam[i].v);
    }
}

inline DecomposerModel decomposer_from_checkpoint(const Checkpoint& c) {
    const auto kind = c.config.find("kind");
    if (kind == c.config.end() || (kind->second != "decomposer" && kind->second != "classifier")) {
        throw std::runtime_error("checkpoint: missing or unknown kind");
    }
    DecomposerModel m = DecomposerModel::init(DecomposerConfig::from_map(c.config), /*seed=*/0);
    restore_weights(m, c);
    return m;
}

inline ClassifierModel classifier_from_checkpoint(const Checkpoint& c) {
    const auto kind = c.config.find("kind");
    if (kind == c.config.end() || kind->second != "classifier") {
        throw std::runtime_error("checkpoint: not a classifier checkpoint");
    }
    ClassifierModel m = ClassifierModel::init(ClassifierModel::config_from_map(c.config), /*seed=*/0);
    restore_weights(m, c);
    return m;
}

}  // namespace abd
