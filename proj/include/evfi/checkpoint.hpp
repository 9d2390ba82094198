#pragma once

// Named parameter storage and the EVFICKPT checkpoint format:
//   "EVFICKPT", u32 version, u32 count, then per record
//   u16 name length, name bytes, u8 rank, u32 dims[rank], f32 data[numel].

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "evfi/io.hpp"
#include "evfi/ops.hpp"

namespace evfi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Insertion-ordered set of named trainable tensors. Tensors are shared
/// handles, so layers holding a copy see optimizer updates and loads.
class ParamStore {
public:
    const Tensor& add(const std::string& name, Tensor t) {
        if (name.empty() || name.size() > 0xFFFF) throw std::invalid_argument("parameter name length out of range");
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
        t.set_requires_grad(true);
        index_.emplace(name, order_.size());
        order_.push_back(name);
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return tensors_[it->second];
    }
    std::size_t size() const { return tensors_.size(); }
    const std::vector<std::string>& names() const { return order_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.numel();
        return n;
    }

    /// Copies values from `other` into the tensors of the same name. Every
    /// parameter of this store must be present with a matching shape.
    void load_values(const ParamStore& other) {
        for (std::size_t i = 0; i < order_.size(); ++i) {
            if (!other.contains(order_[i])) throw DataError("checkpoint lacks parameter '" + order_[i] + "'");
            const Tensor& src = other.get(order_[i]);
            if (src.shape() != tensors_[i].shape()) {
                throw DataError("parameter '" + order_[i] + "' has shape " + shape_str(src.shape()) + ", expected " +
                                shape_str(tensors_[i].shape()));
            }
            std::copy(src.data().begin(), src.data().end(), tensors_[i].mutable_data().begin());
        }
    }

    /// Rounds every value to float32 so the in-memory state equals what a
    /// checkpoint stores.
    void round_to_f32() {
        for (auto& t : tensors_)
            for (double& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
    }

    bool all_finite() const {
        for (const auto& t : tensors_)
            if (!evfi::all_finite(t)) return false;
        return true;
    }

private:
    std::vector<std::string> order_;
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

inline std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store) {
    ByteWriter w;
    w.bytes("EVFICKPT");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        const std::string& name = store.names()[i];
        const Tensor& t = store.tensors()[i];
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        if (t.dim() > 255) throw std::invalid_argument("tensor rank too large for checkpoint");
        w.u8(static_cast<std::uint8_t>(t.dim()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.data()) w.f32(static_cast<float>(v));
    }
    return w.take();
}

inline ParamStore decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "checkpoint") {
    ByteReader r(bytes, source);
    r.expect_magic("EVFICKPT");
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version), version_at);
    const std::uint32_t count = r.u32("parameter count");
    ParamStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t rec_at = r.offset();
        const std::uint16_t len = r.u16("name length");
        std::string name = r.bytes(len, "parameter name");
        if (store.contains(name)) r.fail("duplicate parameter name '" + name + "'", rec_at);
        const std::uint8_t rank = r.u8("rank");
        Shape shape(rank);
        std::size_t n = 1;
        bool zero = false;
        for (auto& d : shape) {
            d = r.u32("dimension");
            // Saturate so a corrupt header cannot overflow the byte count below.
            constexpr std::size_t limit = std::numeric_limits<std::size_t>::max() / 4;
            zero = zero || d == 0;
            n = (d != 0 && n > limit / d) ? limit + 1 : n * d;
        }
        if (zero) n = 0;
        r.need(4 * n, "parameter data");
        std::vector<double> data(n);
        for (auto& v : data) v = static_cast<double>(r.f32("value"));
        store.add(name, Tensor(std::move(shape), std::move(data)));
    }
    if (r.remaining() != 0) r.fail("trailing bytes after last parameter", r.offset());
    return store;
}

inline std::uint64_t checkpoint_digest(const ParamStore& store) { return fnv1a64(encode_checkpoint(store)); }

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
    write_file(path, encode_checkpoint(store));
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_checkpoint(bytes, path.string());
}

}  // namespace evfi
