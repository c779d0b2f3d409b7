#ifndef NMSG_CHECKPOINT_HPP
#define NMSG_CHECKPOINT_HPP

// Checkpoint container:
//   "NMSG" | version:u8 | count:u32 | count x { name_len:u32 | name | rank:u32 | dims:u64[rank] | f64[numel] }
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "nmsg/errors.hpp"
#include "nmsg/params.hpp"
#include "nmsg/tensor.hpp"

namespace nmsg {

inline constexpr std::uint8_t checkpoint_version = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : b_(bytes) {}

    std::uint64_t get(int width, const char* what)
    {
        if (pos_ + width > b_.size())
            throw FormatError(std::string("checkpoint: truncated ") + what + " at byte offset " + std::to_string(pos_));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += width;
        return v;
    }

    std::string bytes(std::size_t n, const char* what)
    {
        if (pos_ + n > b_.size())
            throw FormatError(std::string("checkpoint: truncated ") + what + " at byte offset " + std::to_string(pos_));
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::string& b_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& items)
{
    std::string out = "NMSG";
    out.push_back(static_cast<char>(checkpoint_version));
    detail::put_u32(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& it : items) {
        detail::put_u32(out, static_cast<std::uint32_t>(it.name.size()));
        out += it.name;
        detail::put_u32(out, static_cast<std::uint32_t>(it.value.rank()));
        for (std::size_t d : it.value.shape()) detail::put_u64(out, d);
        for (double v : it.value.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes)
{
    detail::ByteReader r(bytes);
    if (r.bytes(4, "magic") != "NMSG") throw FormatError("checkpoint: bad magic at byte offset 0");
    const auto ver = r.get(1, "version");
    if (ver != checkpoint_version)
        throw FormatError("checkpoint: unsupported version " + std::to_string(ver) + " at byte offset 4");
    const auto count = r.get(4, "entry count");
    std::vector<NamedTensor> out;
    for (std::uint64_t k = 0; k < count; ++k) {
        NamedTensor nt;
        const auto len = r.get(4, "name length");
        nt.name = r.bytes(len, "name");
        const auto rank = r.get(4, "rank");
        if (rank > 8) throw FormatError("checkpoint: implausible rank at byte offset " + std::to_string(r.pos() - 4));
        Shape s;
        for (std::uint64_t i = 0; i < rank; ++i) s.push_back(r.get(8, "dimension"));
        const std::size_t n = shape_numel(s);
        if (n > (bytes.size() - r.pos()) / 8)
            throw FormatError("checkpoint: truncated values of '" + nt.name + "' at byte offset " + std::to_string(r.pos()));
        std::vector<double> vals(n);
        for (auto& v : vals) v = std::bit_cast<double>(r.get(8, "value"));
        nt.value = Tensor(std::move(s), std::move(vals));
        out.push_back(std::move(nt));
    }
    if (!r.done()) throw FormatError("checkpoint: trailing bytes at byte offset " + std::to_string(r.pos()));
    return out;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& items)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write checkpoint '" + path + "'");
    const std::string bytes = encode_checkpoint(items);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read checkpoint '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Registry parameters as checkpoint entries, in registry order.
inline std::vector<NamedTensor> snapshot(const ParamRegistry& reg)
{
    std::vector<NamedTensor> out;
    for (const auto& e : reg.entries()) out.push_back({e.name, e.param->value});
    return out;
}

/// Copies matching entries into the registry; every registry parameter must be present.
inline void restore(const ParamRegistry& reg, const std::vector<NamedTensor>& items)
{
    for (const auto& e : reg.entries()) {
        const NamedTensor* hit = nullptr;
        for (const auto& it : items)
            if (it.name == e.name) { hit = &it; break; }
        if (!hit) throw FormatError("checkpoint: missing parameter '" + e.name + "'");
        if (hit->value.shape() != e.param->value.shape())
            throw DimensionError("checkpoint: '" + e.name + "' has shape " + shape_str(hit->value.shape()) +
                                 ", model expects " + shape_str(e.param->value.shape()));
        e.param->value = hit->value;
    }
}

} // namespace nmsg

#endif
