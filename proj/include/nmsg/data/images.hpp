#ifndef NMSG_DATA_IMAGES_HPP
#define NMSG_DATA_IMAGES_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "nmsg/errors.hpp"
#include "nmsg/tensor.hpp"

namespace nmsg {

/// Labeled single-channel images with values in [0, 1], stored [H, W, C].
struct ImageDataset {
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t channels = 1;
    std::size_t classes = 0;
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    std::vector<std::vector<std::size_t>> class_index;

    std::size_t size() const { return images.size(); }

    /// Rebuilds `class_index` from `labels`; `classes` is raised to cover every label.
    void build_index()
    {
        if (labels.size() != images.size())
            throw DataError("dataset: " + std::to_string(images.size()) + " images but " + std::to_string(labels.size()) + " labels");
        for (std::size_t l : labels) classes = std::max(classes, l + 1);
        class_index.assign(classes, {});
        for (std::size_t i = 0; i < labels.size(); ++i) class_index[labels[i]].push_back(i);
    }

    void add(Tensor image, std::size_t label)
    {
        if (image.shape() != Shape{height, width, channels})
            throw DimensionError("dataset: image " + shape_str(image.shape()) + " does not match " +
                                 shape_str({height, width, channels}));
        images.push_back(std::move(image));
        labels.push_back(label);
    }
};

namespace detail {

inline std::string read_file(const std::string& path, const char* what)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(std::string(what) + ": cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::string& b, std::size_t off, const char* what)
{
    if (off + 4 > b.size())
        throw FormatError(std::string(what) + ": truncated header at byte offset " + std::to_string(off));
    return (std::uint32_t(std::uint8_t(b[off])) << 24) | (std::uint32_t(std::uint8_t(b[off + 1])) << 16) |
           (std::uint32_t(std::uint8_t(b[off + 2])) << 8) | std::uint32_t(std::uint8_t(b[off + 3]));
}

} // namespace detail

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

/// Parses IDX image and label buffers (big-endian headers, unsigned byte payloads).
inline ImageDataset parse_idx(const std::string& img, const std::string& lab)
{
    const std::uint32_t im = detail::be32(img, 0, "idx images");
    if (im != idx_images_magic)
        throw FormatError("idx images: bad magic at byte offset 0 (expected 0x00000803)");
    const std::uint32_t lm = detail::be32(lab, 0, "idx labels");
    if (lm != idx_labels_magic)
        throw FormatError("idx labels: bad magic at byte offset 0 (expected 0x00000801)");
    const std::size_t n = detail::be32(img, 4, "idx images");
    const std::size_t rows = detail::be32(img, 8, "idx images");
    const std::size_t cols = detail::be32(img, 12, "idx images");
    const std::size_t nl = detail::be32(lab, 4, "idx labels");
    if (n != nl)
        throw FormatError("idx: count mismatch, images header at byte offset 4 says " + std::to_string(n) +
                          ", labels header at byte offset 4 says " + std::to_string(nl));
    const std::size_t need = 16 + n * rows * cols;
    if (img.size() < need)
        throw FormatError("idx images: truncated payload at byte offset " + std::to_string(img.size()) + ", expected " +
                          std::to_string(need) + " bytes");
    if (lab.size() < 8 + n)
        throw FormatError("idx labels: truncated payload at byte offset " + std::to_string(lab.size()) + ", expected " +
                          std::to_string(8 + n) + " bytes");
    ImageDataset ds;
    ds.height = rows;
    ds.width = cols;
    ds.channels = 1;
    ds.images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor t({rows, cols, 1});
        const std::size_t base = 16 + i * rows * cols;
        for (std::size_t p = 0; p < rows * cols; ++p) t[p] = std::uint8_t(img[base + p]) / 255.0;
        ds.images.push_back(std::move(t));
        ds.labels.push_back(std::uint8_t(lab[8 + i]));
    }
    ds.build_index();
    return ds;
}

inline ImageDataset load_idx(const std::string& images_path, const std::string& labels_path)
{
    return parse_idx(detail::read_file(images_path, "idx images"), detail::read_file(labels_path, "idx labels"));
}

inline constexpr std::uint8_t nmim_version = 1;

/// NMIM container: "NMIM", version byte, u32 class count, then per class a u32 sample
/// count followed by 28x28 unsigned bytes per sample. Integers are little-endian.
inline ImageDataset parse_raw_classes(const std::string& b)
{
    constexpr std::size_t px = 28 * 28;
    if (b.size() < 5 || b.compare(0, 4, "NMIM") != 0) throw FormatError("nmim: bad magic at byte offset 0");
    if (std::uint8_t(b[4]) != nmim_version)
        throw FormatError("nmim: unsupported version " + std::to_string(std::uint8_t(b[4])) + " at byte offset 4");
    std::size_t off = 5;
    auto u32 = [&](const char* what) {
        if (off + 4 > b.size())
            throw FormatError(std::string("nmim: truncated ") + what + " at byte offset " + std::to_string(off));
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(b[off + i]);
        off += 4;
        return v;
    };
    const std::size_t nc = u32("class count");
    ImageDataset ds;
    for (std::size_t c = 0; c < nc; ++c) {
        const std::size_t at = off;
        const std::size_t cnt = u32("sample count");
        if (cnt == 0) throw FormatError("nmim: class " + std::to_string(c) + " at byte offset " + std::to_string(at) + " is empty");
        if (off + cnt * px > b.size())
            throw FormatError("nmim: truncated payload for class " + std::to_string(c) + " at byte offset " + std::to_string(off));
        for (std::size_t s = 0; s < cnt; ++s) {
            Tensor t({28, 28, 1});
            for (std::size_t p = 0; p < px; ++p) t[p] = std::uint8_t(b[off + p]) / 255.0;
            off += px;
            ds.add(std::move(t), c);
        }
    }
    if (off != b.size()) throw FormatError("nmim: trailing bytes at byte offset " + std::to_string(off));
    ds.classes = nc;
    ds.build_index();
    return ds;
}

inline ImageDataset load_raw_classes(const std::string& path) { return parse_raw_classes(detail::read_file(path, "nmim")); }

/// Encodes a 28x28x1 dataset as NMIM. Pixel values are rounded to bytes.
inline std::string encode_raw_classes(const ImageDataset& ds)
{
    if (ds.height != 28 || ds.width != 28 || ds.channels != 1)
        throw DimensionError("nmim: only 28x28 single-channel images are supported");
    std::string out = "NMIM";
    out.push_back(static_cast<char>(nmim_version));
    auto put = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    put(static_cast<std::uint32_t>(ds.class_index.size()));
    for (const auto& members : ds.class_index) {
        if (members.empty()) throw DataError("nmim: cannot encode an empty class");
        put(static_cast<std::uint32_t>(members.size()));
        for (std::size_t i : members)
            for (double v : ds.images[i].values()) {
                const double c = std::clamp(v, 0.0, 1.0) * 255.0 + 0.5;
                out.push_back(static_cast<char>(static_cast<std::uint8_t>(c)));
            }
    }
    return out;
}

inline void save_raw_classes(const std::string& path, const ImageDataset& ds)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("nmim: cannot write '" + path + "'");
    const std::string b = encode_raw_classes(ds);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

/// Rotates an [N, N, C] image by quarter turns counter-clockwise.
inline Tensor rot90(const Tensor& img, unsigned quarter_turns)
{
    if (img.rank() != 3 || img.dim(0) != img.dim(1))
        throw DimensionError("rot90: expected a square [N,N,C] image, got " + shape_str(img.shape()));
    const std::size_t n = img.dim(0), c = img.dim(2);
    Tensor cur = img;
    for (unsigned k = 0; k < quarter_turns % 4; ++k) {
        Tensor next(img.shape());
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t q = 0; q < n; ++q)
                for (std::size_t ch = 0; ch < c; ++ch) next[((n - 1 - q) * n + r) * c + ch] = cur[(r * n + q) * c + ch];
        cur = std::move(next);
    }
    return cur;
}

} // namespace nmsg

#endif
