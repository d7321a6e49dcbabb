#pragma once

#include "lst/error.hpp"
#include "lst/matrix.hpp"
#include "lst/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

namespace lst {

// ---------------------------------------------------------------------------
// IDX container (MNIST):
//   magic(4, big-endian) | one u32 big-endian size per dimension | raw bytes
//   images: magic 0x00000803, dims (count, rows, cols)
//   labels: magic 0x00000801, dims (count)
//
// Expected files in a data directory (uncompressed):
//   train-images-idx3-ubyte  47 040 016 bytes
//   train-labels-idx1-ubyte      60 008 bytes
//   t10k-images-idx3-ubyte    7 840 016 bytes
//   t10k-labels-idx1-ubyte       10 008 bytes
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;
inline constexpr std::size_t num_classes = 10;

struct IdxImages {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels;  // count * rows * cols, image-major, row-major

    std::span<const std::uint8_t> image(std::size_t i) const {
        return std::span(pixels).subspan(i * rows * cols, rows * cols);
    }
};

struct IdxLabels {
    std::size_t count = 0;
    std::vector<std::uint8_t> labels;
};

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    if (bytes.size() < offset + 4) {
        throw Error(ErrorKind::truncated, "IDX header ends at byte " + std::to_string(bytes.size()));
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void check_magic(std::uint32_t got, std::uint32_t want) {
    if (got != want) {
        throw Error(ErrorKind::bad_magic, "expected IDX magic " + std::to_string(want) + ", got " +
                                              std::to_string(got));
    }
}

} // namespace detail

inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    detail::check_magic(detail::read_be32(bytes, 0), idx_images_magic);
    IdxImages out;
    out.count = detail::read_be32(bytes, 4);
    out.rows = detail::read_be32(bytes, 8);
    out.cols = detail::read_be32(bytes, 12);
    const std::size_t payload = out.count * out.rows * out.cols;
    if (bytes.size() - 16 < payload) {
        throw Error(ErrorKind::truncated, "image payload has " + std::to_string(bytes.size() - 16) +
                                              " bytes, header promises " + std::to_string(payload));
    }
    out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
    return out;
}

inline IdxLabels parse_idx_labels(std::span<const std::uint8_t> bytes) {
    detail::check_magic(detail::read_be32(bytes, 0), idx_labels_magic);
    IdxLabels out;
    out.count = detail::read_be32(bytes, 4);
    if (bytes.size() - 8 < out.count) {
        throw Error(ErrorKind::truncated, "label payload has " + std::to_string(bytes.size() - 8) +
                                              " bytes, header promises " + std::to_string(out.count));
    }
    out.labels.assign(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(out.count));
    for (std::size_t i = 0; i < out.count; ++i) {
        if (out.labels[i] >= num_classes) {
            throw Error(ErrorKind::bad_label, "label " + std::to_string(out.labels[i]) + " at index " +
                                                  std::to_string(i));
        }
    }
    return out;
}

inline std::vector<std::uint8_t> serialize_idx(const IdxImages& images) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + images.pixels.size());
    detail::write_be32(out, idx_images_magic);
    detail::write_be32(out, static_cast<std::uint32_t>(images.count));
    detail::write_be32(out, static_cast<std::uint32_t>(images.rows));
    detail::write_be32(out, static_cast<std::uint32_t>(images.cols));
    out.insert(out.end(), images.pixels.begin(), images.pixels.end());
    return out;
}

inline std::vector<std::uint8_t> serialize_idx(const IdxLabels& labels) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + labels.labels.size());
    detail::write_be32(out, idx_labels_magic);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.count));
    out.insert(out.end(), labels.labels.begin(), labels.labels.end());
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io_error, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorKind::io_error, "read failed: " + path.string());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io_error, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io_error, "write failed: " + path.string());
}

// p -> p / 255, so every pixel lands in [0, 1].
template <typename T>
RealMatrix<T> normalize_image(std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols) {
    RealMatrix<T> m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        m.data()[i] = static_cast<T>(pixels[i]) / T(255);
    }
    return m;
}

template <typename T>
std::vector<RealMatrix<T>> normalize(const IdxImages& raw) {
    std::vector<RealMatrix<T>> out;
    out.reserve(raw.count);
    for (std::size_t i = 0; i < raw.count; ++i) {
        out.push_back(normalize_image<T>(raw.image(i), raw.rows, raw.cols));
    }
    return out;
}

// Immutable after construction.
template <typename T>
struct Dataset {
    std::vector<RealMatrix<T>> images;
    std::vector<std::uint8_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    std::size_t side() const { return images.empty() ? 0 : static_cast<std::size_t>(images.front().rows()); }
};

template <typename T>
Dataset<T> make_dataset(const IdxImages& images, const IdxLabels& labels) {
    if (images.count != labels.count) {
        throw Error(ErrorKind::shape_mismatch, std::to_string(images.count) + " images vs " +
                                                   std::to_string(labels.count) + " labels");
    }
    return Dataset<T>{normalize<T>(images), labels.labels};
}

struct MnistFiles {
    std::filesystem::path images;
    std::filesystem::path labels;
};

inline MnistFiles mnist_train_files(const std::filesystem::path& dir) {
    return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"};
}

inline MnistFiles mnist_test_files(const std::filesystem::path& dir) {
    return {dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"};
}

template <typename T>
Dataset<T> load_dataset(const MnistFiles& files) {
    return make_dataset<T>(parse_idx_images(read_file_bytes(files.images)),
                           parse_idx_labels(read_file_bytes(files.labels)));
}

// One minibatch: images stacked into a (B*side) x side matrix.
template <typename T>
struct Batch {
    RealMatrix<T> images;
    std::vector<std::uint8_t> labels;
    std::size_t side = 0;

    std::size_t size() const noexcept { return labels.size(); }
};

template <typename T>
Batch<T> gather_batch(const Dataset<T>& ds, std::span<const std::size_t> indices) {
    const std::size_t side = ds.side();
    Batch<T> batch;
    batch.side = side;
    batch.images.resize(static_cast<Eigen::Index>(indices.size() * side), static_cast<Eigen::Index>(side));
    batch.labels.reserve(indices.size());
    const auto d = static_cast<Eigen::Index>(side);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        batch.images.middleRows(static_cast<Eigen::Index>(k) * d, d) = ds.images[indices[k]];
        batch.labels.push_back(ds.labels[indices[k]]);
    }
    return batch;
}

// Per-epoch shuffling plan. The permutation for an epoch is a Fisher-Yates
// shuffle driven by Xoshiro256(derive_seed(seed, epoch)); identical seeds give
// identical permutation sequences.
struct BatchPlan {
    std::uint64_t seed = 0;
    std::size_t batch_size = 1000;

    std::vector<std::size_t> permutation(std::size_t epoch, std::size_t count) const {
        Xoshiro256 rng(derive_seed(seed, epoch));
        return shuffled_indices(count, rng);
    }

    // Index lists for every minibatch of the epoch; the final partial batch is kept.
    std::vector<std::vector<std::size_t>> index_batches(std::size_t epoch, std::size_t count) const {
        if (count == 0) throw Error(ErrorKind::empty_dataset, "cannot batch an empty dataset");
        if (batch_size == 0) throw Error(ErrorKind::bad_argument, "batch size must be positive");
        const auto perm = permutation(epoch, count);
        std::vector<std::vector<std::size_t>> out;
        for (std::size_t start = 0; start < count; start += batch_size) {
            const std::size_t end = std::min(count, start + batch_size);
            out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
        }
        return out;
    }
};

template <typename T>
std::vector<Batch<T>> batches(const Dataset<T>& ds, const BatchPlan& plan, std::size_t epoch) {
    std::vector<Batch<T>> out;
    for (const auto& idx : plan.index_batches(epoch, ds.size())) {
        out.push_back(gather_batch(ds, idx));
    }
    return out;
}

} // namespace lst
