#pragma once

// MNIST-style IDX ingestion, a synthetic stand-in dataset, and seeded
// channel-set splitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedpower/binary_io.hpp"
#include "fedpower/error.hpp"

namespace fedpower {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr int kClasses = 10;

/// n samples, each rows·cols pixels in [0,1] (row-major), with labels in [0,10).
struct LabeledDataset {
    std::size_t rows = 28;
    std::size_t cols = 28;
    std::vector<double> inputs;
    std::vector<int> labels;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::size_t features() const noexcept { return rows * cols; }
    [[nodiscard]] const double* sample(std::size_t i) const { return inputs.data() + i * features(); }

    /// Samples at the given indices, in that order.
    [[nodiscard]] LabeledDataset subset(std::span<const std::size_t> idx) const {
        LabeledDataset out{rows, cols, {}, {}};
        out.inputs.reserve(idx.size() * features());
        for (std::size_t i : idx) {
            if (i >= size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
            out.inputs.insert(out.inputs.end(), sample(i), sample(i) + features());
            out.labels.push_back(labels[i]);
        }
        return out;
    }
};

namespace detail {

inline std::string hex32(std::uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
    return os.str();
}

inline void check_magic(std::uint32_t got, std::uint32_t want, const char* what) {
    if (got != want) {
        throw FormatError(std::string(what) + " magic is " + hex32(got) + ", expected " + hex32(want));
    }
}

} // namespace detail

inline LabeledDataset read_idx(std::istream& images, std::istream& labels) {
    detail::check_magic(binary::get_u32_be(images, "IDX image header"), kIdxImageMagic, "IDX image");
    const auto n = binary::get_u32_be(images, "IDX image header");
    const auto rows = binary::get_u32_be(images, "IDX image header");
    const auto cols = binary::get_u32_be(images, "IDX image header");
    detail::check_magic(binary::get_u32_be(labels, "IDX label header"), kIdxLabelMagic, "IDX label");
    const auto nl = binary::get_u32_be(labels, "IDX label header");
    if (n != nl) {
        throw ConsistencyError("IDX image file holds " + std::to_string(n) + " samples but label file holds " +
                               std::to_string(nl));
    }
    LabeledDataset ds{rows, cols, {}, {}};
    const std::size_t total = static_cast<std::size_t>(n) * rows * cols;
    std::vector<unsigned char> px(total);
    binary::read_exact(images, reinterpret_cast<char*>(px.data()), total, "IDX image payload");
    std::vector<unsigned char> lb(n);
    binary::read_exact(labels, reinterpret_cast<char*>(lb.data()), n, "IDX label payload");
    ds.inputs.resize(total);
    std::transform(px.begin(), px.end(), ds.inputs.begin(), [](unsigned char b) { return b / 255.0; });
    ds.labels.reserve(n);
    for (unsigned char b : lb) {
        if (b >= kClasses) throw DataError("IDX label " + std::to_string(b) + " outside [0,10)");
        ds.labels.push_back(b);
    }
    return ds;
}

inline LabeledDataset read_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream im(images_path, std::ios::binary);
    if (!im) throw DataError("cannot open " + images_path);
    std::ifstream lb(labels_path, std::ios::binary);
    if (!lb) throw DataError("cannot open " + labels_path);
    return read_idx(im, lb);
}

/// Pixels are written as round(255·x); values produced by read_idx or
/// synth_dataset round-trip exactly.
inline void write_idx(std::ostream& images, std::ostream& labels, const LabeledDataset& ds) {
    if (ds.inputs.size() != ds.size() * ds.features()) throw ShapeError("dataset inputs do not match labels");
    binary::put_u32_be(images, kIdxImageMagic);
    binary::put_u32_be(images, static_cast<std::uint32_t>(ds.size()));
    binary::put_u32_be(images, static_cast<std::uint32_t>(ds.rows));
    binary::put_u32_be(images, static_cast<std::uint32_t>(ds.cols));
    for (double v : ds.inputs) {
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("pixel value outside [0,1]");
        images.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    binary::put_u32_be(labels, kIdxLabelMagic);
    binary::put_u32_be(labels, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) labels.put(static_cast<char>(static_cast<unsigned char>(l)));
}

inline void write_idx(const std::string& images_path, const std::string& labels_path, const LabeledDataset& ds) {
    std::ofstream im(images_path, std::ios::binary);
    std::ofstream lb(labels_path, std::ios::binary);
    if (!im || !lb) throw DataError("cannot open IDX output files");
    write_idx(im, lb, ds);
}

/// Ten random class prototypes plus clipped Gaussian noise, quantized to
/// byte levels. Labels cycle 0..9 and are then shuffled.
inline LabeledDataset synth_dataset(std::size_t n, std::uint64_t seed, double noise = 0.35) {
    if (n < kClasses) throw ConfigError("synthetic dataset needs at least 10 samples");
    std::mt19937_64 rng(seed);
    LabeledDataset ds;
    const std::size_t d = ds.features();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> proto(kClasses * d);
    for (double& v : proto) v = unit(rng) < 0.3 ? unit(rng) : 0.0;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % kClasses);
    std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
    std::normal_distribution<double> gauss(0.0, noise);
    ds.inputs.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* c = proto.data() + static_cast<std::size_t>(ds.labels[i]) * d;
        for (std::size_t k = 0; k < d; ++k) {
            const double v = std::clamp(c[k] + gauss(rng), 0.0, 1.0);
            ds.inputs[i * d + k] = std::round(v * 255.0) / 255.0;
        }
    }
    return ds;
}

struct SplitCounts {
    std::size_t train = 1000;
    std::size_t validation = 1000;
    std::size_t test = 1000;
    [[nodiscard]] std::size_t total() const noexcept { return train + validation + test; }
};

template <class T>
struct DatasetSplits {
    std::vector<T> train;
    std::vector<T> validation;
    std::vector<T> test;
};

/// Seeded shuffle, then contiguous train/validation/test slices.
template <class T>
DatasetSplits<T> split_channels(std::vector<T> realizations, std::uint64_t seed, SplitCounts counts = {}) {
    if (realizations.size() != counts.total()) {
        throw ConfigError("split expects " + std::to_string(counts.total()) + " realizations, got " +
                          std::to_string(realizations.size()));
    }
    std::mt19937_64 rng(seed);
    std::shuffle(realizations.begin(), realizations.end(), rng);
    DatasetSplits<T> out;
    auto it = std::make_move_iterator(realizations.begin());
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(counts.train));
    it += static_cast<std::ptrdiff_t>(counts.train);
    out.validation.assign(it, it + static_cast<std::ptrdiff_t>(counts.validation));
    it += static_cast<std::ptrdiff_t>(counts.validation);
    out.test.assign(it, it + static_cast<std::ptrdiff_t>(counts.test));
    return out;
}

} // namespace fedpower
