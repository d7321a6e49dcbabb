#pragma once

#include "lst/error.hpp"
#include "lst/matrix.hpp"
#include "lst/mnist_io.hpp"
#include "lst/model_io.hpp"
#include "lst/nn.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace lst::fixed {

// ---------------------------------------------------------------------------
// Q5.7: 12-bit two's complement, 5 integer bits including sign, 7 fractional
// bits. value = raw / 128, raw in [-2048, 2047], value in [-16, 15.9921875].
// ---------------------------------------------------------------------------

inline constexpr int frac_bits = 7;
inline constexpr std::int32_t one_raw = 1 << frac_bits;
inline constexpr std::int32_t raw_min = -2048;
inline constexpr std::int32_t raw_max = 2047;

struct FixedWord {
    std::int16_t raw = 0;

    static constexpr FixedWord from_raw(std::int32_t r) {
        if (r < raw_min || r > raw_max) throw Error(ErrorKind::bad_argument, "raw word out of Q5.7 range");
        return FixedWord{static_cast<std::int16_t>(r)};
    }

    constexpr bool operator==(const FixedWord&) const = default;
};

// Counts saturation events; the golden model never fails on overflow.
struct SaturationCounter {
    std::uint64_t saturated = 0;
    std::uint64_t total = 0;

    double fraction() const { return total ? static_cast<double>(saturated) / static_cast<double>(total) : 0.0; }
};

// round(num / 2^shift), ties away from zero.
constexpr std::int64_t round_shift(std::int64_t num, int shift) {
    const std::int64_t half = std::int64_t{1} << (shift - 1);
    const std::int64_t mag = num < 0 ? -num : num;
    const std::int64_t q = (mag + half) >> shift;
    return num < 0 ? -q : q;
}

constexpr FixedWord saturate(std::int64_t r, SaturationCounter* stats = nullptr) {
    if (stats) ++stats->total;
    if (r > raw_max || r < raw_min) {
        if (stats) ++stats->saturated;
        return FixedWord{static_cast<std::int16_t>(r > raw_max ? raw_max : raw_min)};
    }
    return FixedWord{static_cast<std::int16_t>(r)};
}

// round(x * 128), ties away from zero, then saturate.
inline FixedWord quantize(double x, SaturationCounter* stats = nullptr) {
    const double scaled = std::round(x * one_raw);  // std::round: halves away from zero
    if (scaled > raw_max || scaled < raw_min) return saturate(scaled > 0 ? raw_max + 1 : raw_min - 1, stats);
    return saturate(static_cast<std::int64_t>(scaled), stats);
}

constexpr double dequantize(FixedWord w) { return static_cast<double>(w.raw) / one_raw; }

// ---------------------------------------------------------------------------
// MAC core. Products of two Q5.7 words sit at scale 2^-14 and are summed
// exactly; the bias enters shifted left by 7; one round + saturate yields the
// Q5.7 result. The accumulator must hold 785 * 2^22 + 2^18 (< 2^32), i.e. 33
// signed bits, so it is modelled with a 64-bit integer. Inside the LST-1
// datapath the sums stay below 2^28.
// ---------------------------------------------------------------------------

// bias * 2^7 + sum(w * x), exact, at scale 2^-14.
inline std::int64_t mac_accumulate(std::span<const FixedWord> weights, std::span<const FixedWord> inputs,
                                   FixedWord bias) {
    if (weights.size() != inputs.size()) {
        throw Error(ErrorKind::shape_mismatch, "MAC operands differ in length");
    }
    std::int64_t acc = std::int64_t{bias.raw} * one_raw;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += std::int64_t{weights[i].raw} * std::int64_t{inputs[i].raw};
    }
    return acc;
}

inline FixedWord mac_dot(std::span<const FixedWord> weights, std::span<const FixedWord> inputs, FixedWord bias,
                         SaturationCounter* stats = nullptr) {
    return saturate(round_shift(mac_accumulate(weights, inputs, bias), frac_bits), stats);
}

// Piecewise-quadratic tanh surrogate:
//   F(x) = sign(x)          |x| > 2
//   F(x) = (1 + x/4) * x    -2 <= x < 0
//   F(x) = (1 - x/4) * x    0 <= x <= 2
// x/4 is a lossless move of the binary point (Q5.7 -> Q5.9), so the
// coefficient (1 -/+ x/4) is the integer 512 -/+ raw at scale 2^-9 and the
// product raw * coeff sits at scale 2^-16; one round-half-away step brings it
// back to Q5.7. |F| <= 1, F is odd and monotone over every word; raw -2048
// maps to -128.
constexpr FixedWord tanh_approx(FixedWord x) {
    const std::int32_t r = x.raw;
    if (r > 2 * one_raw) return FixedWord{static_cast<std::int16_t>(one_raw)};
    if (r < -2 * one_raw) return FixedWord{static_cast<std::int16_t>(-one_raw)};
    const std::int32_t coeff = r >= 0 ? 512 - r : 512 + r;
    return FixedWord{static_cast<std::int16_t>(round_shift(std::int64_t{coeff} * r, 9))};
}

// The same approximation in real arithmetic.
constexpr double tanh_approx(double x) {
    if (x > 2.0) return 1.0;
    if (x < -2.0) return -1.0;
    return x >= 0.0 ? (1.0 - x / 4.0) * x : (1.0 + x / 4.0) * x;
}

// ---------------------------------------------------------------------------
// Quantized LST-1 and its five-stage in-place datapath
// ---------------------------------------------------------------------------

inline constexpr std::size_t side = 28;
inline constexpr std::size_t pixels = side * side;
inline constexpr std::size_t classes = 10;

using WordVector = std::vector<FixedWord>;

struct QuantizedFc {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    WordVector weight;  // d_out x d_in, row-major; row k is the ROM of PE k
    WordVector bias;    // d_out

    std::span<const FixedWord> row(std::size_t k) const { return std::span(weight).subspan(k * d_in, d_in); }
};

struct QuantizedModel {
    ModelSpec spec;
    QuantizedFc row;  // FC1, ROM ROW
    QuantizedFc col;  // FC2, ROM COL
    QuantizedFc out;  // output layer
    std::uint64_t saturated_params = 0;
};

inline bool is_lst1_shape(const ModelSpec& spec) {
    const auto ref = lst1_spec();
    return spec.input_side == ref.input_side && spec.stages == ref.stages;
}

inline QuantizedFc quantize_fc(const FcLayer<double>& fc, SaturationCounter& stats) {
    QuantizedFc q;
    q.d_in = fc.d_in();
    q.d_out = fc.d_out();
    for (Eigen::Index i = 0; i < fc.weight.size(); ++i) q.weight.push_back(quantize(fc.weight.data()[i], &stats));
    for (Eigen::Index i = 0; i < fc.bias.size(); ++i) q.bias.push_back(quantize(fc.bias(i), &stats));
    return q;
}

// Only the LST-1 shape maps onto the hardware datapath.
inline QuantizedModel quantize_model(const ModelSpec& spec, const ModelParams<double>& params) {
    if (!is_lst1_shape(spec)) {
        throw Error(ErrorKind::unsupported_spec, "only LST-1 (lst 28 28, flatten, fc 784 10) can be quantized, got '" +
                                                     spec.name + "'");
    }
    check_params(spec, params);
    SaturationCounter stats;
    QuantizedModel qm;
    qm.spec = spec;
    const auto& block = std::get<LstBlock<double>>(params.stages[0]);
    qm.row = quantize_fc(block.row, stats);
    qm.col = quantize_fc(block.col, stats);
    qm.out = quantize_fc(std::get<FcLayer<double>>(params.stages[2]), stats);
    qm.saturated_params = stats.saturated;
    return qm;
}

// Dequantized copy of the model as float parameters.
inline ModelParams<double> dequantize_model(const QuantizedModel& qm) {
    auto params = make_params<double>(qm.spec);
    auto fill = [](FcLayer<double>& fc, const QuantizedFc& q) {
        for (std::size_t i = 0; i < q.weight.size(); ++i) fc.weight.data()[i] = dequantize(q.weight[i]);
        for (std::size_t i = 0; i < q.bias.size(); ++i) fc.bias(static_cast<Eigen::Index>(i)) = dequantize(q.bias[i]);
    };
    auto& block = std::get<LstBlock<double>>(params.stages[0]);
    fill(block.row, qm.row);
    fill(block.col, qm.col);
    fill(std::get<FcLayer<double>>(params.stages[2]), qm.out);
    return params;
}

// 28x28 words, mutated in place from stage to stage.
struct RamImage {
    std::array<FixedWord, pixels> words{};

    FixedWord& at(std::size_t r, std::size_t c) { return words[r * side + c]; }
    const FixedWord& at(std::size_t r, std::size_t c) const { return words[r * side + c]; }

    bool operator==(const RamImage&) const = default;
};

struct InferenceTrace {
    RamImage after_load;     // stage 1
    RamImage after_rows;     // stage 2
    RamImage after_cols;     // stage 3
    std::array<FixedWord, classes> outputs{};  // stage 4, Q5.7
    std::array<std::int64_t, classes> sums{};  // stage 4 accumulators, scale 2^-14
    std::size_t digit = 0;   // stage 5
    SaturationCounter mac_stats;  // MAC outputs of stages 2-4
};

// Stage 1: quantize a [0, 1] image into RAM.
inline RamImage load_image(std::span<const double> image) {
    if (image.size() != pixels) throw Error(ErrorKind::shape_mismatch, "LST-1 takes 784 pixels");
    RamImage ram;
    for (std::size_t i = 0; i < pixels; ++i) ram.words[i] = quantize(image[i]);
    return ram;
}

inline RamImage load_image(std::span<const std::uint8_t> image) {
    if (image.size() != pixels) throw Error(ErrorKind::shape_mismatch, "LST-1 takes 784 pixels");
    std::array<double, pixels> real{};
    for (std::size_t i = 0; i < pixels; ++i) real[i] = static_cast<double>(image[i]) / 255.0;
    return load_image(std::span<const double>(real));
}

// Stage 2: each RAM row goes through the 28 row PEs; the PE outputs are held
// in the RG registers, passed through the tanh block one by one and written
// back over the same row. `order` is the row processing sequence.
inline void row_stage(const QuantizedModel& qm, RamImage& ram, std::span<const std::size_t> order,
                      SaturationCounter* stats = nullptr) {
    std::array<FixedWord, side> line{};
    std::array<FixedWord, side> rg{};
    for (const std::size_t r : order) {
        for (std::size_t c = 0; c < side; ++c) line[c] = ram.at(r, c);
        for (std::size_t k = 0; k < side; ++k) rg[k] = mac_dot(qm.row.row(k), line, qm.row.bias[k], stats);
        for (std::size_t k = 0; k < side; ++k) ram.at(r, k) = tanh_approx(rg[k]);
    }
}

// Stage 3: same per column with the COL ROMs.
inline void col_stage(const QuantizedModel& qm, RamImage& ram, std::span<const std::size_t> order,
                      SaturationCounter* stats = nullptr) {
    std::array<FixedWord, side> line{};
    std::array<FixedWord, side> rg{};
    for (const std::size_t c : order) {
        for (std::size_t r = 0; r < side; ++r) line[r] = ram.at(r, c);
        for (std::size_t k = 0; k < side; ++k) rg[k] = mac_dot(qm.col.row(k), line, qm.col.bias[k], stats);
        for (std::size_t k = 0; k < side; ++k) ram.at(k, c) = tanh_approx(rg[k]);
    }
}

// Stage 4: RAM read row-major feeds the 10 output PEs; no activation.
struct OutputStage {
    std::array<FixedWord, classes> words{};
    std::array<std::int64_t, classes> sums{};
};

inline OutputStage output_stage(const QuantizedModel& qm, const RamImage& ram, SaturationCounter* stats = nullptr) {
    OutputStage out;
    for (std::size_t j = 0; j < classes; ++j) {
        out.sums[j] = mac_accumulate(qm.out.row(j), ram.words, qm.out.bias[j]);
        out.words[j] = saturate(round_shift(out.sums[j], frac_bits), stats);
    }
    return out;
}

// Stage 5: Max-index block, lowest index on ties. It is fed the output
// accumulators rather than the saturated Q5.7 words: trained logits often
// exceed 16, and comparing saturated words turns those into ties.
template <typename V>
std::size_t max_index(std::span<const V> values) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < values.size(); ++j) {
        if (values[j] > values[best]) best = j;
    }
    return best;
}

inline std::size_t max_index(std::span<const FixedWord> outputs) {
    std::vector<std::int16_t> raw;
    for (const auto w : outputs) raw.push_back(w.raw);
    return max_index(std::span<const std::int16_t>(raw));
}

inline const std::array<std::size_t, side>& natural_order() {
    static const auto order = [] {
        std::array<std::size_t, side> o{};
        std::iota(o.begin(), o.end(), std::size_t{0});
        return o;
    }();
    return order;
}

inline InferenceTrace run_stages(const QuantizedModel& qm, const RamImage& loaded) {
    InferenceTrace t;
    t.after_load = loaded;
    RamImage ram = loaded;
    row_stage(qm, ram, natural_order(), &t.mac_stats);
    t.after_rows = ram;
    col_stage(qm, ram, natural_order(), &t.mac_stats);
    t.after_cols = ram;
    const auto out = output_stage(qm, ram, &t.mac_stats);
    t.outputs = out.words;
    t.sums = out.sums;
    t.digit = max_index(std::span<const std::int64_t>(t.sums));
    return t;
}

inline InferenceTrace infer_staged(const QuantizedModel& qm, const RealMatrix<double>& image) {
    if (image.rows() != static_cast<Eigen::Index>(side) || image.cols() != static_cast<Eigen::Index>(side)) {
        throw Error(ErrorKind::shape_mismatch, "LST-1 takes 28x28 images");
    }
    return run_stages(qm, load_image(std::span<const double>(image.data(), pixels)));
}

inline InferenceTrace infer_staged(const QuantizedModel& qm, std::span<const std::uint8_t> image) {
    return run_stages(qm, load_image(image));
}

struct QuantizedEvaluation {
    double accuracy = 0.0;
    SaturationCounter mac_stats;
};

inline QuantizedEvaluation evaluate_quantized(const QuantizedModel& qm, const Dataset<double>& ds) {
    if (ds.empty()) throw Error(ErrorKind::empty_dataset, "cannot evaluate on an empty dataset");
    QuantizedEvaluation ev;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto t = infer_staged(qm, ds.images[i]);
        ev.mac_stats.saturated += t.mac_stats.saturated;
        ev.mac_stats.total += t.mac_stats.total;
        if (t.digit == ds.labels[i]) ++correct;
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    return ev;
}

// ---------------------------------------------------------------------------
// Hardware verification exports
// ---------------------------------------------------------------------------

// 12-bit two's complement as exactly three lowercase hex digits.
inline std::string to_hex(FixedWord w) {
    char buf[4];
    std::snprintf(buf, sizeof buf, "%03x", static_cast<unsigned>(w.raw) & 0xfffu);
    return buf;
}

inline FixedWord from_hex(std::string_view hex) {
    if (hex.size() != 3) throw Error(ErrorKind::bad_argument, "hex word must have 3 digits");
    unsigned v = 0;
    for (const char ch : hex) {
        v <<= 4;
        if (ch >= '0' && ch <= '9') v |= static_cast<unsigned>(ch - '0');
        else if (ch >= 'a' && ch <= 'f') v |= static_cast<unsigned>(ch - 'a' + 10);
        else throw Error(ErrorKind::bad_argument, "bad hex digit");
    }
    const auto raw = static_cast<std::int32_t>(v);
    return FixedWord{static_cast<std::int16_t>(raw >= 2048 ? raw - 4096 : raw)};
}

namespace detail {

inline void write_rom(const std::filesystem::path& path, std::span<const FixedWord> weights, FixedWord bias) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io_error, "cannot create " + path.string());
    for (const auto w : weights) out << to_hex(w) << "\n";
    out << to_hex(bias) << "\n";
    if (!out) throw Error(ErrorKind::io_error, "write failed: " + path.string());
}

} // namespace detail

// rom_row_<k>.hex: W1 row k then b1[k]; rom_col_<k>.hex: W2 row k then b2[k];
// rom_out_<j>.hex: output weights of class j then its bias.
// Returns the written paths.
inline std::vector<std::filesystem::path> export_roms(const QuantizedModel& qm, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::io_error, "cannot create directory " + dir.string());
    std::vector<std::filesystem::path> written;
    auto emit = [&](const std::string& prefix, const QuantizedFc& fc) {
        for (std::size_t k = 0; k < fc.d_out; ++k) {
            auto path = dir / (prefix + std::to_string(k) + ".hex");
            detail::write_rom(path, fc.row(k), fc.bias[k]);
            written.push_back(std::move(path));
        }
    };
    emit("rom_row_", qm.row);
    emit("rom_col_", qm.col);
    emit("rom_out_", qm.out);
    return written;
}

// Test vectors for HDL simulation. After a '#' comment header, one line per
// image: the 784 stage-1 input words (row-major), the expected digit in
// decimal, then the 10 stage-4 output words, all separated by single spaces.
inline void write_test_vectors(const QuantizedModel& qm, const IdxImages& images, std::size_t limit,
                               const std::filesystem::path& path) {
    if (images.rows != side || images.cols != side) throw Error(ErrorKind::shape_mismatch, "LST-1 takes 28x28 images");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io_error, "cannot create " + path.string());
    out << "# lst1 test vectors: 784 input words (hex, row-major), expected digit, 10 output words (hex)\n";
    out << "# the digit is the max index of the full-width output accumulators\n";
    const std::size_t n = std::min(limit, images.count);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ram = load_image(images.image(i));
        const auto t = run_stages(qm, ram);
        for (const auto w : ram.words) out << to_hex(w) << ' ';
        out << t.digit;
        for (const auto w : t.outputs) out << ' ' << to_hex(w);
        out << '\n';
    }
    if (!out) throw Error(ErrorKind::io_error, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// "LSQ1" container: same layout as the float model file, int16 raw payload.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_quantized(const QuantizedModel& qm) {
    lst::detail::ByteWriter payload;
    std::uint64_t count = 0;
    for (const auto* fc : {&qm.row, &qm.col, &qm.out}) {
        for (const auto& part : {std::cref(fc->weight), std::cref(fc->bias)}) {
            for (const auto w : part.get()) {
                payload.le(static_cast<std::uint16_t>(w.raw));
                ++count;
            }
        }
    }
    return lst::detail::encode_container(fixed_model_magic, qm.spec, count, payload.bytes());
}

inline QuantizedModel decode_quantized(std::span<const std::uint8_t> bytes) {
    const auto c = lst::detail::decode_container(bytes, fixed_model_magic, 2);
    if (!is_lst1_shape(c.spec)) throw Error(ErrorKind::unsupported_spec, "quantized file is not LST-1 shaped");
    lst::detail::ByteReader r(c.payload);
    auto read_fc = [&](std::size_t d_in, std::size_t d_out) {
        QuantizedFc fc;
        fc.d_in = d_in;
        fc.d_out = d_out;
        for (std::size_t i = 0; i < d_in * d_out; ++i) {
            fc.weight.push_back(FixedWord::from_raw(static_cast<std::int16_t>(r.le<std::uint16_t>())));
        }
        for (std::size_t i = 0; i < d_out; ++i) {
            fc.bias.push_back(FixedWord::from_raw(static_cast<std::int16_t>(r.le<std::uint16_t>())));
        }
        return fc;
    };
    QuantizedModel qm;
    qm.spec = c.spec;
    qm.row = read_fc(side, side);
    qm.col = read_fc(side, side);
    qm.out = read_fc(pixels, classes);
    return qm;
}

inline void save_quantized(const std::filesystem::path& path, const QuantizedModel& qm) {
    write_file_bytes(path, encode_quantized(qm));
}

inline QuantizedModel load_quantized(const std::filesystem::path& path) {
    return decode_quantized(read_file_bytes(path));
}

} // namespace lst::fixed
