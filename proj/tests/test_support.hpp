#pragma once

// Shared helpers for the test suites: random generators and the independent
// oracles (plain-loop LST, finite differences, wide-integer MAC).

#include "lst/lst.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace lst::testing {

inline std::filesystem::path mnist_dir() {
    if (const char* env = std::getenv("LST_MNIST_DIR")) return env;
#ifdef LST_TEST_MNIST_DIR
    return LST_TEST_MNIST_DIR;
#else
    return "data/mnist";
#endif
}

inline bool have_mnist() {
    const auto dir = mnist_dir();
    for (const auto& f : {mnist_train_files(dir).images, mnist_train_files(dir).labels, mnist_test_files(dir).images,
                          mnist_test_files(dir).labels}) {
        if (!std::filesystem::exists(f)) return false;
    }
    return true;
}

template <typename T>
RealMatrix<T> random_matrix(std::size_t rows, std::size_t cols, Xoshiro256& rng, double lo = -1.0, double hi = 1.0) {
    RealMatrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(lo, hi));
    return m;
}

template <typename T>
void randomize(ModelParams<T>& params, Xoshiro256& rng, double scale = 0.5) {
    for_each_tensor(params, [&](std::span<T> s) {
        for (auto& v : s) v = static_cast<T>(rng.uniform(-scale, scale));
    });
}

template <typename T>
LstBlock<T> random_block(std::size_t d_in, std::size_t d_out, Xoshiro256& rng) {
    LstBlock<T> b(d_in, d_out);
    b.row.weight = random_matrix<T>(d_out, d_in, rng);
    b.row.bias = random_matrix<T>(d_out, 1, rng);
    b.col.weight = random_matrix<T>(d_out, d_in, rng);
    b.col.bias = random_matrix<T>(d_out, 1, rng);
    return b;
}

template <typename T>
Batch<T> random_batch(std::size_t count, std::size_t side, Xoshiro256& rng) {
    Batch<T> b;
    b.side = side;
    b.images = random_matrix<T>(count * side, side, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < count; ++i) b.labels.push_back(static_cast<std::uint8_t>(rng.bounded(10)));
    return b;
}

// The LST block as plain loops over rows then columns, no matrix products.
inline RealMatrix<double> lst_loop_oracle(const LstBlock<double>& block, const RealMatrix<double>& x) {
    const std::size_t d_in = block.d_in();
    const std::size_t d_out = block.d_out();
    RealMatrix<double> v(d_in, d_out);
    for (std::size_t k = 0; k < d_in; ++k) {
        for (std::size_t j = 0; j < d_out; ++j) {
            double acc = block.row.bias(j);
            for (std::size_t i = 0; i < d_in; ++i) acc += block.row.weight(j, i) * x(k, i);
            v(k, j) = std::tanh(acc);
        }
    }
    RealMatrix<double> y(d_out, d_out);
    for (std::size_t k = 0; k < d_out; ++k) {
        for (std::size_t j = 0; j < d_out; ++j) {
            double acc = block.col.bias(j);
            for (std::size_t i = 0; i < d_in; ++i) acc += block.col.weight(j, i) * v(i, k);
            y(j, k) = std::tanh(acc);
        }
    }
    return y;
}

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is ~0 from dividing roundoff by roundoff.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Five-point central difference of f at its current argument w:
// (8[f(w+h) - f(w-h)] - [f(w+2h) - f(w-2h)]) / 12h. Truncation error is
// O(h^4), so h can be large enough that roundoff stays far below the
// smallest gradients being checked.
inline constexpr double fd_step = 1e-3;

template <typename F>
double five_point(double& w, F&& f, double h) {
    const double saved = w;
    auto at = [&](double d) {
        w = saved + d;
        const double v = f();
        w = saved;
        return v;
    };
    return (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
}

// Numerical gradient of the mean batch loss for every parameter.
inline std::vector<double> finite_difference_grads(const ModelSpec& spec, ModelParams<double> params,
                                                   const Batch<double>& batch, double h = fd_step) {
    std::vector<double> out;
    for (auto span : tensor_spans(params)) {
        for (auto& w : span) out.push_back(five_point(w, [&] { return batch_loss(spec, params, batch); }, h));
    }
    return out;
}

inline std::vector<double> finite_difference_input_grads(const ModelSpec& spec, const ModelParams<double>& params,
                                                         Batch<double> batch, double h = fd_step) {
    std::vector<double> out;
    for (Eigen::Index i = 0; i < batch.images.size(); ++i) {
        out.push_back(five_point(batch.images.data()[i], [&] { return batch_loss(spec, params, batch); }, h));
    }
    return out;
}

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

inline GradCheckReport compare(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    GradCheckReport r;
    for (std::size_t i = 0; i < analytic.size() && i < numeric.size(); ++i) {
        r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic[i], numeric[i]));
        ++r.checked;
    }
    return r;
}

// Wide-integer reference for mac_dot: exact sum in __int128, rounding done by
// floor division on the doubled value instead of shifts.
inline std::int32_t mac_oracle(std::span<const fixed::FixedWord> w, std::span<const fixed::FixedWord> x,
                               fixed::FixedWord bias) {
    __int128 acc = static_cast<__int128>(bias.raw) * 128;
    for (std::size_t i = 0; i < w.size(); ++i) acc += static_cast<__int128>(w[i].raw) * x[i].raw;
    // round half away from zero of acc / 128
    const __int128 mag = acc < 0 ? -acc : acc;
    __int128 q = mag / 128;
    if ((mag % 128) * 2 >= 128) q += 1;
    if (acc < 0) q = -q;
    if (q > 2047) q = 2047;
    if (q < -2048) q = -2048;
    return static_cast<std::int32_t>(q);
}

} // namespace lst::testing
