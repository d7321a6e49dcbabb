#pragma once

#include "lst/error.hpp"
#include "lst/matrix.hpp"
#include "lst/mnist_io.hpp"
#include "lst/nn.hpp"
#include "lst/rng.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <span>
#include <string>
#include <vector>

namespace lst {

enum class Precision { f32, f64 };

// Same shapes as the parameters they differentiate.
template <typename T>
using Gradients = ModelParams<T>;

template <typename T>
std::vector<std::span<T>> tensor_spans(ModelParams<T>& params) {
    std::vector<std::span<T>> out;
    for_each_tensor(params, [&](std::span<T> s) { out.push_back(s); });
    return out;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

// Glorot uniform: W ~ U[-L, L], L = sqrt(6 / (d_in + d_out)); bias = 0.
// Weights are drawn row-major from rng.
template <typename T>
FcLayer<T> glorot_init(std::size_t d_in, std::size_t d_out, Activation act, Xoshiro256& rng) {
    FcLayer<T> layer(d_in, d_out, act);
    const double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
        layer.weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    return layer;
}

// Initializes every FC layer of the model in canonical tensor order.
template <typename T>
ModelParams<T> glorot_init(const ModelSpec& spec, std::uint64_t seed) {
    auto params = make_params<T>(spec);
    Xoshiro256 rng(derive_seed(seed, 0x1417));
    for (auto& stage : params.stages) {
        if (auto* fc = std::get_if<FcLayer<T>>(&stage)) {
            *fc = glorot_init<T>(fc->d_in(), fc->d_out(), fc->activation, rng);
        } else if (auto* b = std::get_if<LstBlock<T>>(&stage)) {
            b->row = glorot_init<T>(b->row.d_in(), b->row.d_out(), Activation::tanh, rng);
            b->col = glorot_init<T>(b->col.d_in(), b->col.d_out(), Activation::tanh, rng);
        }
    }
    return params;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// -log softmax(logits)[label] via log-sum-exp.
template <typename T>
T cross_entropy(const RealVector<T>& logits, std::size_t label) {
    if (label >= static_cast<std::size_t>(logits.size())) {
        throw Error(ErrorKind::bad_label, "label " + std::to_string(label) + " for " +
                                              std::to_string(logits.size()) + " classes");
    }
    return log_sum_exp(logits) - logits(static_cast<Eigen::Index>(label));
}

// ---------------------------------------------------------------------------
// Batched forward / backward
//
// Activations of B images of side d travel as (B*d) x d stacked matrices;
// after Flatten they are B x d^2 (identical memory). Column transforms run on
// the block-transposed layout so that both FCs of an LST block are a single
// matrix product over the whole batch.
// ---------------------------------------------------------------------------

template <typename T>
struct StageCache {
    RealMatrix<T> input;  // stage input in stacked layout
    RealMatrix<T> v;      // LST: tanh(row FC), (B*d_in) x d_out
    RealMatrix<T> vt;     // LST: block transpose of v, (B*d_out) x d_in
    RealMatrix<T> yt;     // LST: tanh(col FC) in transposed layout
    RealMatrix<T> out;    // FC: post-activation output
};

template <typename T>
struct ForwardCache {
    std::vector<StageCache<T>> stages;
};

namespace detail {

template <typename T>
RealMatrix<T> affine_rows(const RealMatrix<T>& x, const FcLayer<T>& fc) {
    RealMatrix<T> z(x.rows(), fc.weight.rows());
    z.noalias() = x * fc.weight.transpose();
    z.rowwise() += fc.bias.transpose();
    return z;
}

template <typename T>
RealMatrix<T> lst_batch_forward(const LstBlock<T>& block, const RealMatrix<T>& x, StageCache<T>* cache) {
    const std::size_t d_in = block.d_in();
    const std::size_t d_out = block.d_out();
    RealMatrix<T> v = affine_rows(x, block.row).array().tanh().matrix();
    RealMatrix<T> vt = block_transpose(v, d_in);
    RealMatrix<T> yt = affine_rows(vt, block.col).array().tanh().matrix();
    RealMatrix<T> y = block_transpose(yt, d_out);
    if (cache) {
        cache->v = std::move(v);
        cache->vt = std::move(vt);
        cache->yt = std::move(yt);
    }
    return y;
}

// Accumulates into grad (shared weights: every row and column application
// contributes through the single matrix product) and returns dL/dx.
template <typename T>
RealMatrix<T> lst_batch_backward(const LstBlock<T>& block, const StageCache<T>& cache, const RealMatrix<T>& dy,
                                 LstBlock<T>& grad, bool need_input_grad) {
    const std::size_t d_in = block.d_in();
    const std::size_t d_out = block.d_out();
    RealMatrix<T> dz2t = block_transpose(dy, d_out);
    dz2t.array() *= (T(1) - cache.yt.array().square());
    grad.col.weight.noalias() += dz2t.transpose() * cache.vt;
    grad.col.bias += dz2t.colwise().sum().transpose();
    RealMatrix<T> dvt(dz2t.rows(), static_cast<Eigen::Index>(d_in));
    dvt.noalias() = dz2t * block.col.weight;
    RealMatrix<T> dz1 = block_transpose(dvt, d_out);
    dz1.array() *= (T(1) - cache.v.array().square());
    grad.row.weight.noalias() += dz1.transpose() * cache.input;
    grad.row.bias += dz1.colwise().sum().transpose();
    if (!need_input_grad) return {};
    RealMatrix<T> dx(dz1.rows(), static_cast<Eigen::Index>(d_in));
    dx.noalias() = dz1 * block.row.weight;
    return dx;
}

template <typename T>
RealMatrix<T> reshape(const RealMatrix<T>& m, Eigen::Index rows, Eigen::Index cols) {
    return Eigen::Map<const RealMatrix<T>>(m.data(), rows, cols);
}

} // namespace detail

// Logits for a stacked batch, B x 10. Fills cache when given.
template <typename T>
RealMatrix<T> forward_batch(const ModelSpec& spec, const ModelParams<T>& params, const RealMatrix<T>& images,
                            ForwardCache<T>* cache = nullptr) {
    const auto side0 = static_cast<Eigen::Index>(spec.input_side);
    if (images.cols() != side0 || images.rows() % side0 != 0) {
        throw Error(ErrorKind::shape_mismatch, "batch is not a stack of " + std::to_string(side0) + "x" +
                                                   std::to_string(side0) + " images");
    }
    const Eigen::Index batch = images.rows() / side0;
    if (cache) cache->stages.assign(spec.stages.size(), {});
    RealMatrix<T> x = images;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const auto& s = spec.stages[i];
        const auto& p = params.stages[i];
        StageCache<T>* sc = cache ? &cache->stages[i] : nullptr;
        if (sc) sc->input = x;
        switch (s.kind) {
            case StageKind::lst:
                x = detail::lst_batch_forward(std::get<LstBlock<T>>(p), x, sc);
                break;
            case StageKind::res_lst: {
                RealMatrix<T> y = detail::lst_batch_forward(std::get<LstBlock<T>>(p), x, sc);
                x = y + x;
                break;
            }
            case StageKind::flatten:
                x = detail::reshape(x, batch, x.size() / batch);
                break;
            case StageKind::fc: {
                const auto& fc = std::get<FcLayer<T>>(p);
                RealMatrix<T> z = detail::affine_rows(x, fc);
                apply_activation_inplace(fc.activation, z);
                x = std::move(z);
                if (sc) sc->out = x;
                break;
            }
        }
    }
    return x;
}

template <typename T>
struct BackwardResult {
    T loss{};                   // mean cross-entropy over the batch
    Gradients<T> grads;         // d(loss)/d(params)
    RealMatrix<T> input_grad;   // d(loss)/d(images), stacked; only when requested
};

// Mean softmax cross-entropy and its exact gradient for one batch.
template <typename T>
BackwardResult<T> backward(const ModelSpec& spec, const ModelParams<T>& params, const Batch<T>& batch,
                           bool need_input_grad = false) {
    if (batch.size() == 0) throw Error(ErrorKind::empty_dataset, "backward on an empty batch");
    ForwardCache<T> cache;
    const RealMatrix<T> logits = forward_batch(spec, params, batch.images, &cache);
    const Eigen::Index n = logits.rows();
    if (static_cast<std::size_t>(n) != batch.size()) {
        throw Error(ErrorKind::shape_mismatch, "batch has " + std::to_string(batch.size()) + " labels for " +
                                                   std::to_string(n) + " images");
    }

    BackwardResult<T> res;
    res.grads = make_params<T>(spec);
    RealMatrix<T> delta(n, logits.cols());
    double loss_sum = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
        const auto label = static_cast<Eigen::Index>(batch.labels[static_cast<std::size_t>(b)]);
        if (label >= logits.cols()) throw Error(ErrorKind::bad_label, "label out of range");
        const RealVector<T> z = logits.row(b).transpose();
        const T lse = log_sum_exp(z);
        loss_sum += static_cast<double>(lse - z(label));
        delta.row(b) = (z.array() - lse).exp().matrix().transpose();
        delta(b, label) -= T(1);
    }
    delta /= static_cast<T>(n);
    res.loss = static_cast<T>(loss_sum / static_cast<double>(n));

    RealMatrix<T> grad = std::move(delta);
    for (std::size_t i = spec.stages.size(); i-- > 0;) {
        const auto& s = spec.stages[i];
        const auto& sc = cache.stages[i];
        const bool want_dx = need_input_grad || i > 0;
        switch (s.kind) {
            case StageKind::fc: {
                const auto& fc = std::get<FcLayer<T>>(params.stages[i]);
                auto& g = std::get<FcLayer<T>>(res.grads.stages[i]);
                if (fc.activation == Activation::tanh) grad.array() *= (T(1) - sc.out.array().square());
                g.weight.noalias() += grad.transpose() * sc.input;
                g.bias += grad.colwise().sum().transpose();
                if (want_dx) {
                    RealMatrix<T> dx(grad.rows(), fc.weight.cols());
                    dx.noalias() = grad * fc.weight;
                    grad = std::move(dx);
                }
                break;
            }
            case StageKind::flatten:
                grad = detail::reshape(grad, sc.input.rows(), sc.input.cols());
                break;
            case StageKind::lst: {
                grad = detail::lst_batch_backward(std::get<LstBlock<T>>(params.stages[i]), sc, grad,
                                                  std::get<LstBlock<T>>(res.grads.stages[i]), want_dx);
                break;
            }
            case StageKind::res_lst: {
                RealMatrix<T> dx = detail::lst_batch_backward(std::get<LstBlock<T>>(params.stages[i]), sc, grad,
                                                              std::get<LstBlock<T>>(res.grads.stages[i]), want_dx);
                if (want_dx) grad += dx;
                break;
            }
        }
    }
    if (need_input_grad) res.input_grad = std::move(grad);
    return res;
}

// Mean loss only, same reduction as backward(); used by finite differences.
template <typename T>
T batch_loss(const ModelSpec& spec, const ModelParams<T>& params, const Batch<T>& batch) {
    const RealMatrix<T> logits = forward_batch(spec, params, batch.images);
    double sum = 0.0;
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
        sum += static_cast<double>(cross_entropy<T>(logits.row(b).transpose(), batch.labels[static_cast<std::size_t>(b)]));
    }
    return static_cast<T>(sum / static_cast<double>(logits.rows()));
}

// ---------------------------------------------------------------------------
// Adam with coupled L2 weight decay
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    T lr = T(2e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(1e-5);
    ModelParams<T> m;
    ModelParams<T> v;
};

template <typename T>
AdamState<T> make_adam(const ModelSpec& spec, T lr, T weight_decay) {
    AdamState<T> s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    s.m = make_params<T>(spec);
    s.v = make_params<T>(spec);
    return s;
}

// g' = g + wd*w; m = b1*m + (1-b1)*g'; v = b2*v + (1-b2)*g'^2;
// w -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
void adam_step(AdamState<T>& state, ModelParams<T>& params, const Gradients<T>& grads) {
    auto w = tensor_spans(params);
    auto m = tensor_spans(state.m);
    auto v = tensor_spans(state.v);
    std::vector<std::span<const T>> g;
    for_each_tensor(grads, [&](std::span<const T> s) { g.push_back(s); });
    if (w.size() != g.size() || w.size() != m.size() || w.size() != v.size()) {
        throw Error(ErrorKind::shape_mismatch, "Adam: tensor count differs between params, grads and moments");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const T bc1 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta1), t));
    const T bc2 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta2), t));
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k].size() != g[k].size() || w[k].size() != m[k].size() || w[k].size() != v[k].size()) {
            throw Error(ErrorKind::shape_mismatch, "Adam: tensor " + std::to_string(k) + " shape differs");
        }
        for (std::size_t i = 0; i < w[k].size(); ++i) {
            const T gi = g[k][i] + state.weight_decay * w[k][i];
            m[k][i] = state.beta1 * m[k][i] + (T(1) - state.beta1) * gi;
            v[k][i] = state.beta2 * v[k][i] + (T(1) - state.beta2) * gi * gi;
            const T m_hat = m[k][i] / bc1;
            const T v_hat = v[k][i] / bc2;
            w[k][i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation and the training loop
// ---------------------------------------------------------------------------

// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
template <typename T>
double evaluate(const ModelSpec& spec, const ModelParams<T>& params, const Dataset<T>& ds,
                std::size_t chunk = 1000) {
    if (ds.empty()) throw Error(ErrorKind::empty_dataset, "cannot evaluate on an empty dataset");
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t end = std::min(ds.size(), start + chunk);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
        const auto batch = gather_batch(ds, idx);
        const RealMatrix<T> logits = forward_batch(spec, params, batch.images);
        for (Eigen::Index b = 0; b < logits.rows(); ++b) {
            if (argmax(logits.row(b)) == batch.labels[static_cast<std::size_t>(b)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 1000;
    double lr = 2e-3;
    double weight_decay = 1e-5;
    std::uint64_t seed = 1;
    Precision precision = Precision::f32;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw Error(ErrorKind::bad_argument, "epochs must be >= 1");
    if (cfg.batch_size < 1) throw Error(ErrorKind::bad_argument, "batch size must be >= 1");
    if (!(cfg.lr > 0.0)) throw Error(ErrorKind::bad_argument, "learning rate must be > 0");
    if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorKind::bad_argument, "weight decay must be >= 0");
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double mean_train_loss = 0.0;
    double test_accuracy = 0.0;
};

template <typename T>
struct TrainResult {
    ModelParams<T> params;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Shuffled-minibatch Adam for cfg.epochs epochs; returns the final-epoch
// parameters. Test accuracy is recorded after every epoch when ds_test is
// non-empty.
template <typename T>
TrainResult<T> train(const ModelSpec& spec, const Dataset<T>& ds_train, const Dataset<T>& ds_test,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    validate(cfg);
    validate(spec);
    if (ds_train.empty()) throw Error(ErrorKind::empty_dataset, "training set is empty");
    if (ds_train.side() != spec.input_side) {
        throw Error(ErrorKind::shape_mismatch, "dataset images are " + std::to_string(ds_train.side()) +
                                                   " wide, model expects " + std::to_string(spec.input_side));
    }
    TrainResult<T> result{glorot_init<T>(spec, cfg.seed), {}};
    auto adam = make_adam<T>(spec, static_cast<T>(cfg.lr), static_cast<T>(cfg.weight_decay));
    const BatchPlan plan{derive_seed(cfg.seed, 0x5eed), cfg.batch_size};
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (const auto& idx : plan.index_batches(epoch, ds_train.size())) {
            const auto batch = gather_batch(ds_train, idx);
            auto step = backward(spec, result.params, batch);
            loss_sum += static_cast<double>(step.loss) * static_cast<double>(batch.size());
            adam_step(adam, result.params, step.grads);
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.mean_train_loss = loss_sum / static_cast<double>(ds_train.size());
        rec.test_accuracy = ds_test.empty() ? 0.0 : evaluate(spec, result.params, ds_test);
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

// CSV with header "epoch,mean_train_loss,test_accuracy", one row per epoch.
inline void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io_error, "cannot create " + path.string());
    out << "epoch,mean_train_loss,test_accuracy\n";
    out << std::setprecision(17);
    for (const auto& r : history) out << r.epoch << "," << r.mean_train_loss << "," << r.test_accuracy << "\n";
    if (!out) throw Error(ErrorKind::io_error, "write failed: " + path.string());
}

} // namespace lst
