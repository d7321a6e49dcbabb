#pragma once

#include "lst/error.hpp"
#include "lst/matrix.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace lst {

enum class Activation { tanh, none };

constexpr std::string_view to_string(Activation a) noexcept {
    return a == Activation::tanh ? "tanh" : "none";
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

// Fully connected layer y = g(W x + b), W is d_out x d_in.
template <typename T>
struct FcLayer {
    RealMatrix<T> weight;
    RealVector<T> bias;
    Activation activation = Activation::none;

    FcLayer() = default;
    FcLayer(std::size_t d_in, std::size_t d_out, Activation act)
        : weight(RealMatrix<T>::Zero(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in))),
          bias(RealVector<T>::Zero(static_cast<Eigen::Index>(d_out))),
          activation(act) {}

    std::size_t d_in() const noexcept { return static_cast<std::size_t>(weight.cols()); }
    std::size_t d_out() const noexcept { return static_cast<std::size_t>(weight.rows()); }
    std::size_t param_count() const noexcept { return (d_in() + 1) * d_out(); }
};

// Learned separable transform: one FC shared by every row of the input, then
// a second FC shared by every column of the intermediate image.
// Both layers map d_in -> d_out and use tanh.
template <typename T>
struct LstBlock {
    FcLayer<T> row;
    FcLayer<T> col;

    LstBlock() = default;
    LstBlock(std::size_t d_in, std::size_t d_out)
        : row(d_in, d_out, Activation::tanh), col(d_in, d_out, Activation::tanh) {}

    std::size_t d_in() const noexcept { return row.d_in(); }
    std::size_t d_out() const noexcept { return row.d_out(); }
    std::size_t param_count() const noexcept { return row.param_count() + col.param_count(); }
};

template <typename T>
T apply_activation(Activation act, T z) {
    return act == Activation::tanh ? std::tanh(z) : z;
}

template <typename Derived>
void apply_activation_inplace(Activation act, Eigen::MatrixBase<Derived>& m) {
    if (act == Activation::tanh) m.derived() = m.array().tanh().matrix();
}

template <typename T>
RealVector<T> fc_forward(const FcLayer<T>& layer, const RealVector<T>& x) {
    if (static_cast<std::size_t>(x.size()) != layer.d_in()) {
        throw Error(ErrorKind::shape_mismatch, "FC input length " + std::to_string(x.size()) +
                                                   ", layer expects " + std::to_string(layer.d_in()));
    }
    RealVector<T> z = layer.weight * x + layer.bias;
    apply_activation_inplace(layer.activation, z);
    return z;
}

// Y = tanh(W2 * V + b2 1^T) with V = tanh(X W1^T + 1 b1^T):
// row k of V is FC1(X[k,:]) and column k of Y is FC2(V[:,k]).
template <typename T>
RealMatrix<T> lst_forward(const LstBlock<T>& block, const RealMatrix<T>& x) {
    const auto d_in = static_cast<Eigen::Index>(block.d_in());
    if (x.rows() != d_in || x.cols() != d_in) {
        throw Error(ErrorKind::shape_mismatch, "LST input is " + std::to_string(x.rows()) + "x" +
                                                   std::to_string(x.cols()) + ", block expects " +
                                                   std::to_string(d_in) + "x" + std::to_string(d_in));
    }
    RealMatrix<T> v = ((x * block.row.weight.transpose()).rowwise() + block.row.bias.transpose())
                          .array()
                          .tanh()
                          .matrix();
    RealMatrix<T> y = ((block.col.weight * v).colwise() + block.col.bias).array().tanh().matrix();
    return y;
}

// Skip connection joins after the block's tanh, no activation after the sum.
template <typename T>
RealMatrix<T> res_lst_forward(const LstBlock<T>& block, const RealMatrix<T>& x) {
    if (block.d_in() != block.d_out()) {
        throw Error(ErrorKind::shape_mismatch, "residual LST block must be square, got " +
                                                   std::to_string(block.d_in()) + "->" +
                                                   std::to_string(block.d_out()));
    }
    return lst_forward(block, x) + x;
}

// Row-major: element (i, j) lands at index i * cols + j.
template <typename T>
RealVector<T> flatten(const RealMatrix<T>& x) {
    return Eigen::Map<const RealVector<T>>(x.data(), x.size());
}

// Max-subtracted exponential normalization.
template <typename T>
RealVector<T> softmax(const RealVector<T>& z) {
    const T peak = z.maxCoeff();
    RealVector<T> e = (z.array() - peak).exp().matrix();
    return e / e.sum();
}

template <typename T>
T log_sum_exp(const RealVector<T>& z) {
    const T peak = z.maxCoeff();
    return peak + std::log((z.array() - peak).exp().sum());
}

// Lowest index wins ties.
template <typename Derived>
std::size_t argmax(const Eigen::MatrixBase<Derived>& z) {
    std::size_t best = 0;
    for (Eigen::Index i = 1; i < z.size(); ++i) {
        if (z(i) > z(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

enum class StageKind { lst, res_lst, flatten, fc };

struct StageSpec {
    StageKind kind = StageKind::flatten;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    Activation activation = Activation::none;

    static StageSpec lst(std::size_t d_in, std::size_t d_out) {
        return {StageKind::lst, d_in, d_out, Activation::tanh};
    }
    static StageSpec res_lst(std::size_t d) { return {StageKind::res_lst, d, d, Activation::tanh}; }
    static StageSpec flatten() { return {StageKind::flatten, 0, 0, Activation::none}; }
    static StageSpec fc(std::size_t d_in, std::size_t d_out, Activation act) {
        return {StageKind::fc, d_in, d_out, act};
    }

    bool operator==(const StageSpec&) const = default;
};

struct ModelSpec {
    std::string name;
    std::size_t input_side = 28;  // the model consumes input_side x input_side images
    std::vector<StageSpec> stages;

    bool operator==(const ModelSpec&) const = default;
};

// Throws SpecInvalid unless the stages chain from an input_side^2 image to
// a final Fc(.., 10, none) producing class logits.
inline void validate(const ModelSpec& spec) {
    auto fail = [&](const std::string& why) {
        throw Error(ErrorKind::spec_invalid, "model '" + spec.name + "': " + why);
    };
    if (spec.input_side == 0) fail("input side must be positive");
    if (spec.stages.empty()) fail("no stages");
    bool is_image = true;
    std::size_t dim = spec.input_side;  // image side or vector length
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const auto& s = spec.stages[i];
        const std::string at = "stage " + std::to_string(i) + ": ";
        switch (s.kind) {
            case StageKind::lst:
            case StageKind::res_lst:
                if (!is_image) fail(at + "LST stage needs an image input");
                if (s.d_in == 0 || s.d_out == 0) fail(at + "zero dimension");
                if (s.kind == StageKind::res_lst && s.d_in != s.d_out) fail(at + "residual LST must be square");
                if (s.d_in != dim) {
                    fail(at + "expects " + std::to_string(s.d_in) + "x" + std::to_string(s.d_in) +
                         " input, previous stage yields side " + std::to_string(dim));
                }
                dim = s.d_out;
                break;
            case StageKind::flatten:
                if (!is_image) fail(at + "flatten needs an image input");
                is_image = false;
                dim = dim * dim;
                break;
            case StageKind::fc:
                if (is_image) fail(at + "FC stage needs a flattened input");
                if (s.d_in == 0 || s.d_out == 0) fail(at + "zero dimension");
                if (s.d_in != dim) {
                    fail(at + "expects length " + std::to_string(s.d_in) + ", previous stage yields " +
                         std::to_string(dim));
                }
                dim = s.d_out;
                break;
        }
    }
    const auto& last = spec.stages.back();
    if (last.kind != StageKind::fc || last.d_out != 10 || last.activation != Activation::none) {
        fail("last stage must be Fc(..., 10, none)");
    }
}

inline std::size_t stage_param_count(const StageSpec& s) {
    switch (s.kind) {
        case StageKind::lst:
        case StageKind::res_lst: return 2 * (s.d_in + 1) * s.d_out;
        case StageKind::fc: return (s.d_in + 1) * s.d_out;
        case StageKind::flatten: return 0;
    }
    return 0;
}

inline std::size_t param_count(const ModelSpec& spec) {
    validate(spec);
    std::size_t total = 0;
    for (const auto& s : spec.stages) total += stage_param_count(s);
    return total;
}

// Reference LST architectures.
inline ModelSpec lst1_spec() {
    return {"lst1", 28, {StageSpec::lst(28, 28), StageSpec::flatten(), StageSpec::fc(784, 10, Activation::none)}};
}

// Hidden side d_h = 28 is the only value consistent with 11 098 parameters.
inline ModelSpec lst2_spec() {
    return {"lst2",
            28,
            {StageSpec::lst(28, 28), StageSpec::lst(28, 28), StageSpec::flatten(),
             StageSpec::fc(784, 10, Activation::none)}};
}

inline ModelSpec reslst3_spec() {
    return {"reslst3",
            28,
            {StageSpec::res_lst(28), StageSpec::res_lst(28), StageSpec::res_lst(28), StageSpec::flatten(),
             StageSpec::fc(784, 10, Activation::none)}};
}

// Flatten followed by FC layers of the given widths, tanh on hidden layers.
inline ModelSpec ffnn_spec(std::span<const std::size_t> widths) {
    if (widths.size() < 2) throw Error(ErrorKind::spec_invalid, "FFNN needs at least two widths");
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(widths[0]))));
    if (side * side != widths[0]) {
        throw Error(ErrorKind::spec_invalid, "FFNN input width " + std::to_string(widths[0]) + " is not a square");
    }
    ModelSpec spec;
    spec.name = "ffnn:";
    for (std::size_t i = 0; i < widths.size(); ++i) {
        spec.name += (i ? "-" : "") + std::to_string(widths[i]);
    }
    spec.input_side = side;
    spec.stages.push_back(StageSpec::flatten());
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        spec.stages.push_back(StageSpec::fc(widths[i], widths[i + 1], last ? Activation::none : Activation::tanh));
    }
    validate(spec);
    return spec;
}

// "lst1", "lst2", "reslst3" or "ffnn:784-12-10".
inline ModelSpec model_by_name(std::string_view name) {
    if (name == "lst1") return lst1_spec();
    if (name == "lst2") return lst2_spec();
    if (name == "reslst3") return reslst3_spec();
    if (name.starts_with("ffnn:")) {
        std::vector<std::size_t> widths;
        std::string_view rest = name.substr(5);
        while (!rest.empty()) {
            const auto dash = rest.find('-');
            const auto token = rest.substr(0, dash);
            std::size_t w = 0;
            const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), w);
            if (ec != std::errc{} || ptr != token.data() + token.size() || w == 0) {
                throw Error(ErrorKind::spec_invalid, "bad FFNN width '" + std::string(token) + "'");
            }
            widths.push_back(w);
            if (dash == std::string_view::npos) break;
            rest = rest.substr(dash + 1);
        }
        return ffnn_spec(widths);
    }
    throw Error(ErrorKind::spec_invalid, "unknown model '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct NoParams {};

template <typename T>
using StageParams = std::variant<NoParams, FcLayer<T>, LstBlock<T>>;

template <typename T>
struct ModelParams {
    std::vector<StageParams<T>> stages;  // aligned with ModelSpec::stages
};

// Zero-initialized parameters shaped for the spec.
template <typename T>
ModelParams<T> make_params(const ModelSpec& spec) {
    validate(spec);
    ModelParams<T> p;
    for (const auto& s : spec.stages) {
        switch (s.kind) {
            case StageKind::lst:
            case StageKind::res_lst: p.stages.emplace_back(LstBlock<T>(s.d_in, s.d_out)); break;
            case StageKind::fc: p.stages.emplace_back(FcLayer<T>(s.d_in, s.d_out, s.activation)); break;
            case StageKind::flatten: p.stages.emplace_back(NoParams{}); break;
        }
    }
    return p;
}

// Visits every parameter tensor in canonical order: stage order; within an
// LST block the row FC before the column FC; within an FC the weight matrix
// (row-major) before the bias. f receives a std::span<T> (or span<const T>).
template <typename Params, typename F>
void for_each_tensor(Params& params, F&& f) {
    for (auto& stage : params.stages) {
        std::visit(
            [&](auto& s) {
                using S = std::remove_cvref_t<decltype(s)>;
                auto visit_fc = [&](auto& fc) {
                    f(std::span(fc.weight.data(), static_cast<std::size_t>(fc.weight.size())));
                    f(std::span(fc.bias.data(), static_cast<std::size_t>(fc.bias.size())));
                };
                if constexpr (std::is_same_v<S, NoParams>) {
                } else if constexpr (requires { s.row; }) {
                    visit_fc(s.row);
                    visit_fc(s.col);
                } else {
                    visit_fc(s);
                }
            },
            stage);
    }
}

template <typename T>
std::size_t stored_value_count(const ModelParams<T>& params) {
    std::size_t n = 0;
    for_each_tensor(params, [&](auto span) { n += span.size(); });
    return n;
}

template <typename T>
std::vector<T> flatten_params(const ModelParams<T>& params) {
    std::vector<T> out;
    for_each_tensor(params, [&](auto span) { out.insert(out.end(), span.begin(), span.end()); });
    return out;
}

template <typename T, typename U>
void assign_params(ModelParams<T>& params, std::span<const U> values) {
    if (values.size() != stored_value_count(params)) {
        throw Error(ErrorKind::shape_mismatch, "have " + std::to_string(values.size()) + " values for " +
                                                   std::to_string(stored_value_count(params)) + " parameters");
    }
    std::size_t pos = 0;
    for_each_tensor(params, [&](std::span<T> span) {
        for (auto& v : span) v = static_cast<T>(values[pos++]);
    });
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelSpec& spec, const ModelParams<From>& src) {
    auto out = make_params<To>(spec);
    const auto flat = flatten_params(src);
    assign_params(out, std::span<const From>(flat));
    return out;
}

// Throws ShapeMismatch unless params has exactly the tensors spec calls for.
template <typename T>
void check_params(const ModelSpec& spec, const ModelParams<T>& params) {
    if (params.stages.size() != spec.stages.size()) {
        throw Error(ErrorKind::shape_mismatch, "parameter stage count differs from spec");
    }
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const auto& s = spec.stages[i];
        const auto& p = params.stages[i];
        bool ok = false;
        switch (s.kind) {
            case StageKind::lst:
            case StageKind::res_lst:
                if (const auto* b = std::get_if<LstBlock<T>>(&p)) {
                    ok = b->d_in() == s.d_in && b->d_out() == s.d_out && b->col.d_in() == s.d_in &&
                         b->col.d_out() == s.d_out && b->row.bias.size() == b->row.weight.rows() &&
                         b->col.bias.size() == b->col.weight.rows();
                }
                break;
            case StageKind::fc:
                if (const auto* f = std::get_if<FcLayer<T>>(&p)) {
                    ok = f->d_in() == s.d_in && f->d_out() == s.d_out && f->bias.size() == f->weight.rows() &&
                         f->activation == s.activation;
                }
                break;
            case StageKind::flatten: ok = std::holds_alternative<NoParams>(p); break;
        }
        if (!ok) throw Error(ErrorKind::shape_mismatch, "parameters of stage " + std::to_string(i) + " do not match spec");
    }
}

// ---------------------------------------------------------------------------
// Single-sample forward
// ---------------------------------------------------------------------------

// Applies every stage in order to one image; returns the 10 raw logits.
template <typename T>
RealVector<T> model_forward(const ModelSpec& spec, const ModelParams<T>& params, const RealMatrix<T>& image) {
    validate(spec);
    check_params(spec, params);
    const auto side = static_cast<Eigen::Index>(spec.input_side);
    if (image.rows() != side || image.cols() != side) {
        throw Error(ErrorKind::shape_mismatch, "model expects " + std::to_string(side) + "x" +
                                                   std::to_string(side) + " input");
    }
    RealMatrix<T> x = image;
    RealVector<T> v;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const auto& p = params.stages[i];
        switch (spec.stages[i].kind) {
            case StageKind::lst: x = lst_forward(std::get<LstBlock<T>>(p), x); break;
            case StageKind::res_lst: x = res_lst_forward(std::get<LstBlock<T>>(p), x); break;
            case StageKind::flatten: v = flatten(x); break;
            case StageKind::fc: v = fc_forward(std::get<FcLayer<T>>(p), v); break;
        }
    }
    return v;
}

// Plain FFNN on an already flattened input.
template <typename T>
RealVector<T> ffnn_forward(std::span<const std::size_t> widths, const ModelParams<T>& params,
                           const RealVector<T>& x) {
    const auto spec = ffnn_spec(widths);
    check_params(spec, params);
    if (static_cast<std::size_t>(x.size()) != widths[0]) {
        throw Error(ErrorKind::shape_mismatch, "FFNN input length " + std::to_string(x.size()) +
                                                   ", expected " + std::to_string(widths[0]));
    }
    RealVector<T> v = x;
    for (const auto& stage : params.stages) {
        if (const auto* fc = std::get_if<FcLayer<T>>(&stage)) v = fc_forward(*fc, v);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Spec text form, used inside model files:
//   name lst1
//   input 28
//   lst 28 28
//   flatten
//   fc 784 10 none
// ---------------------------------------------------------------------------

inline std::string spec_to_text(const ModelSpec& spec) {
    std::ostringstream os;
    os << "name " << spec.name << "\n";
    os << "input " << spec.input_side << "\n";
    for (const auto& s : spec.stages) {
        switch (s.kind) {
            case StageKind::lst: os << "lst " << s.d_in << " " << s.d_out << "\n"; break;
            case StageKind::res_lst: os << "reslst " << s.d_in << "\n"; break;
            case StageKind::flatten: os << "flatten\n"; break;
            case StageKind::fc: os << "fc " << s.d_in << " " << s.d_out << " " << to_string(s.activation) << "\n"; break;
        }
    }
    return os.str();
}

inline ModelSpec spec_from_text(std::string_view text) {
    ModelSpec spec;
    spec.input_side = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    auto bad = [&](const std::string& why) -> void {
        throw Error(ErrorKind::spec_invalid, "spec text: " + why + " in line '" + line + "'");
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "name") {
            ls >> spec.name;
        } else if (key == "input") {
            if (!(ls >> spec.input_side)) bad("missing input side");
        } else if (key == "lst") {
            std::size_t a = 0, b = 0;
            if (!(ls >> a >> b)) bad("missing dimensions");
            spec.stages.push_back(StageSpec::lst(a, b));
        } else if (key == "reslst") {
            std::size_t d = 0;
            if (!(ls >> d)) bad("missing dimension");
            spec.stages.push_back(StageSpec::res_lst(d));
        } else if (key == "flatten") {
            spec.stages.push_back(StageSpec::flatten());
        } else if (key == "fc") {
            std::size_t a = 0, b = 0;
            std::string act;
            if (!(ls >> a >> b >> act)) bad("missing fields");
            if (act != "tanh" && act != "none") bad("unknown activation");
            spec.stages.push_back(StageSpec::fc(a, b, act == "tanh" ? Activation::tanh : Activation::none));
        } else {
            bad("unknown key '" + key + "'");
        }
    }
    validate(spec);
    return spec;
}

} // namespace lst
