// lst: train, evaluate, quantize and export LST models on MNIST.

#include "lst/lst.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

struct Options {
    std::string model = "lst1";
    std::string data_dir = "data/mnist";
    std::string model_path;
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    std::size_t epochs = 300;
    std::size_t batch_size = 1000;
    double lr = 2e-3;
    double weight_decay = 1e-5;
    bool quantized = false;
    std::string precision = "f32";
    std::string image;
    std::size_t index = 0;
    std::size_t vectors = 100;
};

std::string percent(double accuracy) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * accuracy);
    return buf;
}

std::filesystem::path model_path_or_default(const Options& o, const lst::ModelSpec& spec) {
    if (!o.model_path.empty()) return o.model_path;
    return std::filesystem::path(o.out_dir) / (spec.name + ".lst");
}

void require_model_path(const Options& o) {
    if (o.model_path.empty()) throw lst::Error(lst::ErrorKind::bad_argument, "--model-path is required");
}

template <typename T>
int train_as(const Options& o, const lst::ModelSpec& spec) {
    const auto tr = lst::load_dataset<T>(lst::mnist_train_files(o.data_dir));
    const auto te = lst::load_dataset<T>(lst::mnist_test_files(o.data_dir));
    lst::TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch_size;
    cfg.lr = o.lr;
    cfg.weight_decay = o.weight_decay;
    cfg.seed = o.seed;
    std::cerr << spec.name << ": " << lst::param_count(spec) << " parameters, " << tr.size() << " training images\n";
    const auto result = lst::train(spec, tr, te, cfg, [&](const lst::EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << "/" << cfg.epochs << "  loss " << r.mean_train_loss << "  test "
                  << percent(r.test_accuracy) << "\n";
    });

    std::filesystem::create_directories(o.out_dir);
    const auto path = model_path_or_default(o, spec);
    lst::save_model(path, spec, result.params);
    const auto history = std::filesystem::path(o.out_dir) / (spec.name + "_history.csv");
    lst::write_history_csv(history, result.history);
    std::cerr << "wrote " << path.string() << " and " << history.string() << "\n";
    std::cout << "params: " << lst::param_count(spec) << "\n";
    std::cout << "test accuracy: " << percent(result.history.back().test_accuracy) << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    const auto spec = lst::model_by_name(o.model);
    return o.precision == "f64" ? train_as<double>(o, spec) : train_as<float>(o, spec);
}

// Either file kind becomes a quantized LST-1.
lst::fixed::QuantizedModel quantized_from(const std::filesystem::path& path) {
    if (lst::peek_magic(path) == "LSQ1") return lst::fixed::load_quantized(path);
    const auto m = lst::load_model(path);
    return lst::fixed::quantize_model(m.spec, m.params);
}

int cmd_eval(const Options& o) {
    require_model_path(o);
    const auto test = lst::load_dataset<double>(lst::mnist_test_files(o.data_dir));
    if (o.quantized || lst::peek_magic(o.model_path) == "LSQ1") {
        const auto qm = quantized_from(o.model_path);
        const auto ev = lst::fixed::evaluate_quantized(qm, test);
        std::cout << "params: " << lst::param_count(qm.spec) << "\n";
        std::cout << "accuracy: " << percent(ev.accuracy) << " (quantized)\n";
        std::cout << "saturated MAC outputs: " << ev.mac_stats.saturated << "/" << ev.mac_stats.total << "\n";
        return 0;
    }
    const auto m = lst::load_model(o.model_path);
    std::cout << "params: " << lst::param_count(m.spec) << "\n";
    std::cout << "accuracy: " << percent(lst::evaluate(m.spec, m.params, test)) << "\n";
    return 0;
}

int cmd_quantize(const Options& o) {
    require_model_path(o);
    const auto m = lst::load_model(o.model_path);
    const auto qm = lst::fixed::quantize_model(m.spec, m.params);
    std::filesystem::create_directories(o.out_dir);
    const auto out = std::filesystem::path(o.out_dir) / (std::filesystem::path(o.model_path).stem().string() + ".lsq");
    lst::fixed::save_quantized(out, qm);
    std::cerr << "wrote " << out.string() << " (" << qm.saturated_params << " parameters saturated)\n";

    const auto test = lst::load_dataset<double>(lst::mnist_test_files(o.data_dir));
    const double fp = lst::evaluate(m.spec, m.params, test);
    const auto ev = lst::fixed::evaluate_quantized(qm, test);
    char delta[32];
    std::snprintf(delta, sizeof delta, "%+.2f", 100.0 * (ev.accuracy - fp));
    std::cout << "float accuracy: " << percent(fp) << "\n";
    std::cout << "quantized accuracy: " << percent(ev.accuracy) << "\n";
    std::cout << "delta: " << delta << " pp\n";
    std::cout << "saturated MAC outputs: " << ev.mac_stats.saturated << "/" << ev.mac_stats.total << "\n";
    return 0;
}

int cmd_export_rom(const Options& o) {
    require_model_path(o);
    const auto qm = quantized_from(o.model_path);
    const auto files = lst::fixed::export_roms(qm, o.out_dir);
    std::cout << "rom files: " << files.size() << "\n";
    if (o.vectors > 0) {
        const auto images =
            lst::parse_idx_images(lst::read_file_bytes(lst::mnist_test_files(o.data_dir).images));
        const auto path = std::filesystem::path(o.out_dir) / "test_vectors.txt";
        lst::fixed::write_test_vectors(qm, images, o.vectors, path);
        std::cout << "test vectors: " << std::min(o.vectors, images.count) << " -> " << path.string() << "\n";
    }
    return 0;
}

// A 784-byte file is a raw image; anything else is read as an IDX image file.
std::vector<std::uint8_t> read_image(const Options& o) {
    const auto path = o.image.empty() ? lst::mnist_test_files(o.data_dir).images : std::filesystem::path(o.image);
    const auto bytes = lst::read_file_bytes(path);
    if (bytes.size() == lst::fixed::pixels) return bytes;
    const auto images = lst::parse_idx_images(bytes);
    if (o.index >= images.count) {
        throw lst::Error(lst::ErrorKind::bad_argument,
                         "--index " + std::to_string(o.index) + " out of range for " + std::to_string(images.count));
    }
    const auto img = images.image(o.index);
    return {img.begin(), img.end()};
}

int cmd_predict(const Options& o) {
    require_model_path(o);
    const auto pixels = read_image(o);
    if (o.quantized || lst::peek_magic(o.model_path) == "LSQ1") {
        const auto t = lst::fixed::infer_staged(quantized_from(o.model_path), pixels);
        std::cout << "digit: " << t.digit << "\n";
        return 0;
    }
    const auto m = lst::load_model(o.model_path);
    const auto side = m.spec.input_side;
    if (pixels.size() != side * side) throw lst::Error(lst::ErrorKind::shape_mismatch, "image size does not match model");
    const lst::IdxImages one{1, side, side, pixels};
    const auto logits = lst::model_forward(m.spec, m.params, lst::normalize<double>(one).front());
    const auto probs = lst::softmax<double>(logits);
    const auto digit = lst::argmax(logits);
    std::cout << "digit: " << digit << "\n";
    std::cerr << "p = " << probs(static_cast<Eigen::Index>(digit)) << "\n";
    return 0;
}

int cmd_gradcheck(const Options& o) {
    const auto spec = lst::model_by_name(o.model);
    auto params = lst::glorot_init<double>(spec, o.seed);
    lst::Xoshiro256 rng(lst::derive_seed(o.seed, 0x6c));
    // Nonzero biases so every parameter carries gradient.
    lst::for_each_tensor(params, [&](std::span<double> s) {
        for (auto& v : s) v += rng.uniform(-0.05, 0.05);
    });
    lst::Batch<double> batch;
    batch.side = spec.input_side;
    batch.images.resize(static_cast<Eigen::Index>(3 * spec.input_side), static_cast<Eigen::Index>(spec.input_side));
    for (Eigen::Index i = 0; i < batch.images.size(); ++i) batch.images.data()[i] = rng.uniform01();
    for (int i = 0; i < 3; ++i) batch.labels.push_back(static_cast<std::uint8_t>(rng.bounded(10)));

    const auto analytic = lst::flatten_params(lst::backward(spec, params, batch).grads);
    // Five-point central differences, O(h^4) truncation error.
    const double h = 1e-3;
    double worst = 0.0;
    std::size_t i = 0;
    for (auto span : lst::tensor_spans(params)) {
        for (auto& w : span) {
            const double saved = w;
            auto loss_at = [&](double d) {
                w = saved + d;
                const double l = lst::batch_loss(spec, params, batch);
                w = saved;
                return l;
            };
            const double numeric = (8.0 * (loss_at(h) - loss_at(-h)) - (loss_at(2 * h) - loss_at(-2 * h))) / (12.0 * h);
            const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
            ++i;
        }
    }
    std::cout << "checked " << i << " parameters\n";
    std::cout << "max relative error: " << worst << "\n";
    if (worst > 1e-5) {
        std::cerr << "gradient check failed (limit 1e-05)\n";
        return 1;
    }
    return 0;
}

int cmd_paramcount(const Options& o) {
    const auto spec = lst::model_by_name(o.model);
    std::cout << "params: " << lst::param_count(spec) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LST models on MNIST: training, evaluation and fixed-point export"};
    app.require_subcommand(1);
    Options o;

    auto add_model = [&](CLI::App* c) {
        c->add_option("--model", o.model, "lst1, lst2, reslst3 or ffnn:<w0>-<w1>-...")->capture_default_str();
    };
    auto add_data = [&](CLI::App* c) {
        c->add_option("--data-dir", o.data_dir, "directory with the four MNIST IDX files")->capture_default_str();
    };
    auto add_model_path = [&](CLI::App* c) { c->add_option("--model-path", o.model_path, "model file"); };
    auto add_out = [&](CLI::App* c) {
        c->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
    };
    auto positive = CLI::PositiveNumber;

    auto* train = app.add_subcommand("train", "train a model and write the model file and history CSV");
    add_model(train);
    add_data(train);
    add_model_path(train);
    add_out(train);
    train->add_option("--seed", o.seed, "RNG seed")->capture_default_str();
    train->add_option("--epochs", o.epochs, "epochs")->check(positive)->capture_default_str();
    train->add_option("--batch-size", o.batch_size, "minibatch size")->check(positive)->capture_default_str();
    train->add_option("--lr", o.lr, "Adam learning rate")->check(positive)->capture_default_str();
    train->add_option("--weight-decay", o.weight_decay, "L2 weight decay")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    train->add_option("--precision", o.precision, "training precision")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();

    auto* eval = app.add_subcommand("eval", "report test accuracy of a model file");
    add_model_path(eval);
    add_data(eval);
    eval->add_flag("--quantized", o.quantized, "run the fixed-point datapath");

    auto* quantize = app.add_subcommand("quantize", "write a Q5.7 model and compare accuracy with the float model");
    add_model_path(quantize);
    add_data(quantize);
    add_out(quantize);

    auto* roms = app.add_subcommand("export-rom", "write ROM hex files and simulation test vectors");
    add_model_path(roms);
    add_data(roms);
    add_out(roms);
    roms->add_option("--vectors", o.vectors, "number of test images in test_vectors.txt (0 to skip)")
        ->capture_default_str();

    auto* predict = app.add_subcommand("predict", "classify one image");
    add_model_path(predict);
    add_data(predict);
    predict->add_option("--image", o.image, "raw 784-byte image or IDX image file (default: MNIST test set)");
    predict->add_option("--index", o.index, "image index inside an IDX file")->capture_default_str();
    predict->add_flag("--quantized", o.quantized, "run the fixed-point datapath");

    auto* gradcheck = app.add_subcommand("gradcheck", "compare backprop with central finite differences");
    add_model(gradcheck);
    gradcheck->add_option("--seed", o.seed, "RNG seed")->capture_default_str();

    auto* paramcount = app.add_subcommand("paramcount", "print the trainable parameter count");
    add_model(paramcount);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*quantize) return cmd_quantize(o);
        if (*roms) return cmd_export_rom(o);
        if (*predict) return cmd_predict(o);
        if (*gradcheck) return cmd_gradcheck(o);
        if (*paramcount) return cmd_paramcount(o);
    } catch (const lst::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
