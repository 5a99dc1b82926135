#include "perfmodel/mlp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace perfmodel {

using json = nlohmann::ordered_json;

std::vector<int> MLPRegressor::layer_widths() const {
    std::vector<int> widths;
    if (weights.empty()) return widths;
    widths.push_back(static_cast<int>(weights.front().cols()));
    for (const auto& w : weights) widths.push_back(static_cast<int>(w.rows()));
    return widths;
}

void MLPRegressor::validate() const {
    if (weights.empty()) throw Error("regressor has no layers");
    if (weights.size() != biases.size())
        throw Error("regressor weight/bias layer counts differ");
    if (static_cast<std::size_t>(weights.front().cols()) != feature_names.size())
        throw Error("regressor first layer width (" + std::to_string(weights.front().cols()) +
                    ") does not match feature count (" + std::to_string(feature_names.size()) +
                    ")");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != biases[l].size())
            throw Error("regressor layer " + std::to_string(l) + ": bias size mismatch");
        if (l + 1 < weights.size() && weights[l].rows() != weights[l + 1].cols())
            throw Error("regressor layers " + std::to_string(l) + "/" + std::to_string(l + 1) +
                        " have incompatible dimensions");
    }
    if (weights.back().rows() != 1) throw Error("regressor output layer must have width 1");
    if (feature_log_mean.size() != 0 &&
        (feature_log_mean.size() != weights.front().cols() ||
         feature_log_scale.size() != weights.front().cols()))
        throw Error("regressor feature standardization vectors have the wrong length");
}

Eigen::RowVectorXd MLPRegressor::forward_core(const Eigen::MatrixXd& x_std) const {
    Eigen::MatrixXd a = x_std;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Eigen::MatrixXd z = (weights[l] * a).colwise() + biases[l];
        if (l + 1 < weights.size()) z = z.cwiseMax(0.0);  // ReLU on hidden layers
        a = std::move(z);
    }
    return a.row(0);
}

Eigen::RowVectorXd MLPRegressor::forward_log(const Eigen::MatrixXd& x_log) const {
    Eigen::MatrixXd x = x_log;
    if (feature_log_mean.size() == x.rows()) {
        x.colwise() -= feature_log_mean;
        x.array().colwise() /= feature_log_scale.array();
    }
    Eigen::RowVectorXd y = forward_core(x);
    return (y.array() * target_log_scale + target_log_mean).matrix();
}

double MLPRegressor::predict(const std::map<std::string, double>& features) const {
    validate();
    Eigen::MatrixXd x(feature_names.size(), 1);
    for (std::size_t i = 0; i < feature_names.size(); ++i) {
        auto it = features.find(feature_names[i]);
        if (it == features.end())
            throw Error("mlp predict: missing feature " + feature_names[i]);
        if (!(it->second > 0))
            throw Error("mlp predict: feature " + feature_names[i] + " must be positive, got " +
                        std::to_string(it->second));
        x(static_cast<Eigen::Index>(i), 0) = std::log(it->second);
    }
    return std::exp(forward_log(x)(0));
}

const std::string& optimizer_name(Optimizer opt) {
    static const std::string names[2] = {"adam", "sgd"};
    return names[static_cast<int>(opt)];
}

Optimizer optimizer_from_name(const std::string& name) {
    if (name == "adam") return Optimizer::Adam;
    if (name == "sgd") return Optimizer::Sgd;
    throw Error("unknown optimizer \"" + name + "\" (expected adam or sgd)");
}

std::string TrainConfig::describe() const {
    std::ostringstream out;
    out << "layers=" << num_layers << " width=" << width << " opt=" << optimizer_name(optimizer)
        << " lr=" << learning_rate << " epochs=" << epochs << " batch=" << batch_size
        << " seed=" << seed;
    return out.str();
}

MLPGradients mlp_loss_gradients(const MLPRegressor& m, const Eigen::MatrixXd& x_log,
                                const Eigen::RowVectorXd& y_log) {
    const std::size_t layers = m.weights.size();
    const double n = static_cast<double>(x_log.cols());

    std::vector<Eigen::MatrixXd> activations(layers + 1);  // post-activation
    std::vector<Eigen::MatrixXd> pre(layers);              // pre-activation
    activations[0] = x_log;
    for (std::size_t l = 0; l < layers; ++l) {
        pre[l] = (m.weights[l] * activations[l]).colwise() + m.biases[l];
        activations[l + 1] = l + 1 < layers ? pre[l].cwiseMax(0.0) : pre[l];
    }

    const Eigen::RowVectorXd residual = activations[layers].row(0) - y_log;
    MLPGradients g;
    g.loss = residual.squaredNorm() / n;
    g.weight_grads.resize(layers);
    g.bias_grads.resize(layers);

    Eigen::MatrixXd delta = (2.0 / n) * residual;  // dLoss/dZ of the output layer
    for (std::size_t l = layers; l-- > 0;) {
        g.weight_grads[l] = delta * activations[l].transpose();
        g.bias_grads[l] = delta.rowwise().sum();
        if (l > 0) {
            delta = (m.weights[l].transpose() * delta).eval();
            delta = delta.array() * (pre[l - 1].array() > 0.0).cast<double>();
        }
    }
    return g;
}

namespace {

struct LogDataset {
    Eigen::MatrixXd x;      // features x samples, log space
    Eigen::RowVectorXd y;   // log(measured)
    std::vector<double> measured;
};

LogDataset to_log_dataset(const std::vector<BenchRecord>& records,
                          const std::vector<std::string>& features) {
    LogDataset ds;
    ds.x.resize(static_cast<Eigen::Index>(features.size()),
                static_cast<Eigen::Index>(records.size()));
    ds.y.resize(static_cast<Eigen::Index>(records.size()));
    ds.measured.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const BenchRecord& rec = records[i];
        for (std::size_t f = 0; f < features.size(); ++f) {
            auto it = rec.params.find(features[f]);
            if (it == rec.params.end())
                throw Error("train: record " + std::to_string(i) + " missing feature " +
                            features[f]);
            if (!(it->second > 0))
                throw Error("train: record " + std::to_string(i) + " feature " + features[f] +
                            " must be positive for the log transform");
            ds.x(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(i)) =
                std::log(it->second);
        }
        if (!(rec.measured_us > 0))
            throw Error("train: record " + std::to_string(i) + " has non-positive latency");
        ds.y(static_cast<Eigen::Index>(i)) = std::log(rec.measured_us);
        ds.measured.push_back(rec.measured_us);
    }
    return ds;
}

MLPRegressor init_regressor(const std::vector<std::string>& features, KernelKind kind,
                            const TrainConfig& config, std::mt19937_64& rng) {
    MLPRegressor m;
    m.feature_names = features;
    m.kernel_kind = kernel_kind_name(kind);
    std::vector<int> widths;
    widths.push_back(static_cast<int>(features.size()));
    for (int l = 0; l < config.num_layers; ++l) widths.push_back(config.width);
    widths.push_back(1);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int fan_in = widths[l], fan_out = widths[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> uniform(-limit, limit);
        Eigen::MatrixXd w(fan_out, fan_in);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uniform(rng);
        m.weights.push_back(std::move(w));
        m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return m;
}

std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

}  // namespace

TrainResult mlp_train(const std::vector<BenchRecord>& train,
                      const std::vector<BenchRecord>& validation, KernelKind kind,
                      const TrainConfig& config) {
    if (train.empty()) throw Error("train: empty training set");
    if (validation.empty()) throw Error("train: empty validation set");
    if (config.num_layers < 1 || config.width < 1)
        throw Error("train: invalid architecture (" + config.describe() + ")");

    const std::vector<std::string>& features = feature_names_for(kind);
    LogDataset train_ds = to_log_dataset(train, features);
    const LogDataset val_ds = to_log_dataset(validation, features);

    std::mt19937_64 rng(config.seed);
    MLPRegressor model = init_regressor(features, kind, config, rng);

    // Standardize in log space; the transforms ship with the model.
    model.feature_log_mean = train_ds.x.rowwise().mean();
    Eigen::VectorXd var = (train_ds.x.colwise() - model.feature_log_mean)
                              .array()
                              .square()
                              .rowwise()
                              .mean();
    model.feature_log_scale = var.array().sqrt().max(1e-12);
    model.target_log_mean = train_ds.y.mean();
    const double target_var =
        (train_ds.y.array() - model.target_log_mean).square().mean();
    model.target_log_scale = std::max(std::sqrt(target_var), 1e-12);
    train_ds.x.colwise() -= model.feature_log_mean;
    train_ds.x.array().colwise() /= model.feature_log_scale.array();
    train_ds.y = ((train_ds.y.array() - model.target_log_mean) / model.target_log_scale)
                     .matrix();

    const double lr =
        config.optimizer == Optimizer::Sgd ? config.learning_rate * 10.0 : config.learning_rate;

    // Adam state
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    for (const auto& w : model.weights) {
        mw.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
        vw.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
        mb.push_back(Eigen::VectorXd::Zero(w.rows()));
        vb.push_back(Eigen::VectorXd::Zero(w.rows()));
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step = 0;

    const std::size_t n = train.size();
    const std::size_t batch = std::min<std::size_t>(std::max(config.batch_size, 1), n);
    std::vector<Eigen::Index> index(n);
    for (std::size_t i = 0; i < n; ++i) index[i] = static_cast<Eigen::Index>(i);

    double epoch_loss = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(index.begin(), index.end(), rng);
        epoch_loss = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t count = std::min(batch, n - start);
            Eigen::MatrixXd xb(train_ds.x.rows(), static_cast<Eigen::Index>(count));
            Eigen::RowVectorXd yb(static_cast<Eigen::Index>(count));
            for (std::size_t i = 0; i < count; ++i) {
                xb.col(static_cast<Eigen::Index>(i)) = train_ds.x.col(index[start + i]);
                yb(static_cast<Eigen::Index>(i)) = train_ds.y(index[start + i]);
            }
            MLPGradients g = mlp_loss_gradients(model, xb, yb);
            if (!std::isfinite(g.loss))
                throw Error("train: loss diverged (" + config.describe() + ")");
            epoch_loss += g.loss;
            ++batches;

            if (config.optimizer == Optimizer::Sgd) {
                for (std::size_t l = 0; l < model.weights.size(); ++l) {
                    model.weights[l] -= lr * g.weight_grads[l];
                    model.biases[l] -= lr * g.bias_grads[l];
                }
            } else {
                ++step;
                const double corr1 = 1.0 - std::pow(beta1, static_cast<double>(step));
                const double corr2 = 1.0 - std::pow(beta2, static_cast<double>(step));
                for (std::size_t l = 0; l < model.weights.size(); ++l) {
                    mw[l] = beta1 * mw[l] + (1 - beta1) * g.weight_grads[l];
                    vw[l] = beta2 * vw[l].array().matrix() +
                            (1 - beta2) * g.weight_grads[l].array().square().matrix();
                    mb[l] = beta1 * mb[l] + (1 - beta1) * g.bias_grads[l];
                    vb[l] = beta2 * vb[l].array().matrix() +
                            (1 - beta2) * g.bias_grads[l].array().square().matrix();
                    model.weights[l].array() -=
                        lr * (mw[l].array() / corr1) /
                        ((vw[l].array() / corr2).sqrt() + eps);
                    model.biases[l].array() -=
                        lr * (mb[l].array() / corr1) /
                        ((vb[l].array() / corr2).sqrt() + eps);
                }
            }
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));
    }

    TrainResult result;
    const Eigen::RowVectorXd val_log = model.forward_log(val_ds.x);
    std::vector<double> predicted(val_ds.measured.size());
    for (std::size_t i = 0; i < predicted.size(); ++i)
        predicted[i] = std::exp(val_log(static_cast<Eigen::Index>(i)));
    result.validation_gmae = gmae(predicted, val_ds.measured);
    result.final_train_mse = epoch_loss;
    model.validation_gmae = result.validation_gmae;
    model.dataset_hash = fnv1a_hex(serialize_dataset(train));
    result.model = std::move(model);
    return result;
}

double gmae(const std::vector<double>& predicted, const std::vector<double>& actual) {
    if (predicted.size() != actual.size())
        throw Error("gmae: length mismatch (" + std::to_string(predicted.size()) + " vs " +
                    std::to_string(actual.size()) + ")");
    if (predicted.empty()) throw Error("gmae: empty input");
    double log_sum = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (!(actual[i] > 0)) throw Error("gmae: actual values must be positive");
        double rel = std::abs(predicted[i] - actual[i]) / actual[i];
        if (rel == 0) rel = 1e-6;
        log_sum += std::log(rel);
    }
    return std::exp(log_sum / static_cast<double>(predicted.size()));
}

SearchSpace SearchSpace::full() {
    return SearchSpace{
        {3, 4, 5, 6, 7},
        {128, 256, 512, 1024},
        {Optimizer::Adam, Optimizer::Sgd},
        {1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2},
    };
}

std::vector<TrainConfig> enumerate_space(const SearchSpace& space, const TrainConfig& base) {
    if (space.num_layers.empty() || space.widths.empty() || space.optimizers.empty() ||
        space.learning_rates.empty())
        throw Error("grid search: empty search space");
    std::vector<TrainConfig> configs;
    std::uint64_t idx = 0;
    for (int layers : space.num_layers)
        for (int width : space.widths)
            for (Optimizer opt : space.optimizers)
                for (double lr : space.learning_rates) {
                    TrainConfig c = base;
                    c.num_layers = layers;
                    c.width = width;
                    c.optimizer = opt;
                    c.learning_rate = lr;
                    c.seed = base.seed + idx * 0x9E3779B97F4A7C15ull;
                    configs.push_back(c);
                    ++idx;
                }
    return configs;
}

GridSearchResult grid_search(const std::vector<BenchRecord>& train,
                             const std::vector<BenchRecord>& validation, KernelKind kind,
                             const SearchSpace& space, const TrainConfig& base,
                             unsigned threads) {
    const std::vector<TrainConfig> configs = enumerate_space(space, base);
    std::vector<TrainResult> results(configs.size());
    std::vector<std::string> failures(configs.size());

    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(configs.size()));

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < configs.size(); i = next.fetch_add(1)) {
            try {
                results[i] = mlp_train(train, validation, kind, configs[i]);
            } catch (const Error& e) {
                failures[i] = e.what();
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Diverged configurations rank last with infinite error; the search only
    // fails when nothing trained.
    GridSearchResult out;
    std::vector<std::size_t> order(configs.size());
    std::vector<double> score(configs.size());
    for (std::size_t i = 0; i < configs.size(); ++i) {
        order[i] = i;
        score[i] = failures[i].empty() ? results[i].validation_gmae
                                       : std::numeric_limits<double>::infinity();
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    if (!failures[order.front()].empty())
        throw Error("grid search: every configuration diverged; first: " +
                    failures[order.front()]);
    for (std::size_t i : order)
        out.leaderboard.push_back(LeaderboardEntry{configs[i], score[i], failures[i]});
    out.best = std::move(results[order.front()].model);
    out.best_config = configs[order.front()];
    return out;
}

// --- Serialization -----------------------------------------------------------

std::string serialize_regressor(const MLPRegressor& m) {
    json doc;
    doc["format_version"] = 1;
    doc["kind"] = m.kernel_kind;
    doc["feature_names"] = m.feature_names;
    doc["layer_widths"] = m.layer_widths();
    doc["weights"] = json::array();
    doc["biases"] = json::array();
    for (const auto& w : m.weights) {
        json row = json::array();  // row-major
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
        doc["weights"].push_back(std::move(row));
    }
    for (const auto& b : m.biases) {
        json row = json::array();
        for (Eigen::Index i = 0; i < b.size(); ++i) row.push_back(b(i));
        doc["biases"].push_back(std::move(row));
    }
    doc["feature_log_mean"] = json::array();
    doc["feature_log_scale"] = json::array();
    for (Eigen::Index i = 0; i < m.feature_log_mean.size(); ++i) {
        doc["feature_log_mean"].push_back(m.feature_log_mean(i));
        doc["feature_log_scale"].push_back(m.feature_log_scale(i));
    }
    doc["target_log_mean"] = m.target_log_mean;
    doc["target_log_scale"] = m.target_log_scale;
    doc["dataset_hash"] = m.dataset_hash;
    doc["validation_gmae"] = m.validation_gmae;
    return doc.dump(2) + "\n";
}

MLPRegressor parse_regressor(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(std::string("regressor parse: ") + e.what());
    }
    if (doc.value("format_version", -1) != 1)
        throw Error("regressor file: missing or unsupported format_version");
    MLPRegressor m;
    m.kernel_kind = doc.at("kind").get<std::string>();
    m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    const auto widths = doc.at("layer_widths").get<std::vector<int>>();
    if (widths.size() < 2) throw Error("regressor file: layer_widths too short");
    const auto& wj = doc.at("weights");
    const auto& bj = doc.at("biases");
    if (wj.size() != widths.size() - 1 || bj.size() != widths.size() - 1)
        throw Error("regressor file: layer count mismatch");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int rows = widths[l + 1], cols = widths[l];
        const auto flat = wj[l].get<std::vector<double>>();
        if (flat.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
            throw Error("regressor file: weight matrix " + std::to_string(l) + " size mismatch");
        Eigen::MatrixXd w(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                w(r, c) = flat[static_cast<std::size_t>(r) * cols + c];
        const auto bias = bj[l].get<std::vector<double>>();
        if (bias.size() != static_cast<std::size_t>(rows))
            throw Error("regressor file: bias vector " + std::to_string(l) + " size mismatch");
        Eigen::VectorXd b(rows);
        for (int r = 0; r < rows; ++r) b(r) = bias[r];
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    if (doc.contains("feature_log_mean")) {
        const auto mean = doc.at("feature_log_mean").get<std::vector<double>>();
        const auto scale = doc.at("feature_log_scale").get<std::vector<double>>();
        m.feature_log_mean.resize(static_cast<Eigen::Index>(mean.size()));
        m.feature_log_scale.resize(static_cast<Eigen::Index>(scale.size()));
        for (std::size_t i = 0; i < mean.size(); ++i) {
            m.feature_log_mean(static_cast<Eigen::Index>(i)) = mean[i];
            m.feature_log_scale(static_cast<Eigen::Index>(i)) = scale[i];
        }
    }
    m.target_log_mean = doc.value("target_log_mean", 0.0);
    m.target_log_scale = doc.value("target_log_scale", 1.0);
    m.dataset_hash = doc.value("dataset_hash", std::string{});
    m.validation_gmae = doc.value("validation_gmae", 0.0);
    m.validate();
    return m;
}

MLPRegressor parse_regressor(const std::string& text) {
    std::istringstream in(text);
    return parse_regressor(in);
}

MLPRegressor load_regressor_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open regressor file " + path);
    return parse_regressor(in);
}

}  // namespace perfmodel
