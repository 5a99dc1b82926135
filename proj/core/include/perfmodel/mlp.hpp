#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "perfmodel/bench_data.hpp"
#include "perfmodel/graph.hpp"

namespace perfmodel {

/// Feed-forward regressor predicting kernel time from input dimensions.
/// Features and targets are handled in log space: inputs are log-transformed
/// (then standardized with the stored per-feature mean/scale) before the
/// forward pass, and the linear output is mapped back and exponentiated to µs.
struct MLPRegressor {
    std::vector<std::string> feature_names;    // ordered; first layer input
    std::vector<Eigen::MatrixXd> weights;      // weights[l] is (out x in)
    std::vector<Eigen::VectorXd> biases;
    Eigen::VectorXd feature_log_mean;          // empty means identity
    Eigen::VectorXd feature_log_scale;
    double target_log_mean = 0;
    double target_log_scale = 1;
    std::string kernel_kind;                   // wire name, e.g. "GEMM"
    std::string dataset_hash;
    double validation_gmae = 0;

    std::vector<int> layer_widths() const;
    void validate() const;

    /// Core network on standardized columns (the representation the trainer
    /// steps on); hidden ReLU, linear output.
    Eigen::RowVectorXd forward_core(const Eigen::MatrixXd& x_std) const;

    /// Forward pass on log-transformed columns; returns log-space outputs.
    Eigen::RowVectorXd forward_log(const Eigen::MatrixXd& x_log) const;

    /// Predicted kernel time in µs. Throws on a missing or non-positive feature.
    double predict(const std::map<std::string, double>& features) const;
};

enum class Optimizer { Adam, Sgd };
const std::string& optimizer_name(Optimizer opt);
Optimizer optimizer_from_name(const std::string& name);

struct TrainConfig {
    int num_layers = 3;  // hidden layers, each `width` wide
    int width = 128;
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 1e-3;
    int epochs = 200;
    int batch_size = 128;
    std::uint64_t seed = 0;

    std::string describe() const;
};

struct TrainResult {
    MLPRegressor model;
    double validation_gmae = 0;
    double final_train_mse = 0;
};

/// Trains on MSE over log targets; SGD runs make the configured learning rate
/// 10x. Deterministic for a given seed. Throws on divergence (NaN loss),
/// echoing the config.
TrainResult mlp_train(const std::vector<BenchRecord>& train,
                      const std::vector<BenchRecord>& validation, KernelKind kind,
                      const TrainConfig& config);

/// Loss and parameter gradients for one batch of log-space columns; the same
/// code path the trainer steps on.
struct MLPGradients {
    double loss = 0;
    std::vector<Eigen::MatrixXd> weight_grads;
    std::vector<Eigen::VectorXd> bias_grads;
};
MLPGradients mlp_loss_gradients(const MLPRegressor& m, const Eigen::MatrixXd& x_log,
                                const Eigen::RowVectorXd& y_log);

/// Geometric mean of |predicted - actual| / actual; exact-zero errors are
/// replaced by 1e-6 before the log.
double gmae(const std::vector<double>& predicted, const std::vector<double>& actual);

struct SearchSpace {
    std::vector<int> num_layers;
    std::vector<int> widths;
    std::vector<Optimizer> optimizers;
    std::vector<double> learning_rates;

    /// num_layers [3..7], widths [128..1024], {Adam, SGD}, lr [1e-4..1e-2]:
    /// 280 configurations.
    static SearchSpace full();
};

/// Nested enumeration (layers, width, optimizer, lr) over `space`, inheriting
/// epochs/batch from `base`; each config gets a seed derived from base.seed
/// and its enumeration index.
std::vector<TrainConfig> enumerate_space(const SearchSpace& space, const TrainConfig& base);

struct LeaderboardEntry {
    TrainConfig config;
    double validation_gmae = 0;  // +inf when the configuration diverged
    std::string failure;         // divergence message, empty when trained
};

struct GridSearchResult {
    MLPRegressor best;
    TrainConfig best_config;
    std::vector<LeaderboardEntry> leaderboard;  // ascending GMAE
};

/// Trains every configuration and keeps the lowest validation GMAE.
/// Configurations may train on `threads` workers (0 = hardware concurrency);
/// results are reduced by enumeration index, so the output is deterministic.
GridSearchResult grid_search(const std::vector<BenchRecord>& train,
                             const std::vector<BenchRecord>& validation, KernelKind kind,
                             const SearchSpace& space, const TrainConfig& base,
                             unsigned threads = 0);

std::string serialize_regressor(const MLPRegressor& m);
MLPRegressor parse_regressor(std::istream& in);
MLPRegressor parse_regressor(const std::string& text);
MLPRegressor load_regressor_file(const std::string& path);

}  // namespace perfmodel
