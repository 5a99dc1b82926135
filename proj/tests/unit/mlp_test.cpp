#include "doctest.h"

#include <cmath>
#include <random>

#include "perfmodel/mlp.hpp"

using namespace perfmodel;

namespace {

MLPRegressor tiny_net(std::uint64_t seed, int hidden = 4) {
    MLPRegressor m;
    m.feature_names = {"batch", "rows"};
    m.kernel_kind = "TRIL_FORWARD";
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    auto matrix = [&](int rows, int cols) {
        Eigen::MatrixXd w(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) w(r, c) = u(rng);
        return w;
    };
    m.weights = {matrix(hidden, 2), matrix(1, hidden)};
    m.biases = {Eigen::VectorXd::Zero(hidden), Eigen::VectorXd::Zero(1)};
    return m;
}

std::vector<BenchRecord> tril_records(std::size_t n, std::uint64_t seed,
                                      double (*target)(double batch, double rows)) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 7);
    const double grid[8] = {8, 16, 32, 64, 128, 256, 512, 1024};
    std::vector<BenchRecord> records;
    for (std::size_t i = 0; i < n; ++i) {
        BenchRecord rec;
        rec.kind = KernelKind::TrilForward;
        rec.device = "synthetic";
        rec.params = {{"batch", grid[pick(rng)]}, {"rows", grid[pick(rng)]}};
        rec.measured_us = target(rec.params["batch"], rec.params["rows"]);
        records.push_back(rec);
    }
    return records;
}

}  // namespace

TEST_CASE("zero-weight network predicts exp(0) = 1 us") {
    MLPRegressor m = tiny_net(1);
    for (auto& w : m.weights) w.setZero();
    CHECK(m.predict({{"batch", 64}, {"rows", 128}}) == 1.0);
    CHECK(m.predict({{"rows", 5}, {"batch", 3}}) == 1.0);
}

TEST_CASE("prediction is keyed by feature name, not insertion order") {
    MLPRegressor m = tiny_net(2);
    std::map<std::string, double> a;
    a["batch"] = 8;
    a["rows"] = 256;
    std::map<std::string, double> b;
    b["rows"] = 256;
    b["batch"] = 8;
    CHECK(m.predict(a) == m.predict(b));
}

TEST_CASE("prediction rejects missing or non-positive features") {
    MLPRegressor m = tiny_net(3);
    CHECK_THROWS_WITH_AS(m.predict({{"batch", 8}}), doctest::Contains("rows"), Error);
    CHECK_THROWS_WITH_AS(m.predict({{"batch", 8}, {"rows", 0}}), doctest::Contains("positive"),
                         Error);
}

TEST_CASE("backprop gradients match central finite differences at fp64") {
    MLPRegressor m = tiny_net(4);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    Eigen::MatrixXd x(2, 8);
    Eigen::RowVectorXd y(8);
    for (int c = 0; c < 8; ++c) {
        x(0, c) = u(rng);
        x(1, c) = u(rng);
        y(c) = u(rng);
    }
    const MLPGradients g = mlp_loss_gradients(m, x, y);
    const double h = 1e-6;
    double max_err = 0;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r) {
            for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) {
                MLPRegressor plus = m, minus = m;
                plus.weights[l](r, c) += h;
                minus.weights[l](r, c) -= h;
                const double fd = (mlp_loss_gradients(plus, x, y).loss -
                                   mlp_loss_gradients(minus, x, y).loss) /
                                  (2 * h);
                max_err = std::max(max_err, std::abs(fd - g.weight_grads[l](r, c)));
            }
        }
        for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) {
            MLPRegressor plus = m, minus = m;
            plus.biases[l](r) += h;
            minus.biases[l](r) -= h;
            const double fd =
                (mlp_loss_gradients(plus, x, y).loss - mlp_loss_gradients(minus, x, y).loss) /
                (2 * h);
            max_err = std::max(max_err, std::abs(fd - g.bias_grads[l](r)));
        }
    }
    CHECK(max_err < 1e-4);
}

TEST_CASE("training fits a constant target to under 1 percent") {
    auto records = tril_records(200, 7, [](double, double) { return 7.0; });
    auto [train, val] = split_dataset(records, 0.8, 1);
    TrainConfig cfg;
    cfg.num_layers = 2;
    cfg.width = 16;
    cfg.epochs = 250;
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-2;
    cfg.seed = 3;
    TrainResult result = mlp_train(train, val, KernelKind::TrilForward, cfg);
    CHECK(result.validation_gmae < 0.01);
}

TEST_CASE("training fits a linear one-feature relation to under 2 percent") {
    auto records = tril_records(400, 8, [](double, double rows) { return 0.5 * rows; });
    for (auto& rec : records) rec.params["batch"] = 1;  // effectively one feature
    auto [train, val] = split_dataset(records, 0.8, 2);
    TrainConfig cfg;
    cfg.num_layers = 2;
    cfg.width = 16;
    cfg.epochs = 150;
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-2;
    cfg.seed = 5;
    TrainResult result = mlp_train(train, val, KernelKind::TrilForward, cfg);
    CHECK(result.validation_gmae < 0.02);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto records = tril_records(120, 9, [](double b, double r) { return 0.1 * b * r; });
    auto [train, val] = split_dataset(records, 0.8, 3);
    TrainConfig cfg;
    cfg.num_layers = 2;
    cfg.width = 8;
    cfg.epochs = 10;
    cfg.batch_size = 16;
    cfg.seed = 11;
    TrainResult a = mlp_train(train, val, KernelKind::TrilForward, cfg);
    TrainResult b = mlp_train(train, val, KernelKind::TrilForward, cfg);
    REQUIRE(a.model.weights.size() == b.model.weights.size());
    for (std::size_t l = 0; l < a.model.weights.size(); ++l)
        CHECK(a.model.weights[l] == b.model.weights[l]);
    CHECK(a.validation_gmae == b.validation_gmae);
}

TEST_CASE("divergence reports the configuration") {
    auto records = tril_records(100, 10, [](double b, double r) { return b * r; });
    auto [train, val] = split_dataset(records, 0.8, 4);
    TrainConfig cfg;
    cfg.num_layers = 3;
    cfg.width = 16;
    cfg.epochs = 50;
    cfg.optimizer = Optimizer::Sgd;
    cfg.learning_rate = 1e5;  // x10 SGD rule makes this 1e6
    CHECK_THROWS_WITH_AS(mlp_train(train, val, KernelKind::TrilForward, cfg),
                         doctest::Contains("opt=sgd"), Error);
}

TEST_CASE("gmae arithmetic") {
    CHECK(gmae({1, 1, 1}, {1, 1, 1}) == doctest::Approx(1e-6));
    CHECK(gmae({1.1, 1.1, 1.05}, {1, 1, 1}) == doctest::Approx(0.07937).epsilon(1e-3));
    // AM-GM: geometric mean of errors never exceeds the arithmetic mean
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.01, 0.5);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> pred, actual;
        double arith = 0;
        for (int k = 0; k < 10; ++k) {
            const double rel = u(rng);
            actual.push_back(10);
            pred.push_back(10 * (1 + rel));
            arith += rel;
        }
        arith /= 10;
        CHECK(gmae(pred, actual) <= arith + 1e-12);
    }
    CHECK_THROWS_AS(gmae({1}, {1, 2}), Error);
    CHECK_THROWS_AS(gmae({1}, {0}), Error);
}

TEST_CASE("search space enumeration") {
    TrainConfig base;
    base.seed = 17;
    const auto full = enumerate_space(SearchSpace::full(), base);
    CHECK(full.size() == 280);  // 5 x 4 x 2 x 7

    SearchSpace single{{3}, {128}, {Optimizer::Adam}, {1e-3}};
    const auto one = enumerate_space(single, base);
    REQUIRE(one.size() == 1);
    CHECK(one[0].num_layers == 3);
    CHECK(one[0].width == 128);

    CHECK_THROWS_AS(enumerate_space(SearchSpace{{}, {128}, {Optimizer::Adam}, {1e-3}}, base),
                    Error);
}

TEST_CASE("grid search returns a sorted, complete leaderboard") {
    auto records = tril_records(150, 12, [](double b, double r) { return 0.2 * b + 0.1 * r; });
    auto [train, val] = split_dataset(records, 0.8, 5);
    TrainConfig base;
    base.epochs = 8;
    base.batch_size = 32;
    base.seed = 21;
    SearchSpace space{{3}, {128}, {Optimizer::Adam, Optimizer::Sgd}, {1e-3, 1e-4}};
    GridSearchResult result = grid_search(train, val, KernelKind::TrilForward, space, base, 1);
    CHECK(result.leaderboard.size() == 4);  // complete: one entry per config
    for (std::size_t i = 1; i < result.leaderboard.size(); ++i)
        CHECK(result.leaderboard[i - 1].validation_gmae <=
              result.leaderboard[i].validation_gmae);
    CHECK(result.best.validation_gmae == result.leaderboard.front().validation_gmae);
    CHECK(result.leaderboard.front().failure.empty());  // best actually trained

    SearchSpace one{{3}, {128}, {Optimizer::Adam}, {1e-3}};
    GridSearchResult single = grid_search(train, val, KernelKind::TrilForward, one, base, 1);
    CHECK(single.leaderboard.size() == 1);
    CHECK(single.best_config.num_layers == 3);
}

TEST_CASE("regressor serialization round-trips predictions") {
    MLPRegressor m = tiny_net(14);
    m.dataset_hash = "abc123";
    m.validation_gmae = 0.05;
    MLPRegressor copy = parse_regressor(serialize_regressor(m));
    CHECK(copy.feature_names == m.feature_names);
    CHECK(copy.kernel_kind == m.kernel_kind);
    CHECK(copy.dataset_hash == "abc123");
    const std::map<std::string, double> features = {{"batch", 16}, {"rows", 64}};
    CHECK(copy.predict(features) == m.predict(features));
    CHECK_THROWS_AS(parse_regressor("{}"), Error);
}
