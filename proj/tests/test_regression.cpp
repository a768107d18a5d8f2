#include <doctest.h>

#include <random>

#include "fbsde/regression.hpp"

using namespace fbsde;

TEST_CASE("monomial enumeration counts") {
    CHECK(monomial_exponents(1, 3).size() == 3);   // x, x^2, x^3
    CHECK(monomial_exponents(2, 3).size() == 9);   // C(5,2) - 1
    CHECK(monomial_exponents(3, 3).size() == 19);  // C(6,3) - 1
}

TEST_CASE("constant features collapse to plain averaging") {
    Eigen::MatrixXd raw = Eigen::MatrixXd::Constant(500, 1, 0.3);
    NodeRegression reg(raw, RegressionBasis{}, 0, 500);
    CHECK(reg.active_features() == 0);
    Eigen::VectorXd target(500);
    std::mt19937_64 eng(1);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 500; ++i) target[i] = 2.0 + n01(eng);
    auto fit = reg.fit(target);
    CHECK(fit[0] == doctest::Approx(target.mean()));
    CHECK((fit.array() == fit[0]).all());
}

TEST_CASE("a polynomial relationship is recovered exactly") {
    const std::int64_t N = 4000;
    Eigen::MatrixXd raw(N, 1);
    std::mt19937_64 eng(2);
    std::normal_distribution<double> n01;
    for (std::int64_t i = 0; i < N; ++i) raw(i, 0) = n01(eng);
    Eigen::VectorXd target(N);
    for (std::int64_t i = 0; i < N; ++i) {
        double x = raw(i, 0);
        target[i] = 1.5 - 0.7 * x + 0.25 * x * x * x;
    }
    NodeRegression reg(raw, RegressionBasis{3, 1e-10}, 0, N);
    auto fit = reg.fit(target);
    CHECK((fit - target).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("row windows restrict the sample") {
    Eigen::MatrixXd raw(100, 1);
    for (int i = 0; i < 100; ++i) raw(i, 0) = i < 50 ? 0.0 : 1.0;
    Eigen::VectorXd target(100);
    for (int i = 0; i < 100; ++i) target[i] = i < 50 ? 5.0 : 9.0;
    // Within the first window the feature is constant.
    NodeRegression reg(raw, RegressionBasis{}, 0, 50);
    CHECK(reg.active_features() == 0);
    auto fit = reg.fit(target.head(50));
    CHECK(fit[0] == doctest::Approx(5.0));
}

TEST_CASE("path count must comfortably exceed the feature count") {
    Eigen::MatrixXd raw(30, 3);
    raw.setRandom();
    CHECK_THROWS_AS(NodeRegression(raw, RegressionBasis{3, 1e-8}, 0, 30), std::runtime_error);
}

TEST_CASE("duplicated columns survive via the ridge") {
    const std::int64_t N = 1000;
    Eigen::MatrixXd raw(N, 2);
    std::mt19937_64 eng(3);
    std::normal_distribution<double> n01;
    for (std::int64_t i = 0; i < N; ++i) {
        raw(i, 0) = n01(eng);
        raw(i, 1) = raw(i, 0);  // exact collinearity
    }
    NodeRegression reg(raw, RegressionBasis{2, 1e-8}, 0, N);
    Eigen::VectorXd target = raw.col(0);
    auto fit = reg.fit(target);
    CHECK((fit - target).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(reg.condition() > 1e6);  // reported, not hidden
}

TEST_CASE("fits are worker-count invariant") {
    const std::int64_t N = 9000;
    Eigen::MatrixXd raw(N, 2);
    std::mt19937_64 eng(4);
    std::normal_distribution<double> n01;
    Eigen::VectorXd target(N);
    for (std::int64_t i = 0; i < N; ++i) {
        raw(i, 0) = n01(eng);
        raw(i, 1) = n01(eng);
        target[i] = raw(i, 0) * raw(i, 1) + n01(eng);
    }
    NodeRegression r1(raw, RegressionBasis{}, 0, N, 1);
    NodeRegression r4(raw, RegressionBasis{}, 0, N, 4);
    auto f1 = r1.fit(target);
    auto f4 = r4.fit(target);
    CHECK((f1 - f4).cwiseAbs().maxCoeff() == 0.0);
}
