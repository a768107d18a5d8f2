#include "fbsde/regression.hpp"

#include <cmath>
#include <stdexcept>

#include "fbsde/parallel.hpp"

namespace fbsde {

std::vector<std::vector<int>> monomial_exponents(int vars, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(static_cast<std::size_t>(vars), 0);
    // Lexicographic enumeration of exponent tuples with 1 <= total <= degree.
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == vars) {
            int total = 0;
            for (int e : cur) total += e;
            if (total >= 1) out.push_back(cur);
            return;
        }
        for (int e = 0; e <= remaining; ++e) {
            cur[static_cast<std::size_t>(pos)] = e;
            rec(pos + 1, remaining - e);
        }
        cur[static_cast<std::size_t>(pos)] = 0;
    };
    rec(0, degree);
    return out;
}

NodeRegression::NodeRegression(const Eigen::MatrixXd& raw, const RegressionBasis& basis,
                               std::int64_t begin, std::int64_t end, int workers,
                               double guard_ratio) {
    if (end <= begin || end > raw.rows())
        throw std::invalid_argument("NodeRegression: bad row range");
    rows_ = end - begin;
    workers_ = workers;
    const int vars = static_cast<int>(raw.cols());
    const auto exps = monomial_exponents(vars, basis.degree);
    const int F = static_cast<int>(exps.size());

    // Raw monomial features for the participating rows.
    Eigen::MatrixXd phi(rows_, F);
    for_each_block(rows_, workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
        std::vector<double> pw(static_cast<std::size_t>(vars * (basis.degree + 1)));
        for (std::int64_t r = b; r < e; ++r) {
            for (int v = 0; v < vars; ++v) {
                double base = raw(begin + r, v);
                double acc = 1.0;
                for (int d = 0; d <= basis.degree; ++d) {
                    pw[static_cast<std::size_t>(v * (basis.degree + 1) + d)] = acc;
                    acc *= base;
                }
            }
            for (int c = 0; c < F; ++c) {
                double val = 1.0;
                const auto& ex = exps[static_cast<std::size_t>(c)];
                for (int v = 0; v < vars; ++v)
                    val *= pw[static_cast<std::size_t>(v * (basis.degree + 1) + ex[static_cast<std::size_t>(v)])];
                phi(r, c) = val;
            }
        }
    });

    // Column means and standard deviations with block-ordered accumulation.
    const std::int64_t nb = block_count(rows_);
    Eigen::MatrixXd partial_sum(nb, F);
    for_each_block(rows_, workers, [&](std::int64_t blk, std::int64_t b, std::int64_t e) {
        partial_sum.row(blk) = phi.middleRows(b, e - b).colwise().sum();
    });
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(F);
    for (std::int64_t blk = 0; blk < nb; ++blk) mean += partial_sum.row(blk).transpose();
    mean /= static_cast<double>(rows_);

    for_each_block(rows_, workers, [&](std::int64_t blk, std::int64_t b, std::int64_t e) {
        partial_sum.row(blk) =
            (phi.middleRows(b, e - b).rowwise() - mean.transpose()).array().square().colwise().sum();
    });
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(F);
    for (std::int64_t blk = 0; blk < nb; ++blk) sq += partial_sum.row(blk).transpose();
    Eigen::VectorXd sd = (sq / static_cast<double>(rows_)).cwiseSqrt();

    kept_.clear();
    for (int c = 0; c < F; ++c) {
        if (sd[c] > 1e-12 * std::max(1.0, std::abs(mean[c]))) kept_.push_back(c);
    }
    const int K = static_cast<int>(kept_.size());
    if (rows_ < static_cast<std::int64_t>(guard_ratio * static_cast<double>(K + 1)))
        throw std::runtime_error("NodeRegression: path count too small for feature count");

    features_.resize(rows_, K);
    for (int c = 0; c < K; ++c) {
        const int src = kept_[static_cast<std::size_t>(c)];
        const double m = mean[src];
        const double s = sd[src];
        for_each_block(rows_, workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            features_.col(c).segment(b, e - b) =
                (phi.col(src).segment(b, e - b).array() - m) / s;
        });
    }

    if (K == 0) {
        condition_ = 1.0;
        return;
    }
    Eigen::MatrixXd partial_gram(static_cast<Eigen::Index>(nb) * K, K);
    for_each_block(rows_, workers, [&](std::int64_t blk, std::int64_t b, std::int64_t e) {
        partial_gram.middleRows(blk * K, K).noalias() =
            features_.middleRows(b, e - b).transpose() * features_.middleRows(b, e - b);
    });
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(K, K);
    for (std::int64_t blk = 0; blk < nb; ++blk) gram += partial_gram.middleRows(blk * K, K);
    gram.diagonal().array() += basis.ridge * static_cast<double>(rows_);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    if (!(lmin > 0.0))
        throw std::runtime_error("NodeRegression: rank-deficient beyond ridge rescue");
    condition_ = lmax / lmin;

    gram_.compute(gram);
    if (gram_.info() != Eigen::Success)
        throw std::runtime_error("NodeRegression: normal-equation factorization failed");
}

Eigen::VectorXd NodeRegression::fit(const Eigen::Ref<const Eigen::VectorXd>& target) const {
    if (target.size() != rows_) throw std::invalid_argument("NodeRegression::fit: size mismatch");
    const std::int64_t nb = block_count(rows_);
    Eigen::VectorXd partial(nb);
    for_each_block(rows_, workers_, [&](std::int64_t blk, std::int64_t b, std::int64_t e) {
        partial[blk] = target.segment(b, e - b).sum();
    });
    double mean = 0.0;
    for (std::int64_t blk = 0; blk < nb; ++blk) mean += partial[blk];
    mean /= static_cast<double>(rows_);

    const int K = active_features();
    if (K == 0) return Eigen::VectorXd::Constant(rows_, mean);

    Eigen::MatrixXd partial_rhs(nb, K);
    for_each_block(rows_, workers_, [&](std::int64_t blk, std::int64_t b, std::int64_t e) {
        partial_rhs.row(blk).noalias() =
            (target.segment(b, e - b).array() - mean).matrix().transpose() *
            features_.middleRows(b, e - b);
    });
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(K);
    for (std::int64_t blk = 0; blk < nb; ++blk) rhs += partial_rhs.row(blk).transpose();

    Eigen::VectorXd beta = gram_.solve(rhs);
    Eigen::VectorXd pred(rows_);
    for_each_block(rows_, workers_, [&](std::int64_t, std::int64_t b, std::int64_t e) {
        pred.segment(b, e - b).noalias() = features_.middleRows(b, e - b) * beta;
        pred.segment(b, e - b).array() += mean;
    });
    return pred;
}

}  // namespace fbsde
