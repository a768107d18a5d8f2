#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fbsde/noise.hpp"
#include "fbsde/parallel.hpp"
#include "fbsde/regression.hpp"

namespace fbsde::detail {

struct EngineOptions {
    RegressionBasis basis;
    int fixed_point_iters = 5;
    double fixed_point_tol = 1e-12;
    int workers = 0;
    double guard_ratio = 20.0;
};

// Builds the raw regression variables for one node into `raw` (rows x V),
// where row r corresponds to path window_begin + r.
using FamilyBuilder = std::function<void(std::int64_t node, Eigen::MatrixXd& raw)>;

// One solution advanced by the sweep: dim components sharing one feature
// family. The driver sees per-path y/z pointers and must be cheap; anything
// expensive belongs in prepare(node), which runs once per node before the
// implicit step.
struct Track {
    std::string label;
    int dim = 1;
    int family = 0;
    std::function<void(Eigen::MatrixXd&)> terminal;
    std::function<void(std::int64_t node)> prepare;
    std::function<void(std::int64_t row, const double* y, const double* z, double* out)> driver;
    std::function<void(std::int64_t node, Eigen::MatrixXd& y_cur)> post_step;  // optional

    Eigen::MatrixXd y_next, y_cur, z_cur;  // rows x dim
    double worst_condition = 1.0;
    int max_fp_iterations = 0;
};

// Backward least-squares Monte Carlo sweep over a path window. Tracks are
// stepped in registration order at every node, so a later track's prepare()
// may read an earlier track's current values. One NodeRegression per feature
// family per node is shared by all tracks of that family.
//
// Per component and node, with v = v_{i+1} and features at node i:
//   E0 = fit(v)                                  raw conditional mean
//   z0 = fit((v - E0) dW / dt)                   raw martingale coefficient
//   z  = fit((v - E0) dW / dt - z0 (dW^2 - dt) / dt)
//   E  = fit(v - z dW)
//   v_i = E + driver(v_i, z_i) dt                implicit step, per path
// The subtracted terms are conditionally mean-zero given the features, so
// both estimators stay unbiased; they strip the O(z^2) variance from the z
// target and the O(z^2 dt) variance from the mean target, which otherwise
// dominates the o(eps) residuals the order studies measure.
class BackwardSweep {
  public:
    BackwardSweep(const NoiseEnsemble& noise, EngineOptions opts,
                  std::vector<FamilyBuilder> families, std::int64_t begin, std::int64_t end)
        : noise_(noise),
          opts_(std::move(opts)),
          families_(std::move(families)),
          begin_(begin),
          end_(end) {
        raw_.resize(families_.size());
        family_vars_.assign(families_.size(), 0);
    }

    std::int64_t rows() const { return end_ - begin_; }
    std::int64_t window_begin() const { return begin_; }
    const NoiseEnsemble& noise() const { return noise_; }
    const EngineOptions& options() const { return opts_; }

    // Declares how many raw variables family f produces.
    void set_family_vars(int family, int vars) {
        family_vars_[static_cast<std::size_t>(family)] = vars;
    }

    int add_track(Track t) {
        t.y_next.resize(rows(), t.dim);
        t.y_cur.resize(rows(), t.dim);
        t.z_cur = Eigen::MatrixXd::Zero(rows(), t.dim);
        tracks_.push_back(std::move(t));
        return static_cast<int>(tracks_.size()) - 1;
    }

    Track& track(int i) { return tracks_[static_cast<std::size_t>(i)]; }
    const Track& track(int i) const { return tracks_[static_cast<std::size_t>(i)]; }

    // observer(node) fires after all tracks hold their node values, from
    // node M down to node 0.
    void run(const std::function<void(std::int64_t)>& observer) {
        const auto M = noise_.grid.M;
        const double dt = noise_.grid.dt();
        for (auto& t : tracks_) {
            t.terminal(t.y_cur);
            t.z_cur.setZero();
        }
        if (observer) observer(M);
        for (auto& t : tracks_) t.y_next = t.y_cur;

        std::vector<std::unique_ptr<NodeRegression>> regs(families_.size());
        for (std::int64_t i = M - 1; i >= 0; --i) {
            for (auto& r : regs) r.reset();
            for (auto& t : tracks_) {
                auto& reg = regs[static_cast<std::size_t>(t.family)];
                if (!reg) {
                    auto& raw = raw_[static_cast<std::size_t>(t.family)];
                    raw.resize(rows(), family_vars_[static_cast<std::size_t>(t.family)]);
                    families_[static_cast<std::size_t>(t.family)](i, raw);
                    reg = std::make_unique<NodeRegression>(raw, opts_.basis, 0, rows(),
                                                           opts_.workers, opts_.guard_ratio);
                }
                step_track(t, *reg, i, dt);
            }
            if (observer) observer(i);
            if (i > 0)
                for (auto& t : tracks_) t.y_next.swap(t.y_cur);
        }
        // After the loop, y_cur/z_cur hold the node-0 values.
    }

  private:
    void step_track(Track& t, const NodeRegression& reg, std::int64_t node, double dt) {
        t.worst_condition = std::max(t.worst_condition, reg.condition());
        const std::int64_t R = rows();
        Eigen::MatrixXd cond_mean(R, t.dim);
        Eigen::VectorXd work(R), zfit(R), raw_mean(R);
        for (int d = 0; d < t.dim; ++d) {
            raw_mean = reg.fit(t.y_next.col(d));
            for_each_block(R, opts_.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
                for (std::int64_t r = b; r < e; ++r)
                    work[r] = (t.y_next(r, d) - raw_mean[r]) * noise_.dw(begin_ + r, node) / dt;
            });
            zfit = reg.fit(work);
            for_each_block(R, opts_.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
                for (std::int64_t r = b; r < e; ++r) {
                    const double dw = noise_.dw(begin_ + r, node);
                    work[r] -= zfit[r] * (dw * dw - dt) / dt;
                }
            });
            t.z_cur.col(d) = reg.fit(work);
            for_each_block(R, opts_.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
                for (std::int64_t r = b; r < e; ++r)
                    work[r] = t.y_next(r, d) - t.z_cur(r, d) * noise_.dw(begin_ + r, node);
            });
            cond_mean.col(d) = reg.fit(work);
        }
        if (t.prepare) t.prepare(node);

        const int iters = opts_.fixed_point_iters;
        const double tol = opts_.fixed_point_tol;
        std::vector<int> iter_used(static_cast<std::size_t>(block_count(R)), 0);
        std::vector<char> failed(static_cast<std::size_t>(block_count(R)), 0);
        for_each_block(R, opts_.workers, [&](std::int64_t blk, std::int64_t b, std::int64_t e) {
            std::vector<double> yv(static_cast<std::size_t>(t.dim));
            std::vector<double> out(static_cast<std::size_t>(t.dim));
            int used_max = 0;
            std::vector<double> zv(static_cast<std::size_t>(t.dim));
            for (std::int64_t r = b; r < e; ++r) {
                for (int d = 0; d < t.dim; ++d) {
                    yv[static_cast<std::size_t>(d)] = cond_mean(r, d);
                    zv[static_cast<std::size_t>(d)] = t.z_cur(r, d);
                }
                // Convergence is measured relative to the solution scale.
                double delta = 0.0;
                int used = 0;
                for (int m = 0; m < iters; ++m) {
                    t.driver(r, yv.data(), zv.data(), out.data());
                    delta = 0.0;
                    for (int d = 0; d < t.dim; ++d) {
                        double ynew = cond_mean(r, d) + out[static_cast<std::size_t>(d)] * dt;
                        delta = std::max(delta, std::abs(ynew - yv[static_cast<std::size_t>(d)]) /
                                                    std::max(1.0, std::abs(ynew)));
                        yv[static_cast<std::size_t>(d)] = ynew;
                    }
                    used = m + 1;
                    if (delta <= tol) break;
                }
                if (delta > tol) failed[static_cast<std::size_t>(blk)] = 1;
                used_max = std::max(used_max, used);
                for (int d = 0; d < t.dim; ++d) t.y_cur(r, d) = yv[static_cast<std::size_t>(d)];
            }
            iter_used[static_cast<std::size_t>(blk)] = used_max;
        });
        for (std::size_t blk = 0; blk < failed.size(); ++blk) {
            if (failed[blk])
                throw std::runtime_error("backward sweep: implicit step did not converge (track " +
                                         t.label + ", node " + std::to_string(node) + ")");
            t.max_fp_iterations = std::max(t.max_fp_iterations, iter_used[blk]);
        }
        if (t.post_step) t.post_step(node, t.y_cur);
    }

    const NoiseEnsemble& noise_;
    EngineOptions opts_;
    std::vector<FamilyBuilder> families_;
    std::int64_t begin_ = 0, end_ = 0;
    std::vector<Eigen::MatrixXd> raw_;
    std::vector<int> family_vars_;
    std::vector<Track> tracks_;
};

}  // namespace fbsde::detail
