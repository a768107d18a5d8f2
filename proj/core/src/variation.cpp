#include "fbsde/variation.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "fbsde/forward.hpp"
#include "tracks.hpp"

namespace fbsde {

ControlPolicy make_spike_control(const ControlPolicy& base, const SpikeConfig& spike,
                                 const ControlSet& control_set) {
    if (spike.eps > 0.0 && !control_set.contains(spike.u))
        throw std::invalid_argument("make_spike_control: replacement control not in U");
    return ControlPolicy::spiked(base, spike);
}

namespace {

// Bulk per-node reconstruction of (y1, z1, y2, z2). Buffers are rows x dim.
void reconstruct_node(const detail::BaseCoeffCache& c, const Eigen::MatrixXd& pbuf,
                      const Eigen::MatrixXd& qbuf, const Eigen::MatrixXd& Pbuf,
                      const Eigen::MatrixXd& Qbuf, const Eigen::MatrixXd& x1buf,
                      const Eigen::MatrixXd& x2buf, const Eigen::VectorXd& yhat,
                      const Eigen::VectorXd& zhat, Eigen::VectorXd& y1, Eigen::VectorXd& z1,
                      Eigen::VectorXd& y2, Eigen::VectorXd& z2) {
    const int n = c.spec->n;
    const std::int64_t rows = c.rows;
    y1.resize(rows);
    z1.resize(rows);
    y2.resize(rows);
    z2.resize(rows);
    for_each_block(rows, c.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
        for (std::int64_t r = b; r < e; ++r) {
            auto sx = c.sx_at(r);  // (j, k): d sigma^j / d x_k
            double y1v = 0.0, z1v = 0.0, y2v = 0.0, z2v = 0.0, pds = 0.0;
            for (int j = 0; j < n; ++j) {
                y1v += pbuf(r, j) * x1buf(r, j);
                y2v += pbuf(r, j) * x2buf(r, j);
            }
            // w = sigma_x^T p + q
            for (int j = 0; j < n; ++j) {
                double w = qbuf(r, j);
                for (int k = 0; k < n; ++k) w += sx(k, j) * pbuf(r, k);
                z1v += w * x1buf(r, j);
                z2v += w * x2buf(r, j);
            }
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k)
                    y2v += 0.5 * Pbuf(r, j * n + k) * x1buf(r, j) * x1buf(r, k);
            if (c.node_on_spike) {
                for (int j = 0; j < n; ++j) pds += pbuf(r, j) * c.dsig(j, r);
                z1v += pds;
                for (int j = 0; j < n; ++j) {
                    double w = 0.0;
                    for (int k = 0; k < n; ++k) {
                        w += c.dsigx(k * n + j, r) * pbuf(r, k);  // (dsig_x^T p)_j
                        w += 0.5 * (Pbuf(r, j * n + k) + Pbuf(r, k * n + j)) * c.dsig(k, r);
                    }
                    z2v += w * x1buf(r, j);
                }
            }
            // G = sigma_xx^T p + P sigma_x + sigma_x^T P + Q
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) {
                    double g = Qbuf(r, j * n + k);
                    for (int i = 0; i < n; ++i) {
                        g += pbuf(r, i) * c.sxx(i * n * n + j * n + k, r);
                        g += Pbuf(r, j * n + i) * sx(i, k);
                        g += sx(i, j) * Pbuf(r, i * n + k);
                    }
                    z2v += 0.5 * g * x1buf(r, j) * x1buf(r, k);
                }
            y1[r] = y1v;
            z1[r] = z1v;
            y2[r] = y2v + yhat[r];
            z2[r] = z2v + zhat[r];
        }
    });
}

}  // namespace

namespace detail {

// Shared with sweep.cpp.
void reconstruct_node_rows(const BaseCoeffCache& c, const Eigen::MatrixXd& pbuf,
                           const Eigen::MatrixXd& qbuf, const Eigen::MatrixXd& Pbuf,
                           const Eigen::MatrixXd& Qbuf, const Eigen::MatrixXd& x1buf,
                           const Eigen::MatrixXd& x2buf, const Eigen::VectorXd& yhat,
                           const Eigen::VectorXd& zhat, Eigen::VectorXd& y1, Eigen::VectorXd& z1,
                           Eigen::VectorXd& y2, Eigen::VectorXd& z2) {
    reconstruct_node(c, pbuf, qbuf, Pbuf, Qbuf, x1buf, x2buf, yhat, zhat, y1, z1, y2, z2);
}

}  // namespace detail

ReconstructedPair reconstruct_y1z1(const ModelSpec& spec, const BaseSolution& base,
                                   const FirstAdjoint& pq, const TrajectoryEnsemble& x1,
                                   const SpikeConfig& spike) {
    const TimeGrid& grid = base.x.grid;
    const std::int64_t N = base.x.N;
    ReconstructedPair out;
    out.y = TrajectoryEnsemble("y1", grid, N, 1, base.x.seed);
    out.z = TrajectoryEnsemble("z1", grid, N, 1, base.x.seed);
    auto cache = detail::make_cache(spec, grid, N, 0, detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);
    cache->configure_spike(spike);
    const int n = spec.n;
    Eigen::MatrixXd pbuf(N, n), qbuf(N, n), Pbuf = Eigen::MatrixXd::Zero(N, n * n),
                    Qbuf = Eigen::MatrixXd::Zero(N, n * n), x1buf(N, n),
                    x2buf = Eigen::MatrixXd::Zero(N, n);
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(N), y1, z1, y2, z2;
    for (std::int64_t node = 0; node < grid.nodes(); ++node) {
        cache->ensure(node);
        for (int c = 0; c < n; ++c) {
            pbuf.col(c) = pq.p.components[static_cast<std::size_t>(c)].col(node);
            qbuf.col(c) = pq.q.components[static_cast<std::size_t>(c)].col(node);
            x1buf.col(c) = x1.components[static_cast<std::size_t>(c)].col(node);
        }
        reconstruct_node(*cache, pbuf, qbuf, Pbuf, Qbuf, x1buf, x2buf, zero, zero, y1, z1, y2,
                         z2);
        out.y.components[0].col(node) = y1;
        out.z.components[0].col(node) = z1;
    }
    return out;
}

ReconstructedPair reconstruct_y2z2(const ModelSpec& spec, const BaseSolution& base,
                                   const FirstAdjoint& pq, const SecondAdjoint& PQ,
                                   const TrajectoryEnsemble& x1, const TrajectoryEnsemble& x2,
                                   const BsdeSolution& hat, const SpikeConfig& spike) {
    const TimeGrid& grid = base.x.grid;
    const std::int64_t N = base.x.N;
    ReconstructedPair out;
    out.y = TrajectoryEnsemble("y2", grid, N, 1, base.x.seed);
    out.z = TrajectoryEnsemble("z2", grid, N, 1, base.x.seed);
    auto cache = detail::make_cache(spec, grid, N, 0, detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);
    cache->configure_spike(spike);
    const int n = spec.n;
    Eigen::MatrixXd pbuf(N, n), qbuf(N, n), Pbuf(N, n * n), Qbuf(N, n * n), x1buf(N, n),
        x2buf(N, n);
    Eigen::VectorXd yhat(N), zhat(N), y1, z1, y2, z2;
    for (std::int64_t node = 0; node < grid.nodes(); ++node) {
        cache->ensure(node);
        for (int c = 0; c < n; ++c) {
            pbuf.col(c) = pq.p.components[static_cast<std::size_t>(c)].col(node);
            qbuf.col(c) = pq.q.components[static_cast<std::size_t>(c)].col(node);
            x1buf.col(c) = x1.components[static_cast<std::size_t>(c)].col(node);
            x2buf.col(c) = x2.components[static_cast<std::size_t>(c)].col(node);
        }
        for (int c = 0; c < n * n; ++c) {
            Pbuf.col(c) = PQ.P.components[static_cast<std::size_t>(c)].col(node);
            Qbuf.col(c) = PQ.Q.components[static_cast<std::size_t>(c)].col(node);
        }
        yhat = hat.y.components[0].col(node);
        zhat = hat.z.components[0].col(node);
        reconstruct_node(*cache, pbuf, qbuf, Pbuf, Qbuf, x1buf, x2buf, yhat, zhat, y1, z1, y2,
                         z2);
        out.y.components[0].col(node) = y2;
        out.z.components[0].col(node) = z2;
    }
    return out;
}

OrderEstimate estimate_order(const std::string& label, const std::vector<OrderPoint>& points) {
    if (points.size() < 3)
        throw std::invalid_argument("estimate_order: need at least three ladder points");
    for (std::size_t i = 1; i < points.size(); ++i)
        if (!(points[i].eps < points[i - 1].eps))
            throw std::invalid_argument("estimate_order: eps must be strictly decreasing");
    OrderEstimate est;
    est.label = label;
    est.points = points;
    // Rungs whose residual sits inside its own standard error measure the
    // estimator's noise floor, not the order; they are excluded from the
    // fit. Fewer than three clean rungs leaves the estimate inconclusive.
    std::vector<double> lx, ly;
    int dropped = 0;
    for (const auto& pt : points) {
        if (!(pt.residual > 0.0) || !(pt.residual > pt.se)) {
            ++dropped;
            continue;
        }
        lx.push_back(std::log(pt.eps));
        ly.push_back(std::log(pt.residual));
    }
    if (lx.size() < 3) {
        est.inconclusive = true;
        est.note = "residual within its standard error";
        return est;
    }
    if (dropped > 0)
        est.note = std::to_string(dropped) + " noise-dominated rung(s) excluded from the fit";
    auto fit = fit_line(lx, ly);
    est.slope = fit.slope;
    est.ci_lo = fit.slope - fit.ci_halfwidth;
    est.ci_hi = fit.slope + fit.ci_halfwidth;
    return est;
}

double slope_threshold(const std::string& label) {
    if (label == "est1" || label == "est2") return 0.9;
    if (label == "est3" || label == "est4") return 1.9;
    if (label == "est5") return 2.1;
    if (label == "est6") return 1.1;
    if (label == "vbs1" || label == "vbs3") return 1.9;
    if (label == "vbs2" || label == "vbs4") return 2.1;
    if (label == "veq123") return 2.1;
    if (label == "equivalence") return 2.1;
    throw std::invalid_argument("slope_threshold: unknown estimate label " + label);
}

VerifyOutcome verify_order_report(const OrderReport& report) {
    VerifyOutcome out;
    for (const auto& e : report.estimates) {
        if (e.label == "veq123_z") continue;  // diagnostic companion, no threshold
        if (e.inconclusive) {
            out.inconclusive.push_back(e.label);
            continue;
        }
        if (e.slope < slope_threshold(e.label)) {
            out.pass = false;
            out.failures.push_back(e.label);
        }
    }
    return out;
}

const OrderEstimate* OrderReport::find(const std::string& label) const {
    for (const auto& e : estimates)
        if (e.label == label) return &e;
    return nullptr;
}

std::string OrderReport::to_json() const {
    nlohmann::ordered_json j;
    j["benchmark"] = benchmark;
    j["N"] = N;
    j["M"] = M;
    j["seed"] = seed;
    j["spike_s"] = spike_s;
    j["base_y0"] = base_y0;
    j["estimates"] = nlohmann::ordered_json::array();
    for (const auto& e : estimates) {
        nlohmann::ordered_json je;
        je["label"] = e.label;
        je["slope"] = e.slope;
        je["ci_lo"] = e.ci_lo;
        je["ci_hi"] = e.ci_hi;
        je["inconclusive"] = e.inconclusive;
        if (!e.note.empty()) je["note"] = e.note;
        je["points"] = nlohmann::ordered_json::array();
        for (const auto& pt : e.points)
            je["points"].push_back({{"eps", pt.eps}, {"residual", pt.residual}, {"se", pt.se}});
        j["estimates"].push_back(je);
    }
    j["cross_checks"] = nlohmann::ordered_json::array();
    for (const auto& c : cross_checks)
        j["cross_checks"].push_back({{"eps", c.eps},
                                     {"yhat0_bsde", c.yhat0_bsde},
                                     {"yhat0_bsde_se", c.yhat0_bsde_se},
                                     {"yhat0_gamma", c.yhat0_gamma},
                                     {"yhat0_gamma_se", c.yhat0_gamma_se}});
    return j.dump(2);
}

void OrderReport::write_csv(std::ostream& os) const {
    os << "estimate,eps,residual,se\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    for (const auto& e : estimates) {
        for (const auto& pt : e.points) {
            os << e.label << ',';
            put(pt.eps);
            os << ',';
            put(pt.residual);
            os << ',';
            put(pt.se);
            os << "\n";
        }
    }
}

}  // namespace fbsde
