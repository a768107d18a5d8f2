#include "fbsde/validate.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fbsde/noise.hpp"

namespace fbsde {

std::string ValidationReport::to_json() const {
    nlohmann::ordered_json j;
    j["spec"] = spec_name;
    j["tol"] = tol;
    j["samples"] = samples;
    j["passed"] = passed();
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json je;
        je["derivative"] = e.derivative;
        je["max_rel_discrepancy"] = e.max_rel_discrepancy;
        je["worst_point"] = e.worst_point;
        je["pass"] = e.pass;
        if (!e.note.empty()) je["note"] = e.note;
        j["entries"].push_back(je);
    }
    return j.dump(2);
}

namespace {

double fd_step(double coord) { return 1e-5 * std::max(1.0, std::abs(coord)); }

double rel_disc(double fd, double supplied) {
    return std::abs(fd - supplied) / std::max({1.0, std::abs(fd), std::abs(supplied)});
}

std::string format_point(double t, const Vec& x, const Vec& u, double y, double z,
                         bool with_yz) {
    std::ostringstream os;
    os << "t=" << t << " x=[" << x.transpose() << "] u=[" << u.transpose() << "]";
    if (with_yz) os << " y=" << y << " z=" << z;
    return os.str();
}

struct Sample {
    double t;
    Vec x;
    Vec u;
    double y, z;
};

class Checker {
  public:
    Checker(ValidationReport& report, double tol) : report_(report), tol_(tol) {}

    void observe(const std::string& name, double fd, double supplied, const Sample& s,
                 bool with_yz) {
        auto& e = entry(name);
        if (!std::isfinite(fd) || !std::isfinite(supplied)) {
            e.pass = false;
            if (e.note.empty())
                e.note = "non-finite evaluation at " + format_point(s.t, s.x, s.u, s.y, s.z, with_yz);
            return;
        }
        double d = rel_disc(fd, supplied);
        if (d > e.max_rel_discrepancy) {
            e.max_rel_discrepancy = d;
            e.worst_point = format_point(s.t, s.x, s.u, s.y, s.z, with_yz);
        }
        if (d > tol_) e.pass = false;
    }

    void observe_abs(const std::string& name, double value, double limit, const Sample& s,
                     bool with_yz) {
        auto& e = entry(name);
        if (!std::isfinite(value)) {
            e.pass = false;
            if (e.note.empty())
                e.note = "non-finite evaluation at " + format_point(s.t, s.x, s.u, s.y, s.z, with_yz);
            return;
        }
        if (value > e.max_rel_discrepancy) {
            e.max_rel_discrepancy = value;
            e.worst_point = format_point(s.t, s.x, s.u, s.y, s.z, with_yz);
        }
        if (value > limit) e.pass = false;
    }

  private:
    ValidationEntry& entry(const std::string& name) {
        for (auto& e : report_.entries)
            if (e.derivative == name) return e;
        report_.entries.push_back(ValidationEntry{name, 0.0, "", true, ""});
        return report_.entries.back();
    }
    ValidationReport& report_;
    double tol_;
};

}  // namespace

SamplingRegion default_region(const ModelSpec& spec) {
    SamplingRegion r;
    r.t_hi = spec.T;
    r.x_lo = spec.x0.array() - 2.0;
    r.x_hi = spec.x0.array() + 2.0;
    return r;
}

ValidationReport validate_derivatives(const ModelSpec& spec, const SamplingRegion& region,
                                      double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("validate_derivatives: tol must be positive");
    if (region.x_lo.size() != spec.n || region.x_hi.size() != spec.n)
        throw std::invalid_argument("validate_derivatives: region dimension mismatch");

    ValidationReport report;
    report.spec_name = spec.name;
    report.tol = tol;
    report.samples = region.samples;
    Checker check(report, tol);

    std::mt19937_64 eng(derive_seed(region.seed,
                                    static_cast<std::uint64_t>(SeedPurpose::derivative_check), 0));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto controls = spec.control_set.enumerate();
    if (controls.empty()) throw std::invalid_argument("validate_derivatives: empty control set");

    const int n = spec.n;
    Vec xp(n), xm(n);

    for (int sidx = 0; sidx < region.samples; ++sidx) {
        Sample s;
        s.t = region.t_lo + (region.t_hi - region.t_lo) * unit(eng);
        s.x.resize(n);
        for (int j = 0; j < n; ++j)
            s.x[j] = region.x_lo[j] + (region.x_hi[j] - region.x_lo[j]) * unit(eng);
        s.u = controls[static_cast<std::size_t>(
            std::min<std::size_t>(controls.size() - 1,
                                  static_cast<std::size_t>(unit(eng) * static_cast<double>(controls.size()))))];
        s.y = region.y_lo + (region.y_hi - region.y_lo) * unit(eng);
        s.z = region.z_lo + (region.z_hi - region.z_lo) * unit(eng);

        // Vector coefficients: Jacobians and per-component Hessians in x.
        auto check_vector_field =
            [&](const std::string& base_name,
                const std::function<void(double, const Vec&, const Vec&, Vec&)>& fn,
                const std::function<void(double, const Vec&, const Vec&, Mat&)>& jac,
                const std::function<void(double, const Vec&, const Vec&, std::vector<Mat>&)>& hess) {
                Mat jac_sup(n, n);
                jac(s.t, s.x, s.u, jac_sup);
                std::vector<Mat> hess_sup(static_cast<std::size_t>(n), Mat::Zero(n, n));
                hess(s.t, s.x, s.u, hess_sup);
                Vec fp(n), fm(n), f0(n);
                fn(s.t, s.x, s.u, f0);
                for (int j = 0; j < n; ++j) {
                    const double h = fd_step(s.x[j]);
                    xp = s.x;
                    xm = s.x;
                    xp[j] += h;
                    xm[j] -= h;
                    fn(s.t, xp, s.u, fp);
                    fn(s.t, xm, s.u, fm);
                    for (int i = 0; i < n; ++i)
                        check.observe(base_name + "_jac", (fp[i] - fm[i]) / (2.0 * h), jac_sup(i, j),
                                      s, false);
                    // Diagonal second difference.
                    for (int i = 0; i < n; ++i)
                        check.observe(base_name + "_hess",
                                      (fp[i] - 2.0 * f0[i] + fm[i]) / (h * h),
                                      hess_sup[static_cast<std::size_t>(i)](j, j), s, false);
                    // Mixed partials, upper triangle.
                    for (int l = j + 1; l < n; ++l) {
                        const double hl = fd_step(s.x[l]);
                        Vec xpp = s.x, xpm = s.x, xmp = s.x, xmm = s.x;
                        xpp[j] += h; xpp[l] += hl;
                        xpm[j] += h; xpm[l] -= hl;
                        xmp[j] -= h; xmp[l] += hl;
                        xmm[j] -= h; xmm[l] -= hl;
                        Vec vpp(n), vpm(n), vmp(n), vmm(n);
                        fn(s.t, xpp, s.u, vpp);
                        fn(s.t, xpm, s.u, vpm);
                        fn(s.t, xmp, s.u, vmp);
                        fn(s.t, xmm, s.u, vmm);
                        for (int i = 0; i < n; ++i) {
                            double fd = (vpp[i] - vpm[i] - vmp[i] + vmm[i]) / (4.0 * h * hl);
                            check.observe(base_name + "_hess", fd,
                                          hess_sup[static_cast<std::size_t>(i)](j, l), s, false);
                            check.observe(base_name + "_hess", fd,
                                          hess_sup[static_cast<std::size_t>(i)](l, j), s, false);
                        }
                    }
                }
            };
        check_vector_field("drift", spec.drift, spec.drift_jac, spec.drift_hess);
        check_vector_field("diffusion", spec.diffusion, spec.diffusion_jac, spec.diffusion_hess);

        // Driver gradient and Hessian in (x, y, z).
        {
            Vec grad_sup(n + 2);
            spec.driver_grad(s.t, s.x, s.y, s.z, s.u, grad_sup);
            Mat hess_sup(n + 2, n + 2);
            spec.driver_hess(s.t, s.x, s.y, s.z, s.u, hess_sup);
            auto eval_at = [&](const Vec& q) {
                return spec.driver(s.t, q.head(n), q[n], q[n + 1], s.u);
            };
            Vec q0(n + 2);
            q0 << s.x, s.y, s.z;
            const double f0 = eval_at(q0);
            for (int j = 0; j < n + 2; ++j) {
                const double h = fd_step(q0[j]);
                Vec qp = q0, qm = q0;
                qp[j] += h;
                qm[j] -= h;
                const double fp = eval_at(qp), fm = eval_at(qm);
                check.observe("driver_grad", (fp - fm) / (2.0 * h), grad_sup[j], s, true);
                check.observe("driver_hess", (fp - 2.0 * f0 + fm) / (h * h), hess_sup(j, j), s,
                              true);
                for (int l = j + 1; l < n + 2; ++l) {
                    const double hl = fd_step(q0[l]);
                    Vec qpp = q0, qpm = q0, qmp = q0, qmm = q0;
                    qpp[j] += h; qpp[l] += hl;
                    qpm[j] += h; qpm[l] -= hl;
                    qmp[j] -= h; qmp[l] += hl;
                    qmm[j] -= h; qmm[l] -= hl;
                    double fd = (eval_at(qpp) - eval_at(qpm) - eval_at(qmp) + eval_at(qmm)) /
                                (4.0 * h * hl);
                    check.observe("driver_hess", fd, hess_sup(j, l), s, true);
                    check.observe("driver_hess", fd, hess_sup(l, j), s, true);
                }
            }
            double asym = (hess_sup - hess_sup.transpose()).cwiseAbs().maxCoeff();
            check.observe_abs("driver_hess_symmetry", asym,
                              1e-14 * std::max(1.0, hess_sup.cwiseAbs().maxCoeff()), s, true);
        }

        // Terminal map.
        {
            Vec grad_sup(n);
            spec.terminal_grad(s.x, grad_sup);
            Mat hess_sup(n, n);
            spec.terminal_hess(s.x, hess_sup);
            const double f0 = spec.terminal(s.x);
            for (int j = 0; j < n; ++j) {
                const double h = fd_step(s.x[j]);
                xp = s.x;
                xm = s.x;
                xp[j] += h;
                xm[j] -= h;
                const double fp = spec.terminal(xp), fm = spec.terminal(xm);
                check.observe("terminal_grad", (fp - fm) / (2.0 * h), grad_sup[j], s, false);
                check.observe("terminal_hess", (fp - 2.0 * f0 + fm) / (h * h), hess_sup(j, j), s,
                              false);
                for (int l = j + 1; l < n; ++l) {
                    const double hl = fd_step(s.x[l]);
                    Vec xpp = s.x, xpm = s.x, xmp = s.x, xmm = s.x;
                    xpp[j] += h; xpp[l] += hl;
                    xpm[j] += h; xpm[l] -= hl;
                    xmp[j] -= h; xmp[l] += hl;
                    xmm[j] -= h; xmm[l] -= hl;
                    double fd = (spec.terminal(xpp) - spec.terminal(xpm) - spec.terminal(xmp) +
                                 spec.terminal(xmm)) /
                                (4.0 * h * hl);
                    check.observe("terminal_hess", fd, hess_sup(j, l), s, false);
                    check.observe("terminal_hess", fd, hess_sup(l, j), s, false);
                }
            }
            double asym = (hess_sup - hess_sup.transpose()).cwiseAbs().maxCoeff();
            check.observe_abs("terminal_hess_symmetry", asym,
                              1e-14 * std::max(1.0, hess_sup.cwiseAbs().maxCoeff()), s, false);
        }

        // Constraint derivatives, when present.
        if (spec.has_constraint) {
            Vec grad_sup(n);
            spec.constraint_grad_x(s.x, s.y, grad_sup);
            Mat hess_sup(n, n);
            spec.constraint_hess_x(s.x, s.y, hess_sup);
            const double f0 = spec.constraint(s.x, s.y);
            for (int j = 0; j < n; ++j) {
                const double h = fd_step(s.x[j]);
                xp = s.x;
                xm = s.x;
                xp[j] += h;
                xm[j] -= h;
                const double fp = spec.constraint(xp, s.y), fm = spec.constraint(xm, s.y);
                check.observe("constraint_grad_x", (fp - fm) / (2.0 * h), grad_sup[j], s, true);
                check.observe("constraint_hess_x", (fp - 2.0 * f0 + fm) / (h * h), hess_sup(j, j),
                              s, true);
            }
            const double hy = fd_step(s.y);
            double fd_y = (spec.constraint(s.x, s.y + hy) - spec.constraint(s.x, s.y - hy)) /
                          (2.0 * hy);
            check.observe("constraint_grad_y", fd_y, spec.constraint_grad_y(s.x, s.y), s, true);
        }
    }
    return report;
}

}  // namespace fbsde
