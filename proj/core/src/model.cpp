#include "fbsde/model.hpp"

#include <cmath>

namespace fbsde {

bool ControlSet::contains(const Vec& u, double tol) const {
    if (kind == Kind::finite) {
        for (const auto& p : points) {
            if (p.size() == u.size() && (p - u).lpNorm<Eigen::Infinity>() <= tol) return true;
        }
        return false;
    }
    if (u.size() != lo.size()) return false;
    for (Eigen::Index j = 0; j < u.size(); ++j) {
        if (u[j] < lo[j] - tol || u[j] > hi[j] + tol) return false;
    }
    return true;
}

std::vector<Vec> ControlSet::enumerate() const {
    if (kind == Kind::finite) return points;
    if (lo.size() == 0) throw std::invalid_argument("ControlSet: empty box");
    // Grid each axis at `resolution`, then take the product.
    std::vector<std::vector<double>> axes(static_cast<std::size_t>(lo.size()));
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
        auto steps = static_cast<std::int64_t>(std::floor((hi[j] - lo[j]) / resolution + 0.5));
        if (steps < 1) steps = 1;
        for (std::int64_t i = 0; i <= steps; ++i)
            axes[static_cast<std::size_t>(j)].push_back(
                std::min(hi[j], lo[j] + resolution * static_cast<double>(i)));
    }
    std::vector<Vec> out;
    std::vector<std::size_t> idx(axes.size(), 0);
    for (;;) {
        Vec u(lo.size());
        for (std::size_t j = 0; j < axes.size(); ++j) u[static_cast<Eigen::Index>(j)] = axes[j][idx[j]];
        out.push_back(std::move(u));
        std::size_t j = 0;
        for (; j < axes.size(); ++j) {
            if (++idx[j] < axes[j].size()) break;
            idx[j] = 0;
        }
        if (j == axes.size()) break;
    }
    return out;
}

ControlPolicy ControlPolicy::constant(Vec u) {
    ControlPolicy p;
    p.k_ = static_cast<int>(u.size());
    p.const_u_ = std::move(u);
    return p;
}

ControlPolicy ControlPolicy::from_function(int k, std::function<Vec(double)> fn) {
    ControlPolicy p;
    p.k_ = k;
    p.fn_ = std::move(fn);
    return p;
}

ControlPolicy ControlPolicy::spiked(ControlPolicy base, SpikeConfig spike) {
    if (spike.u.size() != base.control_dim())
        throw std::invalid_argument("spiked: replacement control has wrong dimension");
    if (spike.eps < 0.0) throw std::invalid_argument("spiked: negative spike width");
    ControlPolicy p;
    p.k_ = base.control_dim();
    p.base_ = std::make_shared<const ControlPolicy>(std::move(base));
    p.spike_ = std::move(spike);
    return p;
}

Vec ControlPolicy::operator()(double t) const {
    if (spike_) {
        if (spike_->contains(t)) return spike_->u;
        return (*base_)(t);
    }
    if (const_u_) return *const_u_;
    return fn_(t);
}

namespace {

void eval_forward_part(const ModelSpec& spec, double t, const Vec& x, const Vec& u,
                       CoeffBundle& out) {
    spec.check_dims(x, u);
    out.b.resize(spec.n);
    out.sigma.resize(spec.n);
    out.b_x.resize(spec.n, spec.n);
    out.sigma_x.resize(spec.n, spec.n);
    spec.drift(t, x, u, out.b);
    spec.diffusion(t, x, u, out.sigma);
    spec.drift_jac(t, x, u, out.b_x);
    spec.diffusion_jac(t, x, u, out.sigma_x);
    out.b_xx.assign(static_cast<std::size_t>(spec.n), Mat::Zero(spec.n, spec.n));
    out.sigma_xx.assign(static_cast<std::size_t>(spec.n), Mat::Zero(spec.n, spec.n));
    spec.drift_hess(t, x, u, out.b_xx);
    spec.diffusion_hess(t, x, u, out.sigma_xx);
}

}  // namespace

CoeffBundle eval_coeffs(const ModelSpec& spec, double t, const Vec& x, const Vec& u) {
    CoeffBundle out;
    eval_forward_part(spec, t, x, u, out);
    return out;
}

CoeffBundle eval_coeffs(const ModelSpec& spec, double t, const Vec& x, double y, double z,
                        const Vec& u) {
    CoeffBundle out;
    eval_forward_part(spec, t, x, u, out);
    out.has_driver = true;
    out.f = spec.driver(t, x, y, z, u);
    Vec grad(spec.n + 2);
    spec.driver_grad(t, x, y, z, u, grad);
    out.f_x = grad.head(spec.n);
    out.f_y = grad[spec.n];
    out.f_z = grad[spec.n + 1];
    out.d2f.resize(spec.n + 2, spec.n + 2);
    spec.driver_hess(t, x, y, z, u, out.d2f);
    return out;
}

}  // namespace fbsde
