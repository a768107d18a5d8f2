#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
// View types used in coefficient signatures so hot loops can pass matrix
// columns and mapped buffers without copying.
using CVec = Eigen::Ref<const Eigen::VectorXd>;
using RVec = Eigen::Ref<Eigen::VectorXd>;
using RMat = Eigen::Ref<Eigen::MatrixXd>;

// Replace the base control by the constant u on [s, s+eps); left-closed, so a
// node at exactly s already sees u. Both endpoints must sit on grid nodes of
// whatever grid the policy is evaluated on.
struct SpikeConfig {
    double s = 0.0;
    double eps = 0.0;
    Vec u;

    bool contains(double t) const { return eps > 0.0 && t >= s && t < s + eps; }
};

// Set of admissible control values: either a finite list of points or a box
// with a per-axis grid resolution used when the set has to be enumerated.
struct ControlSet {
    enum class Kind { finite, box };
    Kind kind = Kind::finite;
    std::vector<Vec> points;  // finite
    Vec lo, hi;               // box
    double resolution = 0.01;

    static ControlSet finite(std::vector<Vec> pts) {
        ControlSet s;
        s.kind = Kind::finite;
        s.points = std::move(pts);
        return s;
    }
    static ControlSet box(Vec lo_, Vec hi_, double res = 0.01) {
        ControlSet s;
        s.kind = Kind::box;
        s.lo = std::move(lo_);
        s.hi = std::move(hi_);
        s.resolution = res;
        return s;
    }

    bool contains(const Vec& u, double tol = 1e-12) const;
    // Finite sets are returned as-is; boxes are gridded at `resolution`.
    std::vector<Vec> enumerate() const;
};

// Open-loop control: constant, a deterministic function of time, or a spike
// modification of another policy.
class ControlPolicy {
  public:
    ControlPolicy() = default;  // empty; must be assigned before evaluation

    static ControlPolicy constant(Vec u);
    static ControlPolicy from_function(int k, std::function<Vec(double)> fn);
    static ControlPolicy spiked(ControlPolicy base, SpikeConfig spike);

    Vec operator()(double t) const;
    int control_dim() const { return k_; }
    bool has_spike() const { return spike_.has_value(); }
    const SpikeConfig& spike() const { return *spike_; }
    const ControlPolicy& base() const { return *base_; }

  private:
    int k_ = 0;
    std::optional<Vec> const_u_;
    std::function<Vec(double)> fn_;
    std::shared_ptr<const ControlPolicy> base_;
    std::optional<SpikeConfig> spike_;
};

// Control system description. All coefficients are evaluable functions with
// their first and second x-derivatives supplied by the author of the spec;
// validate_derivatives cross-checks them against finite differences before a
// spec is trusted by the solvers. Scalar Brownian motion and scalar BSDE
// (d = m = 1); the state dimension n and control dimension k are free.
struct ModelSpec {
    std::string name;
    int n = 1;  // state dimension
    int k = 1;  // control dimension
    double T = 1.0;
    Vec x0;
    ControlSet control_set;

    // Forward coefficients. Writer style so hot loops can reuse buffers.
    std::function<void(double, CVec, CVec, RVec)> drift;          // -> R^n
    std::function<void(double, CVec, CVec, RVec)> diffusion;      // -> R^n
    std::function<void(double, CVec, CVec, RMat)> drift_jac;      // -> R^{n x n}
    std::function<void(double, CVec, CVec, RMat)> diffusion_jac;  // -> R^{n x n}
    // Per-component Hessians, out[i] = Hessian of component i (n x n).
    std::function<void(double, CVec, CVec, std::vector<Mat>&)> drift_hess;
    std::function<void(double, CVec, CVec, std::vector<Mat>&)> diffusion_hess;

    // BSDE driver f(t, x, y, z, u), its gradient in (x, y, z) (length n+2,
    // layout [f_x..., f_y, f_z]) and its Hessian in (x, y, z).
    std::function<double(double, CVec, double, double, CVec)> driver;
    std::function<void(double, CVec, double, double, CVec, RVec)> driver_grad;
    std::function<void(double, CVec, double, double, CVec, RMat)> driver_hess;

    std::function<double(CVec)> terminal;          // phi
    std::function<void(CVec, RVec)> terminal_grad;  // phi_x
    std::function<void(CVec, RMat)> terminal_hess;  // phi_xx

    // Optional expectation constraint E[constraint(x(T), y(0))] = 0.
    bool has_constraint = false;
    std::function<double(CVec, double)> constraint;
    std::function<void(CVec, double, RVec)> constraint_grad_x;
    std::function<void(CVec, double, RMat)> constraint_hess_x;
    std::function<double(CVec, double)> constraint_grad_y;

    // Optional u-derivatives (needed only by the convex-domain corollary).
    bool has_control_derivatives = false;
    std::function<void(double, CVec, CVec, RMat)> drift_ctrl_jac;      // n x k
    std::function<void(double, CVec, CVec, RMat)> diffusion_ctrl_jac;  // n x k
    std::function<void(double, CVec, double, double, CVec, RVec)> driver_ctrl_grad;

    void check_dims(const Vec& x, const Vec& u) const {
        if (x.size() != n) throw std::invalid_argument(name + ": state dimension mismatch");
        if (u.size() != k) throw std::invalid_argument(name + ": control dimension mismatch");
    }
};

// All coefficients of a spec evaluated at one point, following the shorthand
// b(t), sigma_x(t), ... used along a reference trajectory.
struct CoeffBundle {
    Vec b, sigma;          // n
    Mat b_x, sigma_x;      // n x n
    std::vector<Mat> b_xx, sigma_xx;  // n of n x n
    bool has_driver = false;
    double f = 0.0;
    Vec f_x;               // n
    double f_y = 0.0, f_z = 0.0;
    Mat d2f;               // (n+2) x (n+2)
    double f_zz() const { return d2f(d2f.rows() - 1, d2f.cols() - 1); }
};

CoeffBundle eval_coeffs(const ModelSpec& spec, double t, const Vec& x, const Vec& u);
CoeffBundle eval_coeffs(const ModelSpec& spec, double t, const Vec& x, double y, double z,
                        const Vec& u);

}  // namespace fbsde
