#include "fbsde/benchmarks.hpp"

#include <cmath>
#include <stdexcept>

namespace fbsde {

namespace {

Vec scalar_vec(double v) {
    Vec out(1);
    out[0] = v;
    return out;
}

void zero_hess(std::vector<Mat>& h, int n) {
    for (auto& m : h) m = Mat::Zero(n, n);
}

// Smooth C^2 saturation: identity on [-r, r], flattens beyond. Used by the
// clamped variant of the cubic driver so the desk-scale instance keeps
// bounded derivatives far from the working region.
struct SmoothClamp {
    double r;
    double value(double v) const {
        if (std::abs(v) <= r) return v;
        double s = v < 0 ? -1.0 : 1.0;
        return s * (r + 2.0 * std::tanh((std::abs(v) - r) / 2.0));
    }
    double d1(double v) const {
        if (std::abs(v) <= r) return 1.0;
        double c = std::cosh((std::abs(v) - r) / 2.0);
        return 1.0 / (c * c);
    }
    double d2(double v) const {
        if (std::abs(v) <= r) return 0.0;
        double s = v < 0 ? -1.0 : 1.0;
        double a = (std::abs(v) - r) / 2.0;
        double c = std::cosh(a);
        return s * (-std::tanh(a) / (c * c));
    }
};

// The cubic driver of the built-in example: f(z) = z^3 - z/4, so f(0) = 0,
// f'(0) = -1/4 < 0, f(1) = 3/4 > 0, f(-1) = -3/4 < 0.
double cubic(double z) { return z * z * z - 0.25 * z; }
double cubic_d1(double z) { return 3.0 * z * z - 0.25; }
double cubic_d2(double z) { return 6.0 * z; }

ModelSpec example_spec(bool clamped) {
    ModelSpec s;
    s.name = clamped ? "example-clamped" : "example";
    s.n = 1;
    s.k = 1;
    s.T = 1.0;
    s.x0 = scalar_vec(0.0);
    s.control_set = ControlSet::finite({scalar_vec(0.0), scalar_vec(1.0)});

    s.drift = [](double, CVec, CVec, RVec out) { out.setZero(); };
    s.diffusion = [](double, CVec, CVec u, RVec out) { out[0] = u[0]; };
    s.drift_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.diffusion_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.drift_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 1); };
    s.diffusion_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 1); };

    if (!clamped) {
        s.driver = [](double, CVec, double, double z, CVec) { return cubic(z); };
        s.driver_grad = [](double, CVec, double, double z, CVec, RVec g) {
            g[0] = 0.0;
            g[1] = 0.0;
            g[2] = cubic_d1(z);
        };
        s.driver_hess = [](double, CVec, double, double z, CVec, RMat h) {
            h.setZero();
            h(2, 2) = cubic_d2(z);
        };
    } else {
        SmoothClamp cl{5.0};
        s.driver = [cl](double, CVec, double, double z, CVec) { return cubic(cl.value(z)); };
        s.driver_grad = [cl](double, CVec, double, double z, CVec, RVec g) {
            g[0] = 0.0;
            g[1] = 0.0;
            g[2] = cubic_d1(cl.value(z)) * cl.d1(z);
        };
        s.driver_hess = [cl](double, CVec, double, double z, CVec, RMat h) {
            h.setZero();
            double w = cl.value(z), w1 = cl.d1(z), w2 = cl.d2(z);
            h(2, 2) = cubic_d2(w) * w1 * w1 + cubic_d1(w) * w2;
        };
    }

    s.terminal = [](CVec x) { return x[0]; };
    s.terminal_grad = [](CVec, RVec g) { g[0] = 1.0; };
    s.terminal_hess = [](CVec, RMat h) { h.setZero(); };

    s.has_control_derivatives = true;
    s.drift_ctrl_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.diffusion_ctrl_jac = [](double, CVec, CVec, RMat out) { out(0, 0) = 1.0; };
    s.driver_ctrl_grad = [](double, CVec, double, double, CVec, RVec g) { g.setZero(); };
    return s;
}

void add_vacuous_constraint(ModelSpec& s) {
    s.has_constraint = true;
    s.constraint = [](CVec, double) { return 0.0; };
    s.constraint_grad_x = [](CVec, double, RVec g) { g.setZero(); };
    s.constraint_hess_x = [](CVec, double, RMat h) { h.setZero(); };
    s.constraint_grad_y = [](CVec, double) { return 0.0; };
}

void add_state_constraint(ModelSpec& s, double sign) {
    // E[sign * x(T)] = 0; satisfied by the example's candidate (x(T) is a
    // centred stochastic integral).
    s.has_constraint = true;
    s.constraint = [sign](CVec x, double) { return sign * x[0]; };
    s.constraint_grad_x = [sign](CVec, double, RVec g) { g[0] = sign; };
    s.constraint_hess_x = [](CVec, double, RMat h) { h.setZero(); };
    s.constraint_grad_y = [](CVec, double) { return 0.0; };
}

ModelSpec linear_spec() {
    // b = 0, sigma = 1, f = alpha y + beta z, phi(x) = x. Closed form:
    // y(0) = e^{alpha T} (x0 + beta T).
    const double alpha = 0.1, beta = 0.3;
    ModelSpec s;
    s.name = "linear";
    s.n = 1;
    s.k = 1;
    s.T = 1.0;
    s.x0 = scalar_vec(0.0);
    s.control_set = ControlSet::finite({scalar_vec(0.0), scalar_vec(1.0)});
    s.drift = [](double, CVec, CVec, RVec out) { out.setZero(); };
    s.diffusion = [](double, CVec, CVec, RVec out) { out[0] = 1.0; };
    s.drift_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.diffusion_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.drift_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 1); };
    s.diffusion_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 1); };
    s.driver = [alpha, beta](double, CVec, double y, double z, CVec) {
        return alpha * y + beta * z;
    };
    s.driver_grad = [alpha, beta](double, CVec, double, double, CVec, RVec g) {
        g[0] = 0.0;
        g[1] = alpha;
        g[2] = beta;
    };
    s.driver_hess = [](double, CVec, double, double, CVec, RMat h) { h.setZero(); };
    s.terminal = [](CVec x) { return x[0]; };
    s.terminal_grad = [](CVec, RVec g) { g[0] = 1.0; };
    s.terminal_hess = [](CVec, RMat h) { h.setZero(); };
    s.has_control_derivatives = true;
    s.drift_ctrl_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.diffusion_ctrl_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.driver_ctrl_grad = [](double, CVec, double, double, CVec, RVec g) { g.setZero(); };
    return s;
}

ModelSpec classical_spec() {
    // Driver independent of (y, z): the recursive cost reduces to
    // E[phi(x(T)) + integral of f].
    ModelSpec s;
    s.name = "classical";
    s.n = 1;
    s.k = 1;
    s.T = 1.0;
    s.x0 = scalar_vec(0.3);
    s.control_set = ControlSet::finite({scalar_vec(0.0)});
    s.drift = [](double, CVec x, CVec, RVec out) { out[0] = -0.2 * x[0]; };
    s.diffusion = [](double, CVec, CVec, RVec out) { out[0] = 0.4; };
    s.drift_jac = [](double, CVec, CVec, RMat out) { out(0, 0) = -0.2; };
    s.diffusion_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    s.drift_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 1); };
    s.diffusion_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 1); };
    s.driver = [](double, CVec x, double, double, CVec) { return std::cos(x[0]); };
    s.driver_grad = [](double, CVec x, double, double, CVec, RVec g) {
        g[0] = -std::sin(x[0]);
        g[1] = 0.0;
        g[2] = 0.0;
    };
    s.driver_hess = [](double, CVec x, double, double, CVec, RMat h) {
        h.setZero();
        h(0, 0) = -std::cos(x[0]);
    };
    s.terminal = [](CVec x) { return x[0] * x[0]; };
    s.terminal_grad = [](CVec x, RVec g) { g[0] = 2.0 * x[0]; };
    s.terminal_hess = [](CVec, RMat h) { h(0, 0) = 2.0; };
    return s;
}

ModelSpec quadratic_spec() {
    // Nonlinear instance with every coefficient group active: quadratic
    // drift, state- and control-dependent diffusion with curvature, and a
    // driver coupling x, y, z with a nontrivial Hessian.
    ModelSpec s;
    s.name = "quadratic";
    s.n = 1;
    s.k = 1;
    s.T = 1.0;
    s.x0 = scalar_vec(0.5);
    s.control_set = ControlSet::finite({scalar_vec(0.0), scalar_vec(1.0)});
    s.drift = [](double, CVec x, CVec u, RVec out) {
        out[0] = -0.5 * x[0] + 0.2 * x[0] * x[0] + 0.5 * u[0];
    };
    s.drift_jac = [](double, CVec x, CVec, RMat out) { out(0, 0) = -0.5 + 0.4 * x[0]; };
    s.drift_hess = [](double, CVec, CVec, std::vector<Mat>& h) { h[0](0, 0) = 0.4; };
    s.diffusion = [](double, CVec x, CVec u, RVec out) {
        out[0] = 0.2 + 0.1 * std::sin(x[0]) + 0.4 * u[0];
    };
    s.diffusion_jac = [](double, CVec x, CVec, RMat out) { out(0, 0) = 0.1 * std::cos(x[0]); };
    s.diffusion_hess = [](double, CVec x, CVec, std::vector<Mat>& h) {
        h[0](0, 0) = -0.1 * std::sin(x[0]);
    };
    s.driver = [](double, CVec x, double y, double z, CVec u) {
        return 0.2 * std::sin(x[0]) - 0.3 * y + 0.5 * std::sin(z) + 0.1 * x[0] * z + 0.1 * u[0];
    };
    s.driver_grad = [](double, CVec x, double, double z, CVec, RVec g) {
        g[0] = 0.2 * std::cos(x[0]) + 0.1 * z;
        g[1] = -0.3;
        g[2] = 0.5 * std::cos(z) + 0.1 * x[0];
    };
    s.driver_hess = [](double, CVec x, double, double z, CVec, RMat h) {
        h.setZero();
        h(0, 0) = -0.2 * std::sin(x[0]);
        h(0, 2) = 0.1;
        h(2, 0) = 0.1;
        h(2, 2) = -0.5 * std::sin(z);
    };
    s.terminal = [](CVec x) { return x[0] + 0.3 * x[0] * x[0]; };
    s.terminal_grad = [](CVec x, RVec g) { g[0] = 1.0 + 0.6 * x[0]; };
    s.terminal_hess = [](CVec, RMat h) { h(0, 0) = 0.6; };
    s.has_control_derivatives = true;
    s.drift_ctrl_jac = [](double, CVec, CVec, RMat out) { out(0, 0) = 0.5; };
    s.diffusion_ctrl_jac = [](double, CVec, CVec, RMat out) { out(0, 0) = 0.4; };
    s.driver_ctrl_grad = [](double, CVec, double, double, CVec, RVec g) { g[0] = 0.1; };
    return s;
}

ModelSpec linear2d_spec() {
    // Two-dimensional state with constant coefficient matrices; exercises
    // the matrix assembly paths of the adjoint solvers.
    ModelSpec s;
    s.name = "linear2d";
    s.n = 2;
    s.k = 1;
    s.T = 1.0;
    s.x0 = Vec(2);
    s.x0 << 0.2, -0.1;
    s.control_set = ControlSet::finite({scalar_vec(0.0), scalar_vec(1.0)});
    Mat A(2, 2), B(2, 2), H(2, 2);
    A << -0.3, 0.1, 0.0, -0.2;
    B << 0.1, 0.0, 0.05, 0.1;
    H << 0.4, 0.1, 0.1, 0.2;
    Vec hvec(2), sig0(2), e(2), g(2), w(2);
    hvec << 0.5, 0.2;
    sig0 << 0.3, 0.1;
    e << 0.2, 0.3;
    g << 0.1, -0.2;
    w << 1.0, 0.5;
    s.drift = [A, hvec](double, CVec x, CVec u, RVec out) { out = A * x + hvec * u[0]; };
    s.drift_jac = [A](double, CVec, CVec, RMat out) { out = A; };
    s.drift_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 2); };
    s.diffusion = [B, sig0, e](double, CVec x, CVec u, RVec out) {
        out = sig0 + B * x + e * u[0];
    };
    s.diffusion_jac = [B](double, CVec, CVec, RMat out) { out = B; };
    s.diffusion_hess = [](double, CVec, CVec, std::vector<Mat>& h) { zero_hess(h, 2); };
    s.driver = [g](double, CVec x, double y, double z, CVec) {
        return g.dot(x) - 0.1 * y + 0.2 * z;
    };
    s.driver_grad = [g](double, CVec, double, double, CVec, RVec out) {
        out.head(2) = g;
        out[2] = -0.1;
        out[3] = 0.2;
    };
    s.driver_hess = [](double, CVec, double, double, CVec, RMat h) { h.setZero(); };
    s.terminal = [w, H](CVec x) { return w.dot(x) + 0.5 * x.dot(H * x); };
    s.terminal_grad = [w, H](CVec x, RVec out) { out = w + H * x; };
    s.terminal_hess = [H](CVec, RMat out) { out = H; };
    s.has_control_derivatives = true;
    s.drift_ctrl_jac = [hvec](double, CVec, CVec, RMat out) { out.col(0) = hvec; };
    s.diffusion_ctrl_jac = [e](double, CVec, CVec, RMat out) { out.col(0) = e; };
    s.driver_ctrl_grad = [](double, CVec, double, double, CVec, RVec out) { out.setZero(); };
    return s;
}

ModelSpec wrongderiv_spec() {
    // sigma(t, x, u) = x but sigma_x deliberately reported as 0; the
    // validator must flag it with relative discrepancy ~ 1.
    ModelSpec s = classical_spec();
    s.name = "wrongderiv";
    s.diffusion = [](double, CVec x, CVec, RVec out) { out[0] = x[0]; };
    s.diffusion_jac = [](double, CVec, CVec, RMat out) { out.setZero(); };
    return s;
}

Benchmark wrap(ModelSpec spec, double candidate_u, double spike_u, const std::string& descr) {
    Benchmark b;
    b.candidate = ControlPolicy::constant(scalar_vec(candidate_u));
    b.spike_u = scalar_vec(spike_u);
    b.region = default_region(spec);
    b.description = descr;
    b.spec = std::move(spec);
    return b;
}

}  // namespace

std::vector<std::string> benchmark_names() {
    return {"example",      "example-clamped", "example-box", "example-vacuous",
            "example-xcons", "linear",          "classical",   "quadratic",
            "linear2d",     "wrongderiv"};
}

bool has_benchmark(const std::string& name) {
    for (const auto& n : benchmark_names())
        if (n == name) return true;
    return false;
}

Benchmark make_benchmark(const std::string& name) {
    if (name == "example")
        return wrap(example_spec(false), 0.0, 1.0,
                    "dx = u dW, y = x(T) + int f(z), f(z) = z^3 - z/4, U = {0, 1}");
    if (name == "example-clamped")
        return wrap(example_spec(true), 0.0, 1.0, "example with the driver clamped beyond |z| = 5");
    if (name == "example-box") {
        auto spec = example_spec(false);
        spec.name = "example-box";
        spec.control_set = ControlSet::box(scalar_vec(0.0), scalar_vec(1.0), 0.01);
        return wrap(std::move(spec), 0.0, 1.0, "example with U = [0, 1] gridded at 0.01");
    }
    if (name == "example-vacuous") {
        auto spec = example_spec(false);
        spec.name = "example-vacuous";
        add_vacuous_constraint(spec);
        return wrap(std::move(spec), 0.0, 1.0, "example with the vacuous constraint phi == 0");
    }
    if (name == "example-xcons") {
        auto spec = example_spec(false);
        spec.name = "example-xcons";
        add_state_constraint(spec, 1.0);
        return wrap(std::move(spec), 0.0, 1.0, "example with constraint E[x(T)] = 0");
    }
    if (name == "linear")
        return wrap(linear_spec(), 0.0, 1.0, "b = 0, sigma = 1, f = 0.1 y + 0.3 z, phi = x");
    if (name == "classical")
        return wrap(classical_spec(), 0.0, 0.0, "driver independent of (y, z)");
    if (name == "quadratic")
        return wrap(quadratic_spec(), 0.0, 1.0,
                    "quadratic drift, curved diffusion, z-coupled driver");
    if (name == "linear2d")
        return wrap(linear2d_spec(), 0.0, 1.0, "two-dimensional linear system");
    if (name == "wrongderiv")
        return wrap(wrongderiv_spec(), 0.0, 0.0, "deliberately wrong diffusion Jacobian");
    throw std::invalid_argument("unknown benchmark: " + name);
}

}  // namespace fbsde
