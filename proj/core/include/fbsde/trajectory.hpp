#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fbsde/grid.hpp"

namespace fbsde {

// Per-path, per-node values of one process (state, adjoint, BSDE component).
// Component c is an N x (M+1) matrix whose column i holds the value at node
// t_i across paths. Values at node i are produced from increments with index
// < i only; ensembles are treated as immutable once filled.
struct TrajectoryEnsemble {
    std::string label;
    TimeGrid grid;
    std::int64_t N = 0;
    std::uint64_t seed = 0;
    std::vector<Eigen::MatrixXd> components;

    TrajectoryEnsemble() = default;
    TrajectoryEnsemble(std::string lbl, const TimeGrid& g, std::int64_t paths, int dim,
                       std::uint64_t seed_ = 0)
        : label(std::move(lbl)), grid(g), N(paths), seed(seed_) {
        components.assign(static_cast<std::size_t>(dim), Eigen::MatrixXd::Zero(N, g.nodes()));
    }

    int dim() const { return static_cast<int>(components.size()); }
    double value(std::int64_t path, std::int64_t node, int c = 0) const {
        return components[static_cast<std::size_t>(c)](path, node);
    }
    double& value(std::int64_t path, std::int64_t node, int c = 0) {
        return components[static_cast<std::size_t>(c)](path, node);
    }
    // Column view across paths at a node.
    Eigen::MatrixXd::ConstColXpr node_values(std::int64_t node, int c = 0) const {
        return components[static_cast<std::size_t>(c)].col(node);
    }
};

// CSV columns: path,node,time,c0,...,c{dim-1}. Doubles are written with 17
// significant digits so the round trip is lossless.
void write_csv(const TrajectoryEnsemble& ens, std::ostream& os);
void write_csv_file(const TrajectoryEnsemble& ens, const std::string& path);

// Compact binary dump. Header: magic "FBTE", version u32, N u64, nodes u32,
// dim u32, seed u64, T double, label (u32 length + bytes); then each
// component's doubles in column-major order.
void write_binary_file(const TrajectoryEnsemble& ens, const std::string& path);
TrajectoryEnsemble read_binary_file(const std::string& path);

}  // namespace fbsde
