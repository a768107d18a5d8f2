#include "fbsde/trajectory.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace fbsde {

namespace {

constexpr char kMagic[4] = {'F', 'B', 'T', 'E'};
constexpr std::uint32_t kVersion = 1;

void format_double(char* buf, std::size_t n, double v) { std::snprintf(buf, n, "%.17g", v); }

template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void write_csv(const TrajectoryEnsemble& ens, std::ostream& os) {
    os << "path,node,time";
    for (int c = 0; c < ens.dim(); ++c) os << ",c" << c;
    os << "\n";
    char buf[32];
    for (std::int64_t p = 0; p < ens.N; ++p) {
        for (std::int64_t i = 0; i < ens.grid.nodes(); ++i) {
            format_double(buf, sizeof(buf), ens.grid.time(i));
            os << p << ',' << i << ',' << buf;
            for (int c = 0; c < ens.dim(); ++c) {
                format_double(buf, sizeof(buf), ens.value(p, i, c));
                os << ',' << buf;
            }
            os << "\n";
        }
    }
}

void write_csv_file(const TrajectoryEnsemble& ens, const std::string& path) {
    std::ofstream os(path, std::ios::binary);  // binary: no newline translation
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_csv(ens, os);
    if (!os) throw std::runtime_error("write failed: " + path);
}

void write_binary_file(const TrajectoryEnsemble& ens, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put(os, kVersion);
    put(os, static_cast<std::uint64_t>(ens.N));
    put(os, static_cast<std::uint32_t>(ens.grid.nodes()));
    put(os, static_cast<std::uint32_t>(ens.dim()));
    put(os, ens.seed);
    put(os, ens.grid.T);
    auto len = static_cast<std::uint32_t>(ens.label.size());
    put(os, len);
    os.write(ens.label.data(), len);
    for (const auto& comp : ens.components)
        os.write(reinterpret_cast<const char*>(comp.data()),
                 static_cast<std::streamsize>(sizeof(double)) * comp.size());
    if (!os) throw std::runtime_error("write failed: " + path);
}

TrajectoryEnsemble read_binary_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a trajectory dump: " + path);
    std::uint32_t version = 0;
    get(is, version);
    if (version != kVersion) throw std::runtime_error("unsupported trajectory dump version");
    std::uint64_t n = 0;
    std::uint32_t nodes = 0, dim = 0;
    std::uint64_t seed = 0;
    double horizon = 0.0;
    get(is, n);
    get(is, nodes);
    get(is, dim);
    get(is, seed);
    get(is, horizon);
    std::uint32_t len = 0;
    get(is, len);
    std::string label(len, '\0');
    is.read(label.data(), len);
    if (!is || nodes < 2) throw std::runtime_error("corrupt trajectory dump: " + path);
    TrajectoryEnsemble ens(label, TimeGrid(horizon, static_cast<std::int64_t>(nodes) - 1),
                           static_cast<std::int64_t>(n), static_cast<int>(dim), seed);
    for (auto& comp : ens.components) {
        is.read(reinterpret_cast<char*>(comp.data()),
                static_cast<std::streamsize>(sizeof(double)) * comp.size());
    }
    if (!is) throw std::runtime_error("corrupt trajectory dump: " + path);
    return ens;
}

}  // namespace fbsde
