#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "fbsdep/pathsim/simulate.hpp"

namespace fbsdep::pathsim {

/// CSV: path,step,time,x1..xn,u1..uk,jump,valid. The control column of the
/// terminal node is empty; `jump` is the number of jumps in (t_{k-1}, t_k].
inline void write_csv(std::ostream& os, const PathBatch& pb) {
    os << "path,step,time";
    for (int j = 0; j < pb.n; ++j) os << ",x" << j + 1;
    for (int j = 0; j < pb.kdim; ++j) os << ",u" << j + 1;
    os << ",jump,valid\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    };
    for (std::size_t i = 0; i < pb.M; ++i) {
        for (int k = 0; k <= pb.grid.N; ++k) {
            os << i << ',' << k << ',';
            num(pb.grid.node(k));
            for (int j = 0; j < pb.n; ++j) {
                os << ',';
                num(pb.x(k, i, j));
            }
            for (int j = 0; j < pb.kdim; ++j) {
                os << ',';
                if (k < pb.grid.N) num(pb.u(k, i, j));
            }
            int jumps = 0;
            if (k > 0)
                for (int m = 0; m < pb.marks; ++m) jumps += pb.count(k - 1, i, m);
            os << ',' << jumps << ',' << int(pb.valid[i]) << '\n';
        }
    }
}

inline constexpr char binary_magic[8] = {'F', 'B', 'S', 'D', 'P', 'A', 'T', 'H'};
inline constexpr std::uint32_t binary_version = 1;

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
    static_assert(std::endian::native == std::endian::little, "binary export assumes a little-endian host");
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("truncated path file");
    return v;
}

}  // namespace detail

/// Binary layout (little-endian): magic[8], u32 version, u32 n, u32 kdim,
/// u32 marks, u32 N, u64 M, f64 t0, f64 T, then X, U, dW as f64 arrays in
/// node-major order, counts as u16, valid as u8, failure_step as i32.
inline void write_binary(std::ostream& os, const PathBatch& pb) {
    os.write(binary_magic, sizeof binary_magic);
    detail::put<std::uint32_t>(os, binary_version);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(pb.n));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(pb.kdim));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(pb.marks));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(pb.grid.N));
    detail::put<std::uint64_t>(os, pb.M);
    detail::put<double>(os, pb.grid.t0);
    detail::put<double>(os, pb.grid.T);
    auto arr = [&](const auto& v) {
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(v[0])));
    };
    arr(pb.X);
    arr(pb.U);
    arr(pb.dW);
    arr(pb.counts);
    arr(pb.valid);
    arr(pb.failure_step);
}

/// Reads a batch written by write_binary. The jump ledger is not stored.
inline PathBatch read_binary(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, binary_magic, sizeof magic) != 0) throw std::runtime_error("not a path file");
    if (detail::get<std::uint32_t>(is) != binary_version) throw std::runtime_error("unsupported path file version");
    PathBatch pb;
    pb.n = static_cast<int>(detail::get<std::uint32_t>(is));
    pb.kdim = static_cast<int>(detail::get<std::uint32_t>(is));
    pb.marks = static_cast<int>(detail::get<std::uint32_t>(is));
    const int N = static_cast<int>(detail::get<std::uint32_t>(is));
    pb.M = detail::get<std::uint64_t>(is);
    const double t0 = detail::get<double>(is), T = detail::get<double>(is);
    pb.grid = TimeGrid(t0, T, N);
    auto arr = [&](auto& v, std::size_t count) {
        v.resize(count);
        is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(v[0])));
        if (!is) throw std::runtime_error("truncated path file");
    };
    const std::size_t nodes = static_cast<std::size_t>(N) + 1, steps = static_cast<std::size_t>(N);
    arr(pb.X, nodes * pb.M * pb.n);
    arr(pb.U, steps * pb.M * pb.kdim);
    arr(pb.dW, steps * pb.M);
    arr(pb.counts, steps * pb.M * pb.marks);
    arr(pb.valid, pb.M);
    arr(pb.failure_step, pb.M);
    return pb;
}

}  // namespace fbsdep::pathsim
