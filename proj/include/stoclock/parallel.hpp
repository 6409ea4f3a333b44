#pragma once

// Deterministic worker pool helpers and per-path random streams.

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace stoclock {

/// Number of workers used when a caller passes threads == 0.
unsigned default_threads();

/// Runs body(chunk, begin, end) over [0, n) split into fixed-size chunks.
/// The chunking depends only on n and chunk_size, never on the thread count,
/// so per-chunk partial results can be reduced in chunk order.
void parallel_chunks(std::size_t n, std::size_t chunk_size, unsigned threads,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk_size) {
    return (n + chunk_size - 1) / chunk_size;
}

/// Independent stream for (seed, stream tag, path index).
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t path) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream),
                          static_cast<std::uint32_t>(stream >> 32),
                          static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)};
        engine_.seed(seq);
    }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

private:
    boost::random::mt19937_64 engine_;
    boost::random::normal_distribution<double> normal_;
    boost::random::uniform_01<double> uniform_;
};

/// Stream tags keep different consumers of one seed apart.
namespace streams {
inline constexpr std::uint64_t ou_path = 1;
inline constexpr std::uint64_t calibration_pilot = 2;
inline constexpr std::uint64_t calibration_main = 3;
inline constexpr std::uint64_t laplace = 4;
inline constexpr std::uint64_t hitting = 5;
inline constexpr std::uint64_t strategy = 6;
inline constexpr std::uint64_t novikov = 7;
}  // namespace streams

}  // namespace stoclock
