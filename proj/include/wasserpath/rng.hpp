#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace wasserpath {

// Counter-based generator: every variate is a pure function of
// (seed, stream, path_index, position), so parallel workers and reruns
// agree bit for bit and refinements never perturb coarser draws.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Uniform on the open interval (0,1); 53-bit resolution.
    double uniform(std::uint32_t stream, std::uint64_t path, std::uint64_t pos) const;
    double normal(std::uint32_t stream, std::uint64_t path, std::uint64_t pos) const;

    // out[i] = normal(stream, path, pos0 + i), sharing each cipher block
    // between the two positions it covers.
    void normal_fill(std::uint32_t stream, std::uint64_t path, std::uint64_t pos0, std::size_t n,
                     double* out) const;

    static std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                                   std::array<std::uint32_t, 2> key);

  private:
    std::uint64_t raw64(std::uint32_t stream, std::uint64_t path, std::uint64_t pos) const;
    std::uint64_t seed_;
};

// Stream ids. Refinement level l of the Brownian lattice draws from
// stream kStreamBrownianBase + l; other modules use the named streams.
inline constexpr std::uint32_t kStreamBrownianBase = 0;    // levels 0..31
inline constexpr std::uint32_t kStreamBridgeMaxBase = 32;  // + level, uniforms
inline constexpr std::uint32_t kStreamFill = 64;
inline constexpr std::uint32_t kStreamBetaRefine = 65;  // + child level, 66..71
inline constexpr std::uint32_t kStreamGEstimate = 72;
inline constexpr std::uint32_t kStreamEndpointDraw = 73;
inline constexpr std::uint32_t kStreamScratch = 96;

// Dyadic Brownian increment lattice on [0, T]: level l carries
// base_n * 2^l increments of step T / (base_n * 2^l). Level 0 is drawn
// directly; level l+1 splits each parent by a midpoint bridge, so the two
// children sum to their parent and every level is a marginally exact
// Brownian increment family of one underlying path.
std::vector<double> brownian_increments(const CounterRng& rng, std::uint64_t path_index,
                                        std::uint64_t base_n, int level, double T);

// One refinement step: children[2k] + children[2k+1] == parent[k].
std::vector<double> refine_increments(const CounterRng& rng, std::uint32_t stream,
                                      std::uint64_t path_index, const std::vector<double>& parent,
                                      double parent_step, int child_level);

}  // namespace wasserpath
