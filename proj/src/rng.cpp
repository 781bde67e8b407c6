#include "wasserpath/rng.hpp"

#include <cmath>
#include <stdexcept>

#include "wasserpath/mathx.hpp"

namespace wasserpath {

namespace {
constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mul_hi_lo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}
}  // namespace

std::array<std::uint32_t, 4> CounterRng::philox4x32(std::array<std::uint32_t, 4> c,
                                                    std::array<std::uint32_t, 2> k) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mul_hi_lo(kPhiloxM0, c[0], hi0, lo0);
        mul_hi_lo(kPhiloxM1, c[2], hi1, lo1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
        k[0] += kPhiloxW0;
        k[1] += kPhiloxW1;
    }
    return c;
}

std::uint64_t CounterRng::raw64(std::uint32_t stream, std::uint64_t path,
                                std::uint64_t pos) const {
    // One block yields two 64-bit words; position selects the half.
    std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(pos >> 1),
        static_cast<std::uint32_t>(pos >> 33),
        static_cast<std::uint32_t>(path),
        static_cast<std::uint32_t>((path >> 32) & 0xFFFFu) | (stream << 16),
    };
    std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                        static_cast<std::uint32_t>(seed_ >> 32)};
    auto out = philox4x32(ctr, key);
    if (pos & 1u)
        return (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double CounterRng::uniform(std::uint32_t stream, std::uint64_t path, std::uint64_t pos) const {
    std::uint64_t r = raw64(stream, path, pos);
    return static_cast<double>(r >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

double CounterRng::normal(std::uint32_t stream, std::uint64_t path, std::uint64_t pos) const {
    return normal_cdf_inv(uniform(stream, path, pos));
}

void CounterRng::normal_fill(std::uint32_t stream, std::uint64_t path, std::uint64_t pos0,
                             std::size_t n, double* out) const {
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                              static_cast<std::uint32_t>(seed_ >> 32)};
    const std::uint32_t c2 = static_cast<std::uint32_t>(path);
    const std::uint32_t c3 =
        static_cast<std::uint32_t>((path >> 32) & 0xFFFFu) | (stream << 16);
    std::size_t i = 0;
    while (i < n) {
        const std::uint64_t pos = pos0 + i;
        const auto blk = philox4x32({static_cast<std::uint32_t>(pos >> 1),
                                     static_cast<std::uint32_t>(pos >> 33), c2, c3},
                                    key);
        const std::uint64_t lo = (static_cast<std::uint64_t>(blk[0]) << 32) | blk[1];
        const std::uint64_t hi = (static_cast<std::uint64_t>(blk[2]) << 32) | blk[3];
        if ((pos & 1u) == 0) {
            out[i] = normal_cdf_inv(static_cast<double>(lo >> 11) * 0x1.0p-53 + 0x1.0p-54);
            ++i;
            if (i == n) break;
        }
        out[i] = normal_cdf_inv(static_cast<double>(hi >> 11) * 0x1.0p-53 + 0x1.0p-54);
        ++i;
    }
}

std::vector<double> refine_increments(const CounterRng& rng, std::uint32_t stream,
                                      std::uint64_t path_index, const std::vector<double>& parent,
                                      double parent_step, int child_level) {
    const std::size_t n = parent.size();
    std::vector<double> child(n * 2);
    // Draws parked in the upper half of child; the write front (2k+1) stays
    // behind the read position (n+k) until each draw has been consumed.
    rng.normal_fill(stream + static_cast<std::uint32_t>(child_level), path_index, 0, n,
                    child.data() + n);
    const double half_sd = 0.5 * std::sqrt(parent_step);
    for (std::size_t k = 0; k < n; ++k) {
        const double xi = child[n + k];
        const double left = 0.5 * parent[k] + half_sd * xi;
        child[2 * k] = left;
        child[2 * k + 1] = parent[k] - left;
    }
    return child;
}

std::vector<double> brownian_increments(const CounterRng& rng, std::uint64_t path_index,
                                        std::uint64_t base_n, int level, double T) {
    if (base_n == 0) throw std::invalid_argument("brownian_increments: base_n must be positive");
    if (level < 0 || level > 31) throw std::invalid_argument("brownian_increments: bad level");
    std::vector<double> inc(base_n);
    const double sd = std::sqrt(T / static_cast<double>(base_n));
    rng.normal_fill(kStreamBrownianBase, path_index, 0, base_n, inc.data());
    for (auto& v : inc) v *= sd;
    double step = T / static_cast<double>(base_n);
    for (int l = 1; l <= level; ++l) {
        inc = refine_increments(rng, kStreamBrownianBase, path_index, inc, step, l);
        step *= 0.5;
    }
    return inc;
}

}  // namespace wasserpath
