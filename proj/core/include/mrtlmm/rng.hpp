#pragma once

#include <cstdint>
#include <limits>

namespace mrtlmm {

/// SplitMix64: a counter-based 64-bit generator. The state advances by a
/// fixed odd constant and the output is a bijective hash of the counter,
/// so arbitrary substreams can be derived by hashing without overlap
/// concerns at the scales used here.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Derives a substream seed from a master seed and a stream index, so that
/// per-individual (or per-replicate) generators are identical no matter how
/// work is split across threads.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
    SplitMix64 g(master ^ (0x632be59bd9b4e019ULL * (index + 1)));
    return g();
}

} // namespace mrtlmm
