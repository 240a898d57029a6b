#ifndef OSR_RNG_HPP
#define OSR_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace osr {

// Deterministic random source used everywhere in the library.
//
// All sampling is built directly on the (fully specified) mt19937_64 stream,
// never on std:: distributions, whose output is implementation-defined.
// The same seed therefore replays bit-exactly on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform integer in [0, n) by rejection sampling.
    std::uint64_t below(std::uint64_t n);

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal();

    // Fisher-Yates using below().
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives a component seed from the global experiment seed: the component
// name is hashed with FNV-1a(64) and mixed with the seed through splitmix64.
// Components drawing from independently derived seeds are independently
// replayable.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view component);

}  // namespace osr

#endif
