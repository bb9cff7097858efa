#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace featherpoint {

/// Seeded generator with distributions implemented here rather than through
/// <random>'s distribution classes, whose outputs vary between standard
/// libraries. mt19937_64's raw stream is fixed by the standard.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for a named component. Derivation depends only on
    /// (seed, label), so adding a component never shifts another's stream.
    static Rng derive(std::uint64_t seed, std::string_view label);

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    /// Standard Gumbel(0, 1) sample.
    double gumbel();
    std::vector<double> gumbel_vector(std::size_t n);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// FNV-1a, used for label-based sub-seeds.
std::uint64_t hash_label(std::uint64_t seed, std::string_view label);

}  // namespace featherpoint
