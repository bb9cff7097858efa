#include "featherpoint/rng.hpp"

#include <cmath>

namespace featherpoint {

std::uint64_t hash_label(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 0; i < 8; ++i) {
        h ^= (seed >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
    }
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    // splitmix64 finalizer to spread low-entropy inputs
    h += 0x9e3779b97f4a7c15ULL;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::string_view label) { return Rng(hash_label(seed, label)); }

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) return 0;
    // rejection sampling keeps it unbiased
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return v % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
}

double Rng::gumbel() {
    double u;
    do {
        u = uniform();
    } while (u <= 0.0);
    return -std::log(-std::log(u));
}

std::vector<double> Rng::gumbel_vector(std::size_t n) {
    std::vector<double> g(n);
    for (auto& v : g) v = gumbel();
    return g;
}

}  // namespace featherpoint
