#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crg {

/// Deterministic 64-bit generator (splitmix64 core). All randomness in the
/// project flows through named streams derived from a master seed, so runs
/// reproduce bit-identically regardless of threading or platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Derive an independent stream for a purpose tag, e.g. "init", "shuffle".
    static Rng stream(std::uint64_t seed, const std::string& tag);

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (no cached spare; state is one word).
    double normal();

    /// Uniform integer in [0, n). n must be > 0.
    int uniform_int(int n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

  private:
    std::uint64_t state_;
};

/// FNV-1a over bytes; also used for grammar/config hashing.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace crg
