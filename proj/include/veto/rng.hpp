#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace veto {

// Deterministic random stream addressed by (seed, name). Every source of
// randomness in the project (data order, parameter init, expert sampling)
// runs on its own named stream, so consuming one stream cannot perturb
// another. Draws are derived from raw mt19937_64 words rather than
// std::*_distribution so results are identical across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view name);

  std::uint64_t next_u64();
  double uniform();                            // [0, 1), 53-bit resolution
  double uniform(double lo, double hi);
  double normal();                             // standard normal (Box-Muller)
  double normal(double mean, double stddev);
  std::int64_t uniform_int(std::int64_t n);    // [0, n), unbiased

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

  // Engine state as text, for exact checkpoint resume.
  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace veto
