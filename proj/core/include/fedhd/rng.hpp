#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fedhd/matrix.hpp"

namespace fedhd {

// Splittable counter-seeded random stream. The same (master_seed, stream_id)
// pair yields the identical draw sequence on every platform and under any
// thread schedule, so per-slide / per-epoch streams can be derived up front
// and consumed independently. xoshiro256++ core, splitmix64 seeding; all
// distributions are generated from raw 64-bit draws rather than
// std::<distribution> so the sequences are implementation-independent.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n); n > 0.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller; consumes two u64 draws per call.
  double normal();
  double normal(double mean, double stddev);

  Vector normal_vector(Eigen::Index n);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Derives an independent child stream; deterministic in (this stream's
  // identity, salt).
  RngStream fork(std::uint64_t salt) const;

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

 private:
  std::uint64_t state_[4];
  std::uint64_t master_seed_;
  std::uint64_t stream_id_;
};

RngStream spawn_stream(std::uint64_t master_seed, std::uint64_t stream_id);

// Stateless mixing of two words into a well-scrambled seed.
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

// FNV-1a, for deriving stable per-slide stream ids from slide_id strings.
std::uint64_t hash64(std::string_view s);

}  // namespace fedhd
