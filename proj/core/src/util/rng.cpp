#include "mapfdt/util/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace mapfdt {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t Rng::uniform_below(uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::uniform_below: n must be > 0");
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (lo > hi) throw std::invalid_argument("Rng::uniform_int: lo > hi");
  return lo + static_cast<int64_t>(uniform_below(static_cast<uint64_t>(hi - lo) + 1));
}

double Rng::normal() {
  double u1 = uniform01();
  double u2 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Rng Rng::fork(uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ull)));
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << gen_;
  return os.str();
}

Rng Rng::deserialize(const std::string& s) {
  std::istringstream is(s);
  uint64_t seed = 0;
  is >> seed;
  Rng r(seed);
  is >> r.gen_;
  if (!is) throw std::runtime_error("Rng::deserialize: malformed state string");
  return r;
}

bool Rng::operator==(const Rng& other) const {
  return seed_ == other.seed_ && gen_ == other.gen_;
}

}  // namespace mapfdt
