#include "ddlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace ddlab {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// Pelle Evensen's moremur finalizer.
std::uint64_t moremur(std::uint64_t x) {
  x ^= x >> 27;
  x *= 0x3C79AC492BA7B653ULL;
  x ^= x >> 33;
  x *= 0x1C69B3F74AC4AE35ULL;
  x ^= x >> 27;
  return x;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(moremur(seed ^ 0xD1B54A32D192ED03ULL)), counter_(0) {}

std::uint64_t Rng::next_u64() {
  const std::uint64_t n = counter_++;
  std::uint64_t x = moremur(n * kGolden + key_);
  return moremur(x ^ (key_ >> 17) ^ (key_ << 47));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Lemire's multiply-shift; bias is < n / 2^64, irrelevant at our sizes.
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double Rng::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gumbel() { return -std::log(-std::log(uniform_open())); }

Rng Rng::split(std::uint64_t stream) const {
  const std::uint64_t child = moremur(key_ ^ moremur((stream + 1) * kGolden));
  return Rng(moremur(child + 0x632BE59BD9B4E019ULL), 0);
}

}  // namespace ddlab
