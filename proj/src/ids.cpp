#include "llmgate/ids.hpp"

#include <chrono>
#include <cstdio>
#include <random>

namespace llmgate {

namespace {

std::uint64_t random_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace

IdSource::IdSource() : rng_(random_seed()) {}

IdSource::IdSource(std::uint64_t seed, std::optional<std::int64_t> fixed_created)
    : rng_(seed), fixed_created_(fixed_created) {}

std::string IdSource::next(std::string_view prefix) {
  std::uint64_t v;
  {
    std::lock_guard lock(mutex_);
    v = rng_.next();
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(v));
  return std::string(prefix) + hex;
}

std::int64_t IdSource::created() const {
  if (fixed_created_) return *fixed_created_;
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::int64_t IdSource::now_ms() const {
  if (fixed_created_) return *fixed_created_ * 1000;
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace llmgate
