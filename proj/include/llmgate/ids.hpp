#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "llmgate/backend.hpp"

namespace llmgate {

/// Source of volatile identifiers and timestamps. Seeded instances produce a
/// reproducible id sequence so wire fixtures can pin them.
class IdSource {
 public:
  IdSource();
  explicit IdSource(std::uint64_t seed, std::optional<std::int64_t> fixed_created = std::nullopt);

  /// prefix + 16 lowercase hex digits.
  std::string next(std::string_view prefix);
  /// Unix seconds, or the fixed value.
  std::int64_t created() const;
  /// Unix milliseconds, or fixed_created * 1000.
  std::int64_t now_ms() const;

 private:
  std::mutex mutex_;
  SplitMix64 rng_;
  std::optional<std::int64_t> fixed_created_;
};

}  // namespace llmgate
