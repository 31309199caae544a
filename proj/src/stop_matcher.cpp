#include <algorithm>

#include "llmgate/backend.hpp"

namespace llmgate {

StopMatcher::StopMatcher(std::vector<std::string> stops) {
  for (auto& s : stops) {
    if (!s.empty()) stops_.push_back(std::move(s));
  }
}

StopMatcher::Step StopMatcher::feed(std::string_view text) {
  pending_.append(text);
  Step step;
  std::size_t first = std::string::npos;
  for (const auto& stop : stops_) {
    first = std::min(first, pending_.find(stop));
  }
  if (first != std::string::npos) {
    step.emit = pending_.substr(0, first);
    step.stopped = true;
    pending_.clear();
    return step;
  }
  // Longest suffix of pending_ that is a proper prefix of some stop sequence.
  std::size_t hold = 0;
  for (const auto& stop : stops_) {
    const std::size_t max_len = std::min(stop.size() - 1, pending_.size());
    for (std::size_t len = max_len; len > hold; --len) {
      if (pending_.compare(pending_.size() - len, len, stop, 0, len) == 0) {
        hold = len;
        break;
      }
    }
  }
  step.emit = pending_.substr(0, pending_.size() - hold);
  pending_.erase(0, pending_.size() - hold);
  return step;
}

std::string StopMatcher::flush() {
  std::string out;
  out.swap(pending_);
  return out;
}

}  // namespace llmgate
