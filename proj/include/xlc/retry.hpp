#pragma once

#include <chrono>

namespace xlc {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
  std::chrono::milliseconds max_backoff{8000};
};

// Exponential backoff before retry number `attempt` (1-based count of failed
// attempts so far), jittered uniformly into [d/2, d].
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt);

}  // namespace xlc
