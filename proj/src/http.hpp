#pragma once

// Thin blocking HTTP client used by the embedding and collection modules.
// Keeps cpp-httplib out of the public headers.

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace xlc::detail {

struct HttpResult {
  int status = 0;       // 0 when no response was received
  std::string body;
  std::string error;    // transport error description
};

using Headers = std::vector<std::pair<std::string, std::string>>;

HttpResult http_post_json(const std::string& url, const std::string& body,
                          const Headers& headers, std::chrono::milliseconds timeout);

// True for statuses worth retrying: no response, 408, 429, 5xx.
bool retryable_status(int status);

}  // namespace xlc::detail
