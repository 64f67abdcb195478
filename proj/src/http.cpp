#include "http.hpp"

#include <algorithm>
#include <random>

#include <httplib.h>

#include "xlc/error.hpp"
#include "xlc/retry.hpp"

namespace xlc {

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  double delay = static_cast<double>(policy.initial_backoff.count());
  for (int i = 1; i < attempt; ++i) delay *= 2.0;
  delay = std::min(delay, static_cast<double>(policy.max_backoff.count()));
  std::uniform_real_distribution<double> jitter(0.5, 1.0);
  return std::chrono::milliseconds(static_cast<long long>(delay * jitter(rng)));
}

namespace detail {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error("invalid URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpResult http_post_json(const std::string& url, const std::string& body,
                          const Headers& headers, std::chrono::milliseconds timeout) {
  const auto parsed = split_url(url);
  httplib::Client client(parsed.origin);
  if (!client.is_valid()) throw Error("unsupported URL: " + url);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(parsed.path, h, body, "application/json");
  if (!res) return {0, {}, httplib::to_string(res.error())};
  return {res->status, res->body, {}};
}

bool retryable_status(int status) {
  return status == 0 || status == 408 || status == 429 || status >= 500;
}

}  // namespace detail
}  // namespace xlc
