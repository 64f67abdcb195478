#pragma once

// Sentence embeddings for answer strings.
//
// Providers:
//   http        POST {"texts":[...]} -> {"vectors":[[...],...]}; optional bearer
//               token from the XLC_EMBED_TOKEN environment variable.
//   mock        seeded pseudo-random unit vector per text; texts listed in the
//               same synonym group share one vector.
//   cache-only  never fetches; a cache miss is an error.
//
// Cache file (little-endian throughout):
//   "XLCEMB01"
//   record*   'R' key[32] dims:u32 values:f32[dims] crc32:u32   (crc over key..values)
//   footer?   'I' count:u64 (key[32] offset:u64)[count] footer_offset:u64 "XLCIDX01"
// Records are append-only. The footer is rewritten on flush; if it is missing
// or damaged the index is rebuilt by scanning records, and a torn trailing
// record is discarded.

#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "xlc/error.hpp"
#include "xlc/retry.hpp"

namespace xlc {

inline constexpr const char* kEmbedTokenEnv = "XLC_EMBED_TOKEN";

struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dims() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

enum class ProviderKind { http, cache_only, mock };

std::string to_string(ProviderKind kind);
ProviderKind parse_provider_kind(const std::string& name);

struct EmbeddingProviderConfig {
  ProviderKind kind = ProviderKind::mock;
  std::string endpoint;
  int expected_dims = 768;
  int batch_size = 32;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{30000};
  std::uint64_t mock_seed = 0;
  std::vector<std::vector<std::string>> synonyms;  // mock only

  void validate() const;
  // Identifies where vectors come from, for report provenance.
  std::string describe() const;
};

class EmbeddingError : public Error {
 public:
  using Error::Error;
};

// Hex SHA-256 of the NFC-normalized UTF-8 bytes.
std::string cache_key(std::string_view text);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // One vector per text, same order.
  virtual std::vector<std::vector<float>> fetch(const std::vector<std::string>& texts) = 0;
};

class MockProvider final : public EmbeddingProvider {
 public:
  MockProvider(int dims, std::uint64_t seed,
               const std::vector<std::vector<std::string>>& synonyms = {});
  std::vector<std::vector<float>> fetch(const std::vector<std::string>& texts) override;
  std::vector<float> vector_for(const std::string& text) const;

 private:
  int dims_;
  std::uint64_t seed_;
  std::map<std::string, std::string> canonical_;
};

class HttpProvider final : public EmbeddingProvider {
 public:
  HttpProvider(std::string endpoint, RetryPolicy retry, std::chrono::milliseconds timeout,
               std::string bearer_token = {});
  std::vector<std::vector<float>> fetch(const std::vector<std::string>& texts) override;

 private:
  std::string endpoint_;
  RetryPolicy retry_;
  std::chrono::milliseconds timeout_;
  std::string token_;
};

// nullptr for cache-only. The http provider reads its token from XLC_EMBED_TOKEN.
std::unique_ptr<EmbeddingProvider> make_provider(const EmbeddingProviderConfig& cfg);

// Content-addressed persistent vector store. Many concurrent readers, writes
// serialized; one writing process at a time.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path path);
  ~EmbeddingCache();
  EmbeddingCache(const EmbeddingCache&) = delete;
  EmbeddingCache& operator=(const EmbeddingCache&) = delete;

  std::optional<EmbeddingVector> get(const std::string& key) const;
  bool contains(const std::string& key) const;
  // Appends the record immediately. Existing keys are left untouched.
  void put(const std::string& key, const EmbeddingVector& v);
  // Writes the index footer and syncs.
  void flush();

  std::size_t size() const;
  std::vector<std::string> keys() const;
  const std::filesystem::path& path() const noexcept { return path_; }
  // True if opening had to fall back to a full record scan.
  bool rebuilt_on_open() const noexcept { return rebuilt_; }

 private:
  void open_or_create();
  bool read_footer(std::uint64_t file_size);
  void scan_records(std::uint64_t file_size);

  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::uint64_t> index_;  // hex key -> record offset
  std::vector<std::string> order_;                        // insertion order
  std::uint64_t data_end_ = 0;
  bool footer_on_disk_ = false;
  bool dirty_ = false;
  bool rebuilt_ = false;
};

struct EmbedStats {
  std::size_t provider_calls = 0;
  std::size_t texts_fetched = 0;
  std::size_t cache_hits = 0;
};

// embed_batch front end: cache first, provider for misses, identical keys
// never fetched twice concurrently.
class Embedder {
 public:
  Embedder(EmbeddingProviderConfig cfg, EmbeddingCache& cache,
           std::unique_ptr<EmbeddingProvider> provider);

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts);

  const EmbeddingProviderConfig& config() const noexcept { return cfg_; }
  EmbedStats stats() const;

 private:
  std::vector<std::vector<float>> fetch_checked(const std::vector<std::string>& texts);

  EmbeddingProviderConfig cfg_;
  EmbeddingCache& cache_;
  std::unique_ptr<EmbeddingProvider> provider_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_future<EmbeddingVector>> in_flight_;
  EmbedStats stats_;
};

}  // namespace xlc
