#include "xlc/embedding.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <random>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "http.hpp"
#include "xlc/text.hpp"

namespace xlc {

std::string to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::http: return "http";
    case ProviderKind::cache_only: return "cache-only";
    case ProviderKind::mock: return "mock";
  }
  return "unknown";
}

ProviderKind parse_provider_kind(const std::string& name) {
  if (name == "http") return ProviderKind::http;
  if (name == "cache-only") return ProviderKind::cache_only;
  if (name == "mock") return ProviderKind::mock;
  throw Error("unknown embedding provider kind \"" + name + "\"");
}

void EmbeddingProviderConfig::validate() const {
  if (expected_dims < 1) throw Error("embedding: expected_dims must be >= 1");
  if (batch_size < 1) throw Error("embedding: batch_size must be >= 1");
  if (retry.max_attempts < 1) throw Error("embedding: max attempts must be >= 1");
  if (kind == ProviderKind::http && endpoint.empty()) {
    throw Error("embedding: http provider needs an endpoint URL");
  }
}

std::string EmbeddingProviderConfig::describe() const {
  switch (kind) {
    case ProviderKind::http: return endpoint;
    case ProviderKind::cache_only: return "cache-only";
    case ProviderKind::mock:
      return "mock:dims=" + std::to_string(expected_dims) +
             ",seed=" + std::to_string(mock_seed);
  }
  return {};
}

std::string cache_key(std::string_view text) { return sha256_hex(nfc(text)); }

// ---------------------------------------------------------------------------
// Providers

MockProvider::MockProvider(int dims, std::uint64_t seed,
                           const std::vector<std::vector<std::string>>& synonyms)
    : dims_(dims), seed_(seed) {
  if (dims_ < 1) throw Error("mock provider: dims must be >= 1");
  for (const auto& group : synonyms) {
    if (group.empty()) continue;
    const std::string head = nfc(group.front());
    for (const auto& text : group) canonical_[nfc(text)] = head;
  }
}

std::vector<float> MockProvider::vector_for(const std::string& text) const {
  std::string key = nfc(text);
  if (auto it = canonical_.find(key); it != canonical_.end()) key = it->second;
  const std::string digest = sha256_hex(key);
  const std::uint64_t text_seed = std::stoull(digest.substr(0, 16), nullptr, 16);
  std::mt19937_64 rng(text_seed ^ seed_);

  std::vector<double> raw(static_cast<std::size_t>(dims_));
  double norm = 0.0;
  for (auto& x : raw) {
    // top 53 bits -> [0,1) -> [-1,1); mt19937_64 output is fully specified
    x = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = static_cast<float>(norm > 0.0 ? raw[i] / norm : 0.0);
  }
  return out;
}

std::vector<std::vector<float>> MockProvider::fetch(const std::vector<std::string>& texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(vector_for(t));
  return out;
}

HttpProvider::HttpProvider(std::string endpoint, RetryPolicy retry,
                           std::chrono::milliseconds timeout, std::string bearer_token)
    : endpoint_(std::move(endpoint)),
      retry_(retry),
      timeout_(timeout),
      token_(std::move(bearer_token)) {}

std::vector<std::vector<float>> HttpProvider::fetch(const std::vector<std::string>& texts) {
  nlohmann::json request;
  request["texts"] = texts;
  const std::string body = request.dump();
  detail::Headers headers;
  if (!token_.empty()) headers.emplace_back("Authorization", "Bearer " + token_);

  std::string last_error;
  for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
    const auto res = detail::http_post_json(endpoint_, body, headers, timeout_);
    if (res.status == 200) {
      try {
        const auto parsed = nlohmann::json::parse(res.body);
        auto vectors = parsed.at("vectors").get<std::vector<std::vector<float>>>();
        if (vectors.size() != texts.size()) {
          throw EmbeddingError("embedding endpoint returned " +
                               std::to_string(vectors.size()) + " vectors for " +
                               std::to_string(texts.size()) + " texts");
        }
        return vectors;
      } catch (const nlohmann::json::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    } else if (res.status == 401 || res.status == 403) {
      throw EmbeddingError("embedding endpoint rejected credentials (HTTP " +
                           std::to_string(res.status) + ")");
    } else if (!detail::retryable_status(res.status)) {
      throw EmbeddingError("embedding endpoint returned HTTP " + std::to_string(res.status));
    } else {
      last_error = res.status == 0 ? res.error : "HTTP " + std::to_string(res.status);
    }
    if (attempt < retry_.max_attempts) {
      std::this_thread::sleep_for(backoff_delay(retry_, attempt));
    }
  }
  throw EmbeddingError("embedding endpoint " + endpoint_ + " unreachable after " +
                       std::to_string(retry_.max_attempts) + " attempts: " + last_error);
}

std::unique_ptr<EmbeddingProvider> make_provider(const EmbeddingProviderConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case ProviderKind::mock:
      return std::make_unique<MockProvider>(cfg.expected_dims, cfg.mock_seed, cfg.synonyms);
    case ProviderKind::http: {
      const char* token = std::getenv(kEmbedTokenEnv);
      return std::make_unique<HttpProvider>(cfg.endpoint, cfg.retry, cfg.timeout,
                                            token != nullptr ? token : "");
    }
    case ProviderKind::cache_only:
      return nullptr;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Cache file

namespace {

constexpr std::array<char, 8> kFileMagic = {'X', 'L', 'C', 'E', 'M', 'B', '0', '1'};
constexpr std::array<char, 8> kIndexMagic = {'X', 'L', 'C', 'I', 'D', 'X', '0', '1'};
constexpr std::size_t kKeyBytes = 32;
constexpr std::size_t kRecordHead = 1 + kKeyBytes + 4;  // tag, key, dims
constexpr std::uint32_t kMaxDims = 1u << 20;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string key_to_raw(const std::string& hex) {
  if (hex.size() != kKeyBytes * 2) throw Error("cache key must be 64 hex digits");
  std::string raw(kKeyBytes, '\0');
  for (std::size_t i = 0; i < kKeyBytes; ++i) {
    raw[i] = static_cast<char>(std::stoi(hex.substr(2 * i, 2), nullptr, 16));
  }
  return raw;
}

std::string raw_to_key(const unsigned char* raw) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(kKeyBytes * 2);
  for (std::size_t i = 0; i < kKeyBytes; ++i) {
    hex.push_back(kHex[raw[i] >> 4]);
    hex.push_back(kHex[raw[i] & 0xF]);
  }
  return hex;
}

std::uint32_t crc(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

bool read_exact(int fd, void* buf, std::size_t n, std::uint64_t offset) {
  auto* p = static_cast<char*>(buf);
  while (n > 0) {
    const ssize_t got = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) return false;
    p += got;
    n -= static_cast<std::size_t>(got);
    offset += static_cast<std::uint64_t>(got);
  }
  return true;
}

void write_exact(int fd, const std::string& data, std::uint64_t offset) {
  const char* p = data.data();
  std::size_t n = data.size();
  while (n > 0) {
    const ssize_t put = ::pwrite(fd, p, n, static_cast<off_t>(offset));
    if (put < 0 && errno == EINTR) continue;
    if (put <= 0) throw IoError(std::string("embedding cache write failed: ") + std::strerror(errno));
    p += put;
    n -= static_cast<std::size_t>(put);
    offset += static_cast<std::uint64_t>(put);
  }
}

std::string encode_record(const std::string& raw_key, const std::vector<float>& values) {
  std::string rec;
  rec.reserve(kRecordHead + values.size() * 4 + 4);
  rec.push_back('R');
  rec += raw_key;
  put_u32(rec, static_cast<std::uint32_t>(values.size()));
  for (float f : values) put_u32(rec, std::bit_cast<std::uint32_t>(f));
  put_u32(rec, crc(reinterpret_cast<const unsigned char*>(rec.data()) + 1, rec.size() - 1));
  return rec;
}

// Reads and checks the record at `offset`; returns its total length, or 0 if
// it is truncated or corrupt.
std::size_t read_record(int fd, std::uint64_t offset, std::uint64_t limit,
                        std::string* key_out, std::vector<float>* values_out) {
  if (offset + kRecordHead > limit) return 0;
  std::array<unsigned char, kRecordHead> head{};
  if (!read_exact(fd, head.data(), head.size(), offset) || head[0] != 'R') return 0;
  const std::uint32_t dims = get_u32(head.data() + 1 + kKeyBytes);
  if (dims == 0 || dims > kMaxDims) return 0;
  const std::size_t total = kRecordHead + std::size_t{dims} * 4 + 4;
  if (offset + total > limit) return 0;
  std::vector<unsigned char> buf(total);
  if (!read_exact(fd, buf.data(), total, offset)) return 0;
  if (crc(buf.data() + 1, total - 5) != get_u32(buf.data() + total - 4)) return 0;
  if (key_out != nullptr) *key_out = raw_to_key(buf.data() + 1);
  if (values_out != nullptr) {
    values_out->resize(dims);
    for (std::uint32_t i = 0; i < dims; ++i) {
      (*values_out)[i] = std::bit_cast<float>(get_u32(buf.data() + kRecordHead + 4 * i));
    }
  }
  return total;
}

}  // namespace

EmbeddingCache::EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) {
  open_or_create();
}

EmbeddingCache::~EmbeddingCache() {
  try {
    flush();
  } catch (...) {
    // Footer can always be rebuilt by a scan on next open.
  }
  if (fd_ >= 0) ::close(fd_);
}

void EmbeddingCache::open_or_create() {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw IoError("cannot open embedding cache " + path_.string() + ": " + std::strerror(errno));
  }
  struct stat st {};
  if (::fstat(fd_, &st) != 0) throw IoError("cannot stat " + path_.string());
  const auto size = static_cast<std::uint64_t>(st.st_size);
  if (size == 0) {
    write_exact(fd_, std::string(kFileMagic.begin(), kFileMagic.end()), 0);
    data_end_ = kFileMagic.size();
    return;
  }
  std::array<char, 8> magic{};
  if (size < magic.size() || !read_exact(fd_, magic.data(), magic.size(), 0) ||
      magic != kFileMagic) {
    throw IoError(path_.string() + " is not an embedding cache file");
  }
  if (!read_footer(size)) {
    rebuilt_ = true;
    scan_records(size);
  }
}

bool EmbeddingCache::read_footer(std::uint64_t file_size) {
  constexpr std::uint64_t kTrailer = 16;
  if (file_size < kFileMagic.size() + 1 + 8 + kTrailer) return false;
  std::array<unsigned char, kTrailer> trailer{};
  if (!read_exact(fd_, trailer.data(), trailer.size(), file_size - kTrailer)) return false;
  if (std::memcmp(trailer.data() + 8, kIndexMagic.data(), kIndexMagic.size()) != 0) {
    return false;
  }
  const std::uint64_t footer_at = get_u64(trailer.data());
  if (footer_at < kFileMagic.size() || footer_at + 9 + kTrailer > file_size) return false;

  std::vector<unsigned char> footer(file_size - kTrailer - footer_at);
  if (!read_exact(fd_, footer.data(), footer.size(), footer_at) || footer[0] != 'I') {
    return false;
  }
  const std::uint64_t count = get_u64(footer.data() + 1);
  if (footer.size() != 9 + count * (kKeyBytes + 8)) return false;

  std::unordered_map<std::string, std::uint64_t> index;
  std::vector<std::string> order;
  const unsigned char* p = footer.data() + 9;
  for (std::uint64_t i = 0; i < count; ++i, p += kKeyBytes + 8) {
    const std::uint64_t offset = get_u64(p + kKeyBytes);
    if (offset < kFileMagic.size() || offset >= footer_at) return false;
    auto key = raw_to_key(p);
    if (index.emplace(key, offset).second) order.push_back(std::move(key));
  }
  index_ = std::move(index);
  order_ = std::move(order);
  data_end_ = footer_at;
  footer_on_disk_ = true;
  return true;
}

void EmbeddingCache::scan_records(std::uint64_t file_size) {
  index_.clear();
  order_.clear();
  std::uint64_t offset = kFileMagic.size();
  std::string key;
  while (offset < file_size) {
    const std::size_t len = read_record(fd_, offset, file_size, &key, nullptr);
    if (len == 0) break;
    if (index_.emplace(key, offset).second) order_.push_back(key);
    offset += len;
  }
  data_end_ = offset;
  // Anything past data_end_ (a stale footer or a torn record) is dropped on
  // the next write.
  footer_on_disk_ = offset < file_size;
  dirty_ = footer_on_disk_;
}

std::optional<EmbeddingVector> EmbeddingCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  EmbeddingVector v;
  std::string stored_key;
  if (read_record(fd_, it->second, data_end_, &stored_key, &v.values) == 0 ||
      stored_key != key) {
    throw IoError("embedding cache record for " + key + " is corrupt");
  }
  return v;
}

bool EmbeddingCache::contains(const std::string& key) const {
  std::shared_lock lock(mutex_);
  return index_.contains(key);
}

void EmbeddingCache::put(const std::string& key, const EmbeddingVector& v) {
  if (v.values.empty()) throw Error("refusing to cache an empty vector");
  const std::string record = encode_record(key_to_raw(key), v.values);
  std::unique_lock lock(mutex_);
  if (index_.contains(key)) return;
  if (footer_on_disk_) {
    if (::ftruncate(fd_, static_cast<off_t>(data_end_)) != 0) {
      throw IoError("cannot truncate embedding cache " + path_.string());
    }
    footer_on_disk_ = false;
  }
  write_exact(fd_, record, data_end_);
  index_.emplace(key, data_end_);
  order_.push_back(key);
  data_end_ += record.size();
  dirty_ = true;
}

void EmbeddingCache::flush() {
  std::unique_lock lock(mutex_);
  if (!dirty_ || fd_ < 0) return;
  std::string footer;
  footer.push_back('I');
  put_u64(footer, order_.size());
  for (const auto& key : order_) {
    footer += key_to_raw(key);
    put_u64(footer, index_.at(key));
  }
  put_u64(footer, data_end_);
  footer.append(kIndexMagic.begin(), kIndexMagic.end());
  if (::ftruncate(fd_, static_cast<off_t>(data_end_)) != 0) {
    throw IoError("cannot truncate embedding cache " + path_.string());
  }
  write_exact(fd_, footer, data_end_);
  ::fsync(fd_);
  footer_on_disk_ = true;
  dirty_ = false;
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return index_.size();
}

std::vector<std::string> EmbeddingCache::keys() const {
  std::shared_lock lock(mutex_);
  return order_;
}

// ---------------------------------------------------------------------------
// Embedder

Embedder::Embedder(EmbeddingProviderConfig cfg, EmbeddingCache& cache,
                   std::unique_ptr<EmbeddingProvider> provider)
    : cfg_(std::move(cfg)), cache_(cache), provider_(std::move(provider)) {
  cfg_.validate();
  if (cfg_.kind != ProviderKind::cache_only && provider_ == nullptr) {
    throw Error("embedder: provider required unless running cache-only");
  }
}

EmbedStats Embedder::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

std::vector<std::vector<float>> Embedder::fetch_checked(const std::vector<std::string>& texts) {
  auto vectors = provider_->fetch(texts);
  if (vectors.size() != texts.size()) {
    throw EmbeddingError("provider returned " + std::to_string(vectors.size()) +
                         " vectors for " + std::to_string(texts.size()) + " texts");
  }
  for (const auto& v : vectors) {
    if (v.size() != static_cast<std::size_t>(cfg_.expected_dims)) {
      throw EmbeddingError("dimension mismatch: provider returned " + std::to_string(v.size()) +
                           " dims, expected " + std::to_string(cfg_.expected_dims));
    }
    for (float f : v) {
      if (!std::isfinite(f)) throw EmbeddingError("provider returned a non-finite value");
    }
  }
  return vectors;
}

std::vector<EmbeddingVector> Embedder::embed_batch(const std::vector<std::string>& texts) {
  std::vector<std::string> normalized;
  std::vector<std::string> keys;
  normalized.reserve(texts.size());
  keys.reserve(texts.size());
  for (const auto& t : texts) {
    normalized.push_back(nfc(t));
    keys.push_back(sha256_hex(normalized.back()));
  }

  std::unordered_map<std::string, EmbeddingVector> resolved;
  std::unordered_map<std::string, std::shared_future<EmbeddingVector>> waiting;
  std::vector<std::string> mine_keys;
  std::vector<std::string> mine_texts;
  std::vector<std::promise<EmbeddingVector>> mine_promises;
  std::unordered_set<std::string> seen;

  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto& key = keys[i];
    if (!seen.insert(key).second) continue;
    if (auto hit = cache_.get(key)) {
      resolved.emplace(key, std::move(*hit));
      std::lock_guard lock(mutex_);
      ++stats_.cache_hits;
      continue;
    }
    std::lock_guard lock(mutex_);
    if (auto it = in_flight_.find(key); it != in_flight_.end()) {
      waiting.emplace(key, it->second);
      continue;
    }
    // A concurrent fetch may have finished between the cache probe and here.
    if (auto hit = cache_.get(key)) {
      resolved.emplace(key, std::move(*hit));
      ++stats_.cache_hits;
      continue;
    }
    if (provider_ == nullptr) {
      throw EmbeddingError("cache miss in cache-only mode for text hash " + key);
    }
    auto& promise = mine_promises.emplace_back();
    in_flight_.emplace(key, promise.get_future().share());
    mine_keys.push_back(key);
    mine_texts.push_back(normalized[i]);
  }

  auto release = [&](std::size_t from) {
    std::lock_guard lock(mutex_);
    for (std::size_t k = from; k < mine_keys.size(); ++k) in_flight_.erase(mine_keys[k]);
  };

  const auto batch = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < mine_keys.size(); start += batch) {
    const std::size_t end = std::min(start + batch, mine_keys.size());
    const std::vector<std::string> chunk(mine_texts.begin() + start, mine_texts.begin() + end);
    std::vector<std::vector<float>> vectors;
    try {
      vectors = fetch_checked(chunk);
    } catch (...) {
      for (std::size_t k = start; k < mine_keys.size(); ++k) {
        mine_promises[k].set_exception(std::current_exception());
      }
      release(start);
      cache_.flush();
      throw;
    }
    {
      std::lock_guard lock(mutex_);
      ++stats_.provider_calls;
      stats_.texts_fetched += chunk.size();
    }
    for (std::size_t k = start; k < end; ++k) {
      EmbeddingVector v{std::move(vectors[k - start])};
      cache_.put(mine_keys[k], v);
      mine_promises[k].set_value(v);
      resolved.emplace(mine_keys[k], std::move(v));
    }
    {
      std::lock_guard lock(mutex_);
      for (std::size_t k = start; k < end; ++k) in_flight_.erase(mine_keys[k]);
    }
  }
  if (!mine_keys.empty()) cache_.flush();

  for (auto& [key, future] : waiting) resolved.emplace(key, future.get());

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& key : keys) out.push_back(resolved.at(key));
  return out;
}

}  // namespace xlc
