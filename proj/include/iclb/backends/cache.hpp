#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "iclb/backend.hpp"
#include "iclb/hash.hpp"

namespace iclb {

/// Append-only response store keyed by request hash. Lines that fail to parse
/// are ignored on load; a later record for the same key wins.
class ResponseCache {
 public:
  ResponseCache() = default;

  explicit ResponseCache(std::filesystem::path file) : path_(std::move(file)) {
    if (path_.empty()) return;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto key = j.at("key_hash_hex").get<std::string>();
        entries_[key] = j.at("logits").get<ClassLogits>();
      } catch (const nlohmann::json::exception&) {
        ++corrupt_;
      }
    }
    out_.open(path_, std::ios::app);
    require(out_.good(), ErrorCode::io, "cannot open cache file " + path_.string());
  }

  /// Entry for `key` if present and shaped for `num_classes`; anything else is a miss.
  std::optional<ClassLogits> get(const std::string& key, int num_classes) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    const auto& l = it->second;
    bool valid = static_cast<int>(l.scores.size()) == num_classes;
    for (double s : l.scores) valid = valid && !std::isnan(s);
    if (!valid) return std::nullopt;
    return l;
  }

  void put(const std::string& key, const ClassLogits& logits) {
    std::lock_guard lock(mu_);
    entries_[key] = logits;
    if (!out_.is_open()) return;
    nlohmann::json rec{{"key_hash_hex", key}, {"logits", logits}, {"source", logits.source},
                       {"timestamp", timestamp()}};
    out_ << rec.dump() << '\n';
    out_.flush();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }
  std::size_t corrupt_lines() const { return corrupt_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  static std::string timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, ClassLogits> entries_;
  std::ofstream out_;
  std::size_t corrupt_ = 0;
};

/// Transparent caching wrapper. Concurrent requests for the same key share a
/// single upstream call.
class CachedBackend : public Backend {
 public:
  CachedBackend(BackendPtr inner, std::shared_ptr<ResponseCache> cache)
      : inner_(std::move(inner)), cache_(std::move(cache)) {}

  BackendKind kind() const override { return inner_->kind(); }
  ProbeMode mode() const override { return inner_->mode(); }
  std::size_t max_in_flight() const override { return inner_->max_in_flight(); }
  bool batches_natively() const override { return inner_->batches_natively(); }
  std::string identity() const override { return inner_->identity(); }
  std::string request_bytes(const ProbeContext& ctx, const QueryPoint& q) const override {
    return inner_->request_bytes(ctx, q);
  }

  std::string key(const ProbeContext& ctx, const QueryPoint& q) const {
    Fingerprint f;
    f.add(inner_->identity()).add(inner_->request_bytes(ctx, q));
    for (const auto& k : ctx.labels.keys()) f.add(k);
    return f.hex();
  }

  ClassLogits fetch(const ProbeContext& ctx, const QueryPoint& q) const override {
    const std::string k = key(ctx, q);
    std::unique_lock lock(mu_);
    if (auto hit = cache_->get(k, ctx.num_classes)) return *hit;
    if (auto it = pending_.find(k); it != pending_.end()) {
      auto fut = it->second;
      lock.unlock();
      return fut.get();
    }
    std::promise<ClassLogits> promise;
    pending_.emplace(k, promise.get_future().share());
    lock.unlock();
    try {
      ClassLogits l = inner_->fetch(ctx, q);
      ++upstream_;
      cache_->put(k, l);
      promise.set_value(l);
      finish(k);
      return l;
    } catch (...) {
      promise.set_exception(std::current_exception());
      finish(k);
      throw;
    }
  }

  std::vector<FetchOutcome> fetch_many(const ProbeContext& ctx, std::span<const QueryPoint> qs) const override {
    std::vector<FetchOutcome> out(qs.size());
    std::vector<std::string> keys(qs.size());
    std::map<std::string, std::vector<std::size_t>> misses;
    std::vector<QueryPoint> unique;
    std::vector<std::string> unique_keys;
    for (std::size_t i = 0; i < qs.size(); ++i) {
      keys[i] = key(ctx, qs[i]);
      if (auto hit = cache_->get(keys[i], ctx.num_classes)) {
        out[i] = FetchOutcome::ok(std::move(*hit));
        continue;
      }
      auto [it, fresh] = misses.try_emplace(keys[i]);
      if (fresh) {
        unique.push_back(qs[i]);
        unique_keys.push_back(keys[i]);
      }
      it->second.push_back(i);
    }
    if (unique.empty()) return out;
    auto fetched = inner_->fetch_many(ctx, unique);
    upstream_ += unique.size();
    for (std::size_t u = 0; u < unique.size(); ++u) {
      if (fetched[u].logits) cache_->put(unique_keys[u], *fetched[u].logits);
      for (std::size_t i : misses[unique_keys[u]]) out[i] = fetched[u];
    }
    return out;
  }

  std::size_t upstream_calls() const { return upstream_.load(); }

 private:
  void finish(const std::string& k) const {
    std::lock_guard lock(mu_);
    pending_.erase(k);
  }

  BackendPtr inner_;
  std::shared_ptr<ResponseCache> cache_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, std::shared_future<ClassLogits>> pending_;
  mutable std::atomic<std::size_t> upstream_{0};
};

inline std::shared_ptr<const CachedBackend> cached(BackendPtr inner, std::shared_ptr<ResponseCache> cache) {
  return std::make_shared<const CachedBackend>(std::move(inner), std::move(cache));
}

}  // namespace iclb
