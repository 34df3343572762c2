#pragma once

// Shared error types, label conventions, and the class-id configuration
// used by every other header.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace evpan {

// Bad semantic content (dimension mismatch, out-of-range ids, invalid flags).
// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / byte-level failures (missing file, truncated payload, bad
// magic). The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Sentinel for pixels excluded from evaluation.
inline constexpr std::uint32_t kVoidLabel = 0xFFFFFFFFu;

// Panoptic encoding: encoded = class_id * kPanopticOffset + instance_index.
// Stuff pixels carry instance_index 0, thing pixels 1..n.
inline constexpr std::uint32_t kPanopticOffset = 1000;

// Stuff/thing split over semantic class ids. Ids must be unique and the two
// groups disjoint; together they enumerate every class the tools know about.
struct ClassConfig {
  std::vector<std::uint32_t> stuff;
  std::vector<std::uint32_t> thing;

  ClassConfig() = default;
  ClassConfig(std::vector<std::uint32_t> stuff_ids, std::vector<std::uint32_t> thing_ids)
      : stuff(std::move(stuff_ids)), thing(std::move(thing_ids)) {
    validate();
  }

  void validate() const {
    std::vector<std::uint32_t> all;
    all.reserve(stuff.size() + thing.size());
    all.insert(all.end(), stuff.begin(), stuff.end());
    all.insert(all.end(), thing.begin(), thing.end());
    if (all.empty()) throw ValidationError("class config: no classes configured");
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
      throw ValidationError("class config: duplicate class id across stuff/thing lists");
  }

  bool is_stuff(std::uint32_t id) const {
    return std::find(stuff.begin(), stuff.end(), id) != stuff.end();
  }
  bool is_thing(std::uint32_t id) const {
    return std::find(thing.begin(), thing.end(), id) != thing.end();
  }
  bool is_known(std::uint32_t id) const { return is_stuff(id) || is_thing(id); }

  // Dense class-channel count: ids are expected to live in [0, num_classes).
  std::size_t num_classes() const {
    std::uint32_t max_id = 0;
    for (std::uint32_t id : stuff) max_id = std::max(max_id, id);
    for (std::uint32_t id : thing) max_id = std::max(max_id, id);
    return static_cast<std::size_t>(max_id) + 1;
  }

  // All configured ids in ascending order.
  std::vector<std::uint32_t> all_ids() const {
    std::vector<std::uint32_t> ids;
    ids.reserve(stuff.size() + thing.size());
    ids.insert(ids.end(), stuff.begin(), stuff.end());
    ids.insert(ids.end(), thing.begin(), thing.end());
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  bool operator==(const ClassConfig& other) const = default;
};

// Worker count for per-image parallel loops. EVPAN_THREADS, when set to a
// positive integer, overrides the hardware count.
inline unsigned thread_budget() {
  unsigned budget = std::thread::hardware_concurrency();
  if (budget == 0) budget = 1;
  if (const char* env = std::getenv("EVPAN_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) budget = static_cast<unsigned>(v);
  }
  return budget;
}

// Runs fn(i) for i in [0, n) on up to thread_budget() workers. Results must
// be written to preallocated, index-disjoint slots; the first exception is
// rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(thread_budget(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace evpan
